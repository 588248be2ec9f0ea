"""Priority work queue with in-place updates, cancellation and versioning.

The queue hands out the pending item of maximal priority; ties break by
ascending node address (level, ix, iy, iz) then timestep, which makes
schedules replayable.  Entries whose spec version predates the queue's
current version can never be popped: bumping the version cancels every
pending item atomically.
"""

from __future__ import annotations

import heapq
import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from ..model import CutDelta, NodeId
from ..protocol import ResultKey


class VersionError(Exception):
    """Version did not increase monotonically; protocol-level offence."""


class ItemState(Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    CANCELLED = "cancelled"


@dataclass
class WorkItem:
    key: ResultKey
    priority: float
    state: ItemState = ItemState.PENDING
    suppressed: bool = False  # removed from the cut while running
    payload: Any = None  # opaque context (the SpecSet for extraction)
    _entry: list | None = field(default=None, repr=False)


_STALE = object()


class WorkQueue:
    """Linearizable multi-producer / multi-consumer priority queue."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._nonempty = threading.Condition(self._lock)
        self._heap: list[list] = []
        self._items: dict[ResultKey, WorkItem] = {}
        self._pending = 0
        self._running = 0
        self._seq = itertools.count()
        self._version = 0
        self._shutdown = False
        self.ignored_deltas = 0

    @property
    def current_version(self) -> int:
        return self._version

    def _heap_entry(self, item: WorkItem) -> list:
        node = item.key.node
        return [
            -item.priority,
            node.level,
            node.ix,
            node.iy,
            node.iz,
            item.key.timestep,
            next(self._seq),
            item,
        ]

    def _push(self, item: WorkItem) -> None:
        entry = self._heap_entry(item)
        item._entry = entry
        heapq.heappush(self._heap, entry)

    def _add_locked(self, key: ResultKey, priority: float, payload: Any) -> None:
        item = self._items.get(key)
        if item is not None and item.state in (ItemState.PENDING, ItemState.RUNNING):
            if item.state is ItemState.PENDING:
                self._reprioritize_locked(item, priority)
            return
        item = WorkItem(key=key, priority=priority, payload=payload)
        self._items[key] = item
        self._push(item)
        self._pending += 1

    def _reprioritize_locked(self, item: WorkItem, priority: float) -> None:
        if item._entry is not None:
            item._entry[-1] = _STALE
        item.priority = priority
        self._push(item)

    def _remove_locked(self, key: ResultKey) -> None:
        item = self._items.get(key)
        if item is None:
            return
        if item.state is ItemState.PENDING:
            item.state = ItemState.CANCELLED
            if item._entry is not None:
                item._entry[-1] = _STALE
                item._entry = None
            self._pending -= 1
            del self._items[key]
        elif item.state is ItemState.RUNNING:
            item.suppressed = True

    def add(self, key: ResultKey, priority: float, payload: Any = None) -> None:
        """Enqueue or, if the key is already pending, update its priority."""
        with self._lock:
            if key.spec_version != self._version:
                self.ignored_deltas += 1
                return
            self._add_locked(key, priority, payload)
            self._nonempty.notify()

    def reprioritize(self, key: ResultKey, priority: float) -> None:
        with self._lock:
            item = self._items.get(key)
            if item is not None and item.state is ItemState.PENDING:
                self._reprioritize_locked(item, priority)

    def remove(self, key: ResultKey) -> None:
        """Cancel a pending item; a running one finishes but is suppressed."""
        with self._lock:
            self._remove_locked(key)

    def apply_cut_delta(
        self, delta: CutDelta, spec_version: int, timestep: int, payload: Any = None
    ) -> bool:
        """Apply one delta atomically; stale versions are ignored and counted.

        Atomicity matters: a worker blocked in :meth:`pop` wakes only after
        the whole delta landed, so the first pop already sees every added
        node and schedules strictly by priority.
        """
        with self._lock:
            if spec_version != self._version:
                self.ignored_deltas += 1
                return False
            for node, prio in delta.added:
                self._add_locked(ResultKey(spec_version, timestep, node), prio, payload)
            for node in delta.removed:
                self._remove_locked(ResultKey(spec_version, timestep, node))
            for node, prio in delta.reprioritized:
                item = self._items.get(ResultKey(spec_version, timestep, node))
                if item is not None and item.state is ItemState.PENDING:
                    self._reprioritize_locked(item, priority=prio)
            self._nonempty.notify_all()
            return True

    def abort_all(self, new_version: int) -> list[WorkItem]:
        """Cancel all pending work and advance the version.

        Returns the cancelled items.  Raises VersionError unless
        ``new_version`` is strictly greater than the current version.
        """
        with self._lock:
            if new_version <= self._version:
                raise VersionError(
                    f"version must increase: {new_version} <= {self._version}"
                )
            cancelled = []
            for key in list(self._items):
                item = self._items[key]
                if item.state is ItemState.PENDING:
                    item.state = ItemState.CANCELLED
                    if item._entry is not None:
                        item._entry[-1] = _STALE
                        item._entry = None
                    cancelled.append(item)
                    del self._items[key]
                elif item.state is ItemState.RUNNING:
                    item.suppressed = True
            self._pending -= len(cancelled)
            self._version = new_version
            return cancelled

    def pop(self, timeout: float | None = None) -> Optional[WorkItem]:
        """Take the highest-priority pending item; None on shutdown/timeout."""
        with self._lock:
            while True:
                while self._heap:
                    entry = self._heap[0]
                    if entry[-1] is _STALE:
                        heapq.heappop(self._heap)
                        continue
                    item: WorkItem = entry[-1]
                    if item.key.spec_version != self._version:
                        # cannot happen (aborts cancel eagerly), kept as a guard
                        heapq.heappop(self._heap)
                        continue
                    heapq.heappop(self._heap)
                    item._entry = None
                    item.state = ItemState.RUNNING
                    self._pending -= 1
                    self._running += 1
                    return item
                if self._shutdown:
                    return None
                if not self._nonempty.wait(timeout=timeout):
                    return None

    def mark_done(self, item: WorkItem) -> None:
        with self._lock:
            if item.state is ItemState.RUNNING:
                item.state = ItemState.DONE
                self._running -= 1
                self._items.pop(item.key, None)

    def shutdown(self) -> None:
        with self._lock:
            self._shutdown = True
            self._nonempty.notify_all()

    def counts(self) -> tuple[int, int]:
        with self._lock:
            return self._pending, self._running
