"""Byte-bounded LRU cache for node payloads.

Shared by all workers: payloads depend only on (timestep, node), never on
the sub-volume configuration, so one cache serves every session.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable

from ..model import BlockData, NodeId

CacheKey = tuple[int, NodeId]  # (timestep, node)


class BlockCache:
    def __init__(self, capacity_bytes: int):
        if capacity_bytes < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity_bytes
        self._lock = threading.Lock()
        self._entries: "OrderedDict[CacheKey, BlockData]" = OrderedDict()
        self._resident = 0
        self.hits = 0
        self.misses = 0

    def get(self, key: CacheKey) -> BlockData | None:
        with self._lock:
            block = self._entries.get(key)
            if block is None:
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return block

    def put(self, key: CacheKey, block: BlockData) -> None:
        size = block.nbytes()
        if size > self.capacity:
            return  # larger than the whole budget: serve uncached
        with self._lock:
            old = self._entries.pop(key, None)
            if old is not None:
                self._resident -= old.nbytes()
            self._entries[key] = block
            self._resident += size
            while self._resident > self.capacity:
                _, evicted = self._entries.popitem(last=False)
                self._resident -= evicted.nbytes()

    def get_or_load(self, key: CacheKey, loader: Callable[[], BlockData]) -> BlockData:
        """Cached block or ``loader()``; the load runs outside the lock."""
        block = self.get(key)
        if block is not None:
            return block
        block = loader()
        self.put(key, block)
        return block

    @property
    def resident_bytes(self) -> int:
        with self._lock:
            return self._resident

    def counters(self) -> tuple[int, int]:
        with self._lock:
            return self.hits, self.misses
