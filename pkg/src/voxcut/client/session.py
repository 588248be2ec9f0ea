"""Streaming client: cut upkeep, result application, stale-data policy.

Render-state machine per cut node:

* a node entering the cut is ``EMPTY`` and renders nothing until its
  first complete result arrives,
* once ``FRESH``, a configuration or timestep change demotes it to
  ``STALE``: it keeps showing the old meshes until the replacement for
  the new version lands,
* leaving the cut discards meshes and state unconditionally.

Every parameter change (sub-volumes or timestep) bumps the spec version,
announces it with SET_SPEC and re-requests the whole cut; stale results
are recognized by their version and dropped on arrival.
"""

from __future__ import annotations

import select
import socket
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .. import protocol
from ..model import CameraState, CutDelta, NodeId, ResultMesh, SpecSet, SubVolumeSpec
from ..protocol import FrameType, ProtocolError
from .cut import DEFAULT_SPLIT_ANGLE, CutPlanner


class RenderState(Enum):
    EMPTY = "empty"
    STALE = "stale"
    FRESH = "fresh"


@dataclass
class NodeRender:
    priority: float
    state: RenderState = RenderState.EMPTY
    meshes: list[ResultMesh] = field(default_factory=list)


def advect(mesh: ResultMesh, s: float, dt_sim: float) -> np.ndarray:
    """Display positions moved along the wind by the fraction ``s`` of a step.

    Forward Euler on the per-vertex velocities; extraction geometry is
    untouched.  Without velocities this is the identity.
    """
    if mesh.velocities is None or mesh.nverts == 0:
        return mesh.positions
    return mesh.positions + mesh.velocities * np.float32(s * dt_sim)


@dataclass
class SessionCounters:
    bytes_received: int = 0
    results: int = 0
    node_done: int = 0
    dropped_stale: int = 0
    dropped_unknown: int = 0
    abort_acks: int = 0
    errors: int = 0
    deltas_sent: int = 0


class ClientSession:
    """Blocking-socket client of the extraction service."""

    def __init__(
        self,
        address: tuple[str, int],
        split_angle: float = DEFAULT_SPLIT_ANGLE,
        timeout: float = 10.0,
    ):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.sock.setblocking(False)
        self._buf = bytearray()
        self.counters = SessionCounters()
        self.version = 0
        self.timestep = 0
        self.subvolumes: tuple[SubVolumeSpec, ...] = ()
        self.nodes: dict[NodeId, NodeRender] = {}
        self._staged: dict[NodeId, list[ResultMesh]] = {}
        self.last_stats: tuple[int, int, int, int] | None = None
        self.last_ack: int | None = None
        self.errors: list[tuple[int, str]] = []
        self.done_log: list[protocol.ResultKey] = []

        self._send(protocol.encode_hello())
        ftype, payload = self._recv_blocking(timeout)
        if ftype != FrameType.DATASET_INFO:
            raise ProtocolError(f"expected DATASET_INFO, got 0x{ftype:02x}")
        self.meta = protocol.decode_dataset_info(payload)
        self.planner = CutPlanner(self.meta, split_angle)

    # ---- sending --------------------------------------------------------

    def _send(self, frame: bytes) -> None:
        self.sock.setblocking(True)
        try:
            self.sock.sendall(frame)
        finally:
            self.sock.setblocking(False)

    def open_dataset(self, dataset_id: str) -> None:
        self._send(protocol.encode_open(dataset_id))

    def set_subvolumes(self, subvolumes: list[SubVolumeSpec] | tuple) -> int:
        self.subvolumes = tuple(subvolumes)
        return self._bump_and_rerequest()

    def set_timestep(self, timestep: int) -> int:
        """A timestep change is a full epoch change, like editing the spec."""
        self.timestep = timestep
        return self._bump_and_rerequest()

    def _bump_and_rerequest(self) -> int:
        self.version += 1
        specset = SpecSet(self.version, self.subvolumes)
        self._send(protocol.encode_set_spec(specset, self.meta.fields))
        self._staged.clear()
        for render in self.nodes.values():
            if render.state is RenderState.FRESH:
                render.state = RenderState.STALE
        if self.nodes:
            delta = CutDelta(
                added=tuple((n, r.priority) for n, r in self.nodes.items())
            )
            self._send(protocol.encode_cut_delta(self.version, self.timestep, delta))
            self.counters.deltas_sent += 1
        return self.version

    def update_camera(self, camera: CameraState) -> CutDelta:
        """Refresh the cut for this frame and forward the delta if non-empty."""
        delta = self.planner.update_cut(camera)
        for node, prio in delta.added:
            self.nodes[node] = NodeRender(priority=prio)
        for node in delta.removed:
            self.nodes.pop(node, None)
            self._staged.pop(node, None)
        for node, prio in delta.reprioritized:
            if node in self.nodes:
                self.nodes[node].priority = prio
        if not delta.empty:
            self._send(protocol.encode_cut_delta(self.version, self.timestep, delta))
            self.counters.deltas_sent += 1
        return delta

    # ---- receiving -------------------------------------------------------

    def _recv_blocking(self, timeout: float) -> tuple[int, bytes]:
        import time

        deadline = time.monotonic() + timeout
        while True:
            got = protocol.split_frame(self._buf)
            if got is not None:
                ftype, payload, used = got
                del self._buf[:used]
                self.counters.bytes_received += used
                return ftype, payload
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no frame within timeout")
            ready, _, _ = select.select([self.sock], [], [], remaining)
            if ready:
                chunk = self.sock.recv(1 << 20)
                if not chunk:
                    raise ConnectionError("server closed the connection")
                self._buf += chunk

    def poll(self, max_frames: int | None = None, wait: float = 0.0) -> int:
        """Apply buffered frames; returns how many were handled."""
        handled = 0
        while max_frames is None or handled < max_frames:
            got = protocol.split_frame(self._buf)
            if got is None:
                ready, _, _ = select.select([self.sock], [], [], wait)
                wait = 0.0
                if not ready:
                    break
                chunk = self.sock.recv(1 << 20)
                if not chunk:
                    raise ConnectionError("server closed the connection")
                self._buf += chunk
                continue
            ftype, payload, used = got
            del self._buf[:used]
            self.counters.bytes_received += used
            self._apply_frame(ftype, payload)
            handled += 1
        return handled

    def _apply_frame(self, ftype: int, payload: bytes) -> None:
        if ftype == FrameType.RESULT_MESH:
            mesh = protocol.decode_result_mesh(payload, self.meta.fields)
            self.counters.results += 1
            if mesh.spec_version != self.version:
                self.counters.dropped_stale += 1
                return
            if mesh.node not in self.nodes:
                self.counters.dropped_unknown += 1
                return
            self._staged.setdefault(mesh.node, []).append(mesh)
        elif ftype == FrameType.NODE_DONE:
            key = protocol.decode_node_done(payload)
            self.counters.node_done += 1
            if key.spec_version != self.version:
                self.counters.dropped_stale += 1
                return
            render = self.nodes.get(key.node)
            if render is None:
                self.counters.dropped_unknown += 1
                self._staged.pop(key.node, None)
                return
            render.meshes = self._staged.pop(key.node, [])
            render.state = RenderState.FRESH
            self.done_log.append(key)
        elif ftype == FrameType.ABORT_ACK:
            self.last_ack = protocol.decode_abort_ack(payload)
            self.counters.abort_acks += 1
        elif ftype == FrameType.STATS:
            self.last_stats = protocol.decode_stats(payload)
        elif ftype == FrameType.ERROR:
            self.errors.append(protocol.decode_error(payload))
            self.counters.errors += 1
        elif ftype == FrameType.DATASET_INFO:
            pass  # re-OPEN acknowledgement
        else:
            raise ProtocolError(f"unexpected frame type 0x{ftype:02x}")

    # ---- queries ----------------------------------------------------------

    def state_counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in RenderState}
        for render in self.nodes.values():
            out[render.state.value] += 1
        return out

    def all_fresh(self) -> bool:
        return all(r.state is RenderState.FRESH for r in self.nodes.values())

    def visible_triangles(self) -> int:
        """Triangles a renderer would draw now (fresh and stale meshes)."""
        return sum(
            m.ntris
            for r in self.nodes.values()
            if r.state is not RenderState.EMPTY
            for m in r.meshes
        )

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
