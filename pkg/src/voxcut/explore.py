"""Headless scripted exploration: the benchmark harness for the service.

Replays camera keyframes and configuration changes against a live
backend at a fixed virtual frame rate, while recording how the scene
converges.  The report separates three kinds of data: ``deterministic``
fields depend only on the script, ``observed`` fields additionally on
result arrival order, and ``timing`` on the wall clock.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import ClientSession
from .model import CameraState, Limit, NodeId, SubVolumeSpec, node_bbox


def _lerp(a, b, t: float):
    return tuple(x + (y - x) * t for x, y in zip(a, b))


@dataclass(frozen=True)
class CameraKey:
    time: float
    camera: CameraState


@dataclass(frozen=True)
class SpecEvent:
    time: float
    subvolumes: tuple[SubVolumeSpec, ...]


@dataclass(frozen=True)
class TimestepEvent:
    time: float
    timestep: int


@dataclass
class ExploreScript:
    dataset_id: str
    camera_keys: list[CameraKey]
    spec_events: list[SpecEvent] = field(default_factory=list)
    timestep_events: list[TimestepEvent] = field(default_factory=list)
    duration: float = 1.0
    fps: float = 20.0
    settle: float = 30.0
    split_angle: float = 0.05
    report_path: str | None = None

    def __post_init__(self) -> None:
        if not self.camera_keys:
            raise ValueError("need at least one camera keyframe")
        for seq_name, seq in (
            ("camera", self.camera_keys),
            ("specs", self.spec_events),
            ("timesteps", self.timestep_events),
        ):
            times = [e.time for e in seq]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError(f"{seq_name} keyframe times must strictly increase")

    def camera_at(self, t: float) -> CameraState:
        keys = self.camera_keys
        if t <= keys[0].time:
            return keys[0].camera
        if t >= keys[-1].time:
            return keys[-1].camera
        for a, b in zip(keys, keys[1:]):
            if a.time <= t <= b.time:
                f = (t - a.time) / (b.time - a.time)
                ca, cb = a.camera, b.camera
                return CameraState(
                    position=_lerp(ca.position, cb.position, f),
                    forward=_lerp(ca.forward, cb.forward, f),
                    up=_lerp(ca.up, cb.up, f),
                    vertical_fov=ca.vertical_fov + (cb.vertical_fov - ca.vertical_fov) * f,
                    aspect=ca.aspect,
                    near=ca.near,
                    far=ca.far,
                )
        return keys[-1].camera

    @classmethod
    def from_json(cls, doc: dict) -> "ExploreScript":
        def camera(cdoc: dict) -> CameraState:
            return CameraState(
                position=tuple(cdoc["position"]),
                forward=tuple(cdoc["forward"]),
                up=tuple(cdoc.get("up", (0.0, 0.0, 1.0))),
                vertical_fov=cdoc.get("fov", math.radians(60)),
                aspect=cdoc.get("aspect", 16 / 9),
                near=cdoc.get("near", 0.01),
                far=cdoc.get("far", 1e6),
            )

        def subvolume(sdoc: dict) -> SubVolumeSpec:
            return SubVolumeSpec(
                sdoc["id"],
                tuple(
                    Limit(l["field"], l["lower"], l["upper"]) for l in sdoc["limits"]
                ),
            )

        return cls(
            dataset_id=doc.get("dataset", ""),
            camera_keys=[CameraKey(c["time"], camera(c)) for c in doc["camera"]],
            spec_events=[
                SpecEvent(s["time"], tuple(subvolume(sv) for sv in s["subvolumes"]))
                for s in doc.get("specs", [])
            ],
            timestep_events=[
                TimestepEvent(t["time"], t["timestep"]) for t in doc.get("timesteps", [])
            ],
            duration=doc.get("duration", 1.0),
            fps=doc.get("fps", 20.0),
            settle=doc.get("settle", 30.0),
            split_angle=doc.get("theta_split", 0.05),
            report_path=doc.get("report"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExploreScript":
        return cls.from_json(json.loads(Path(path).read_text()))


def _node_distance(node: NodeId, session: ClientSession, camera: CameraState) -> float:
    mins, maxs = node_bbox(node, session.meta)
    center = tuple((a + b) * 0.5 for a, b in zip(mins, maxs))
    return math.dist(camera.position, center)


def run_explore(script: ExploreScript, address: tuple[str, int]) -> dict:
    """Drive the script against a backend and return the report dict."""
    t_start = time.monotonic()
    session = ClientSession(address, split_angle=script.split_angle)
    if script.dataset_id:
        session.open_dataset(script.dataset_id)

    frame_dt = 1.0 / script.fps
    nframes = max(1, int(round(script.duration * script.fps)))
    spec_iter = iter(script.spec_events)
    step_iter = iter(script.timestep_events)
    next_spec = next(spec_iter, None)
    next_step = next(step_iter, None)

    request_frame: dict[NodeId, int] = {}
    request_distance: dict[NodeId, float] = {}
    fresh_frames: list[int] = []
    per_frame_new_requests: list[int] = []
    spec_changes = 0
    camera = script.camera_at(0.0)
    done_seen = 0
    completion: list[dict] = []

    def drain(wait: float) -> None:
        nonlocal done_seen
        session.poll(wait=wait)
        while done_seen < len(session.done_log):
            key = session.done_log[done_seen]
            done_seen += 1
            completion.append(
                {
                    "node": [key.node.level, key.node.ix, key.node.iy, key.node.iz],
                    "timestep": key.timestep,
                    "version": key.spec_version,
                    "distance": _node_distance(key.node, session, camera),
                }
            )
            if key.node in request_frame:
                fresh_frames.append(frame_index - request_frame.pop(key.node))

    connected = True
    frame_index = 0
    settle_frames = 0
    try:
        for frame_index in range(nframes):
            tau = frame_index * frame_dt
            while next_spec is not None and next_spec.time <= tau:
                session.set_subvolumes(next_spec.subvolumes)
                spec_changes += 1
                request_frame.update({n: frame_index for n in session.nodes})
                next_spec = next(spec_iter, None)
            while next_step is not None and next_step.time <= tau:
                session.set_timestep(next_step.timestep)
                spec_changes += 1
                request_frame.update({n: frame_index for n in session.nodes})
                next_step = next(step_iter, None)
            camera = script.camera_at(tau)
            delta = session.update_camera(camera)
            per_frame_new_requests.append(len(delta.added))
            for node, _prio in delta.added:
                request_frame[node] = frame_index
                request_distance[node] = _node_distance(node, session, camera)
            drain(wait=frame_dt)

        deadline = time.monotonic() + script.settle
        while not session.all_fresh() and time.monotonic() < deadline:
            drain(wait=frame_dt)
            settle_frames += 1
    except (ConnectionError, OSError):
        connected = False  # partial report, flagged below
    wall = time.monotonic() - t_start

    states = session.state_counts()
    ff = np.asarray(fresh_frames, dtype=np.float64)
    report = {
        "schema": "voxcut-explore-report/1",
        "deterministic": {
            "frames": nframes,
            "fps": script.fps,
            "split_angle": script.split_angle,
            "spec_changes": spec_changes,
            "per_frame_new_requests": per_frame_new_requests,
            "final_cut_size": len(session.nodes),
        },
        "observed": {
            "connected": connected,
            "bytes_received": session.counters.bytes_received,
            "results": session.counters.results,
            "node_done": session.counters.node_done,
            "abort_acks": session.counters.abort_acks,
            "dropped_stale": session.counters.dropped_stale,
            "dropped_unknown": session.counters.dropped_unknown,
            "errors": session.counters.errors,
            "final_triangles": session.visible_triangles(),
            "state_counts": states,
            "all_fresh": session.all_fresh(),
            "completion_order": completion,
            "request_distances": {
                f"{n.level},{n.ix},{n.iy},{n.iz}": d for n, d in request_distance.items()
            },
        },
        "timing": {
            "wall_seconds": wall,
            "settle_frames": settle_frames,
            "frames_to_fresh_median": float(np.median(ff)) if ff.size else None,
            "frames_to_fresh_max": float(ff.max()) if ff.size else None,
        },
    }
    session.close()
    if script.report_path:
        Path(script.report_path).write_text(json.dumps(report, indent=1, sort_keys=True))
    return report
