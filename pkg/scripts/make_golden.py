#!/usr/bin/env python3
"""Generate the protocol/resolve/cut golden corpus for the web viewer tests.

Everything here is deterministic; re-running must reproduce identical
bytes.  The viewer's vitest suite consumes these artifacts, so the two
implementations are pinned to each other through files rather than a
shared runtime.
"""

from __future__ import annotations

import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

from voxcut import protocol
from voxcut.client.cut import CutPlanner
from voxcut.client.resolve import FragmentList, resolve_fragments
from voxcut.model import (
    CameraState,
    CutDelta,
    DatasetMeta,
    Limit,
    NodeId,
    ResultMesh,
    SpecSet,
    SubVolumeSpec,
)

OUT = Path(__file__).resolve().parent.parent / "frontend" / "test" / "golden"

META = DatasetMeta.create(
    dims=(65, 65, 33),
    spacing=(1.0, 1.0, 2.0),
    origin=(-10.0, 0.0, 5.0),
    block_size=16,
    fields=["q", "u", "v", "w"],
    timesteps=4,
)


def meta_doc(meta: DatasetMeta) -> dict:
    return {
        "dims": list(meta.dims),
        "spacing": list(meta.spacing),
        "origin": list(meta.origin),
        "block_size": meta.block_size,
        "fields": list(meta.fields),
        "timesteps": meta.timesteps,
        "levels": meta.levels,
    }


def camera_doc(cam: CameraState) -> dict:
    return {
        "position": list(cam.position),
        "forward": list(cam.forward),
        "up": list(cam.up),
        "fov": cam.vertical_fov,
        "aspect": cam.aspect,
        "near": cam.near,
        "far": cam.far,
    }


def write_protocol_frames() -> dict:
    rng = np.random.default_rng(99)
    nv = 5
    mesh = ResultMesh(
        node=NodeId(1, 2, 0, 1),
        timestep=3,
        spec_version=7,
        subvolume_id=2,
        positions=rng.normal(size=(nv, 3)).astype(np.float32),
        normals=rng.normal(size=(nv, 3)).astype(np.float32),
        attributes={
            f: rng.normal(size=nv).astype(np.float32) for f in META.fields
        },
        velocities=rng.normal(size=(nv, 3)).astype(np.float32),
    )
    specset = SpecSet(
        5,
        (
            SubVolumeSpec(0, (Limit("q", 0.25, 4.0),)),
            SubVolumeSpec(3, (Limit("u", -2.0, 2.0), Limit("w", 0.0, 1.5))),
        ),
    )
    delta = CutDelta(
        added=((NodeId(2, 0, 0, 0), 0.75), (NodeId(0, 3, 1, 0), 0.5)),
        removed=(NodeId(1, 1, 1, 0),),
        reprioritized=((NodeId(0, 0, 0, 0), 0.25),),
    )
    key = protocol.ResultKey(7, 3, NodeId(1, 2, 0, 1))

    frames = {
        "hello": protocol.encode_hello(),
        "open": protocol.encode_open("golden-demo"),
        "dataset_info": protocol.encode_dataset_info(META),
        "set_spec": protocol.encode_set_spec(specset, META.fields),
        "cut_delta": protocol.encode_cut_delta(5, 2, delta),
        "result_mesh": protocol.encode_result_mesh(mesh, META.fields),
        "node_done": protocol.encode_node_done(key),
        "abort_ack": protocol.encode_abort_ack(5),
        "stats": protocol.encode_stats(12, 2, 3456, 78),
        "error": protocol.encode_error(2, "version must increase"),
    }
    for name, data in frames.items():
        (OUT / f"frame_{name}.bin").write_bytes(data)

    return {
        "meta": meta_doc(META),
        "set_spec": {
            "version": specset.version,
            "subvolumes": [
                {
                    "id": sv.id,
                    "limits": [
                        {"field": l.field, "lower": l.lower, "upper": l.upper}
                        for l in sv.limits
                    ],
                }
                for sv in specset.subvolumes
            ],
        },
        "cut_delta": {
            "version": 5,
            "timestep": 2,
            "added": [[n.level, n.ix, n.iy, n.iz, p] for n, p in delta.added],
            "removed": [[n.level, n.ix, n.iy, n.iz] for n in delta.removed],
            "reprioritized": [
                [n.level, n.ix, n.iy, n.iz, p] for n, p in delta.reprioritized
            ],
        },
        "result_mesh": {
            "node": [1, 2, 0, 1],
            "timestep": 3,
            "spec_version": 7,
            "subvolume_id": 2,
            "nverts": nv,
            "positions": mesh.positions.flatten().tolist(),
            "normals": mesh.normals.flatten().tolist(),
            "attributes": {f: mesh.attributes[f].tolist() for f in META.fields},
            "velocities": mesh.velocities.flatten().tolist(),
        },
        "node_done": {"version": 7, "timestep": 3, "node": [1, 2, 0, 1]},
        "abort_ack": 5,
        "stats": [12, 2, 3456, 78],
        "error": [2, "version must increase"],
        "open_id": "golden-demo",
    }


def write_resolve_cases() -> dict:
    rng = np.random.default_rng(424242)
    cases = []
    for case_idx in range(40):
        kind = case_idx % 4
        far = 50.0
        capacity = 4 if kind == 3 else 16
        sigmas = {}
        frags = []
        if kind == 0:  # disjoint pairs
            depth = 0.0
            for sid in range(int(rng.integers(1, 4))):
                entry = depth + float(rng.uniform(0.2, 1.5))
                exit = entry + float(rng.uniform(0.2, 2.0))
                depth = exit
                color = [round(float(c), 6) for c in rng.uniform(0, 1, 3)]
                sigmas[sid] = round(float(rng.uniform(0.1, 3.0)), 6)
                frags += [[entry, sid, color], [exit, sid, [0.0, 0.0, 0.0]]]
        elif kind == 1:  # nested
            d = np.sort(rng.uniform(0.5, 20.0, 4))
            c0 = [round(float(c), 6) for c in rng.uniform(0, 1, 3)]
            c1 = [round(float(c), 6) for c in rng.uniform(0, 1, 3)]
            sigmas = {0: round(float(rng.uniform(0.1, 2.0)), 6),
                      1: round(float(rng.uniform(0.1, 2.0)), 6)}
            frags = [
                [float(d[0]), 0, c0],
                [float(d[1]), 1, c1],
                [float(d[2]), 1, [0, 0, 0]],
                [float(d[3]), 0, [0, 0, 0]],
            ]
        elif kind == 2:  # unpaired trailing entry
            entry = float(rng.uniform(1, 10))
            sigmas = {0: round(float(rng.uniform(0.05, 1.0)), 6)}
            frags = [[entry, 0, [round(float(c), 6) for c in rng.uniform(0, 1, 3)]]]
        else:  # overflow: more fragments than capacity
            sigmas = {sid: 0.8 for sid in range(3)}
            for _ in range(8):
                frags.append(
                    [
                        float(rng.uniform(0.5, 30)),
                        int(rng.integers(0, 3)),
                        [round(float(c), 6) for c in rng.uniform(0, 1, 3)],
                    ]
                )
        background = [round(float(c), 6) for c in rng.uniform(0, 0.3, 3)]
        pixel = FragmentList(capacity=capacity, far=far)
        for depth, sid, color in frags:
            pixel.insert(depth, sid, tuple(color))
        alpha = lambda sid, t: 1.0 - math.exp(-sigmas[sid] * t)
        expected = resolve_fragments(pixel, alpha, tuple(background))
        cases.append(
            {
                "capacity": capacity,
                "far": far,
                "sigmas": {str(k): v for k, v in sigmas.items()},
                "background": background,
                "fragments": frags,
                "expected": list(expected),
            }
        )
    (OUT / "resolve_cases.json").write_text(json.dumps(cases, indent=1))
    return {"count": len(cases)}


def write_scene() -> dict:
    """Two nested translucent spheres, orthographic; fragment lists + image."""
    width = height = 96
    K = 16
    far = 10.0
    spheres = [  # (id, radius, color)
        (0, 1.0, (0.9, 0.45, 0.2)),
        (1, 0.55, (0.15, 0.5, 0.85)),
    ]
    sigmas = {0: 0.9, 1: 2.2}
    background = (0.08, 0.09, 0.12)
    alpha = lambda sid, t: 1.0 - math.exp(-sigmas[sid] * t)

    blob = bytearray()
    blob += struct.pack("<IIIf", width, height, K, far)
    image = np.zeros((height, width, 3), dtype=np.uint8)
    for py in range(height):
        y = 1.2 * (2.0 * (py + 0.5) / height - 1.0)
        for px in range(width):
            x = 1.2 * (2.0 * (px + 0.5) / width - 1.0)
            frags = []
            for sid, radius, color in spheres:
                rho2 = x * x + y * y
                if rho2 < radius * radius:
                    dz = math.sqrt(radius * radius - rho2)
                    # ray starts at z = -3 travelling +z; sphere at origin
                    frags.append((3.0 - dz, sid, color))
                    frags.append((3.0 + dz, sid, (0.0, 0.0, 0.0)))
            # scrambled insertion order exercises the sort
            frags = frags[::-1]
            pixel = FragmentList(capacity=K, far=far)
            for depth, sid, color in frags:
                pixel.insert(depth, sid, color)
            rgb = resolve_fragments(pixel, alpha, background)
            image[py, px] = [round(min(1.0, max(0.0, c)) * 255.0) for c in rgb]
            blob += struct.pack("<B", len(frags))
            for depth, sid, color in frags:
                blob += struct.pack("<fBfff", depth, sid, *color)
    (OUT / "scene_fragments.bin").write_bytes(bytes(blob))
    (OUT / "scene_image.bin").write_bytes(image.tobytes())
    return {
        "width": width,
        "height": height,
        "capacity": K,
        "far": far,
        "sigmas": {str(k): v for k, v in sigmas.items()},
        "background": list(background),
    }


def _cut_state_doc(planner: CutPlanner) -> list:
    return sorted(
        [n.level, n.ix, n.iy, n.iz, p] for n, p in planner.current.items()
    )


def _delta_doc(delta: CutDelta) -> dict:
    return {
        "added": sorted([n.level, n.ix, n.iy, n.iz, p] for n, p in delta.added),
        "removed": sorted([n.level, n.ix, n.iy, n.iz] for n in delta.removed),
        "reprioritized": sorted(
            [n.level, n.ix, n.iy, n.iz, p] for n, p in delta.reprioritized
        ),
    }


def camera_at(position, target, fov=1.1, aspect=1.5, near=0.05, far=1e6):
    fwd = tuple(t - p for p, t in zip(position, target))
    up = (0.0, 0.0, 1.0)
    if abs(fwd[0]) < 1e-12 and abs(fwd[1]) < 1e-12:
        up = (0.0, 1.0, 0.0)
    return CameraState(
        position=position, forward=fwd, up=up,
        vertical_fov=fov, aspect=aspect, near=near, far=far,
    )


def write_cut_cases() -> dict:
    center = tuple(
        META.origin[a] + META.spacing[a] * (META.dims[a] - 1) / 2 for a in range(3)
    )
    sequences = [
        [
            camera_at((900.0, 32.0, 40.0), center),
            camera_at((300.0, 32.0, 40.0), center),
            camera_at((90.0, 40.0, 40.0), center),
            camera_at((20.0, 30.0, 30.0), center),
        ],
        [
            camera_at((-500.0, -200.0, 400.0), center),
            camera_at((center[0], center[1], center[2] + 0.2), center),
        ],
        [
            camera_at((250.0, 32.0, 37.0), (400.0, 32.0, 37.0)),  # looking away
            camera_at((250.0, 32.0, 37.0), center),
        ],
    ]
    theta = 0.05
    cases = []
    for seq in sequences:
        planner = CutPlanner(META, split_angle=theta)
        steps = []
        for cam in seq:
            delta = planner.update_cut(cam)
            steps.append(
                {
                    "camera": camera_doc(cam),
                    "cut": _cut_state_doc(planner),
                    "delta": _delta_doc(delta),
                }
            )
        cases.append({"theta_split": theta, "steps": steps})
    (OUT / "cut_cases.json").write_text(
        json.dumps({"meta": meta_doc(META), "cases": cases}, indent=1)
    )
    return {"sequences": len(cases)}


def write_session_script() -> dict:
    """Scripted UI actions and the exact frames the client must emit."""
    center = tuple(
        META.origin[a] + META.spacing[a] * (META.dims[a] - 1) / 2 for a in range(3)
    )
    planner = CutPlanner(META, split_angle=0.05)
    version = 0
    timestep = 0
    subvolumes = (SubVolumeSpec(0, (Limit("q", 0.25, 4.0),)),)
    nodes: dict[NodeId, float] = {}

    steps = []

    def bump_and_rerequest():
        nonlocal version
        version += 1
        frames = [protocol.encode_set_spec(SpecSet(version, subvolumes), META.fields)]
        if nodes:
            delta = CutDelta(added=tuple(nodes.items()))
            frames.append(protocol.encode_cut_delta(version, timestep, delta))
        return frames

    def update(cam):
        delta = planner.update_cut(cam)
        for n, p in delta.added:
            nodes[n] = p
        for n in delta.removed:
            nodes.pop(n, None)
        for n, p in delta.reprioritized:
            nodes[n] = p
        if delta.empty:
            return []
        return [protocol.encode_cut_delta(version, timestep, delta)]

    def record(action, args, frames):
        steps.append(
            {
                "action": action,
                "args": args,
                "expect": [f.hex() for f in frames],
            }
        )

    record(
        "set_subvolumes",
        {
            "subvolumes": [
                {"id": 0, "limits": [{"field": "q", "lower": 0.25, "upper": 4.0}]}
            ]
        },
        bump_and_rerequest(),
    )
    cam1 = camera_at((700.0, 32.0, 40.0), center)
    record("camera", camera_doc(cam1), update(cam1))
    cam2 = camera_at((100.0, 36.0, 40.0), center)
    record("camera", camera_doc(cam2), update(cam2))
    timestep = 2
    record("timestep", {"timestep": 2}, bump_and_rerequest())
    subvolumes = (SubVolumeSpec(0, (Limit("q", 0.5, 4.0),)),)
    record(
        "set_subvolumes",
        {
            "subvolumes": [
                {"id": 0, "limits": [{"field": "q", "lower": 0.5, "upper": 4.0}]}
            ]
        },
        bump_and_rerequest(),
    )
    record("camera", camera_doc(cam2), update(cam2))  # unchanged: no frames

    (OUT / "session_script.json").write_text(
        json.dumps({"meta": meta_doc(META), "steps": steps}, indent=1)
    )
    return {"steps": len(steps)}


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    manifest = {
        "protocol": write_protocol_frames(),
        "resolve": write_resolve_cases(),
        "scene": write_scene(),
        "cut": write_cut_cases(),
        "session": write_session_script(),
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"golden corpus written to {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
