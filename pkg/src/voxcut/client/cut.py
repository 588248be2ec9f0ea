"""View-dependent cut maintenance.

The cut is the antichain of octree nodes currently selected for
rendering.  Each frame the tree is walked from the root: frustum-culled
subtrees drop out entirely, nodes appearing too large on screen (solid
angle above the split threshold) are replaced by their visible children,
and child sets whose parent has shrunk below the merge threshold
collapse back.  The merge threshold sits at 0.8 of the split threshold
so the cut cannot flap at the boundary; with a static camera the second
walk is always a fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model import CameraState, CutDelta, DatasetMeta, NodeId, node_bbox

DEFAULT_SPLIT_ANGLE = 0.05  # steradians; tunable, no canonical value
MERGE_FACTOR = 0.8
PRIORITY_EPSILON = 1e-3


def _dist(a, b) -> float:
    # plain sqrt-of-squares, not math.dist: the browser twin must be able
    # to reproduce these doubles exactly
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def solid_angle(box: tuple, camera: CameraState) -> float:
    """Apparent size of the box's bounding sphere, in steradians.

    A camera inside the sphere sees the full hemisphere band (2 pi),
    which forces a split.
    """
    mins, maxs = box
    center = tuple((a + b) * 0.5 for a, b in zip(mins, maxs))
    radius = 0.5 * _dist(mins, maxs)
    d = _dist(camera.position, center)
    if d <= radius:
        return 2.0 * math.pi
    return 2.0 * math.pi * (1.0 - d / math.sqrt(d * d + radius * radius))


def priority_of(node: NodeId, camera: CameraState, meta: DatasetMeta) -> float:
    """Strictly decreasing in camera distance, normalized by the dataset size."""
    mins, maxs = node_bbox(node, meta)
    center = tuple((a + b) * 0.5 for a, b in zip(mins, maxs))
    d = _dist(camera.position, center)
    return 1.0 / (1.0 + d / meta.world_diagonal)


class Frustum:
    """Six inward-facing planes of a perspective camera."""

    def __init__(self, camera: CameraState):
        pos = np.asarray(camera.position)
        fwd = np.asarray(camera.forward)
        up = np.asarray(camera.up)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)

        tan_v = math.tan(camera.vertical_fov / 2.0)
        tan_h = tan_v * camera.aspect

        planes = []

        def plane(normal: np.ndarray, point: np.ndarray) -> None:
            n = normal / np.linalg.norm(normal)
            planes.append((n, -float(n @ point)))

        plane(fwd, pos + fwd * camera.near)  # near
        plane(-fwd, pos + fwd * camera.far)  # far
        # side planes pass through the camera position
        plane(fwd * tan_h - right, pos)  # right
        plane(fwd * tan_h + right, pos)  # left
        plane(fwd * tan_v - up, pos)  # top
        plane(fwd * tan_v + up, pos)  # bottom
        self.normals = np.stack([p[0] for p in planes])
        self.offsets = np.asarray([p[1] for p in planes])

    def intersects_box(self, box: tuple) -> bool:
        """Conservative AABB test: False only if fully outside some plane."""
        mins = np.asarray(box[0])
        maxs = np.asarray(box[1])
        # positive vertex per plane
        pv = np.where(self.normals > 0, maxs, mins)
        dist = np.einsum("ij,ij->i", self.normals, pv) + self.offsets
        return bool((dist >= 0).all())


@dataclass
class CutPlanner:
    """Owns the cut membership and produces per-frame deltas."""

    meta: DatasetMeta
    split_angle: float = DEFAULT_SPLIT_ANGLE
    current: dict[NodeId, float] = field(default_factory=dict)

    def update_cut(self, camera: CameraState) -> CutDelta:
        """Walk the tree and emit the three disjoint change lists."""
        frustum = Frustum(camera)
        merge_angle = MERGE_FACTOR * self.split_angle

        was_split: set[NodeId] = set()
        for node in self.current:
            lv = node.level
            n = node
            while lv < self.meta.levels - 1:
                n = n.parent()
                lv += 1
                if n in was_split:
                    break
                was_split.add(n)

        selected: dict[NodeId, float] = {}

        def visit(node: NodeId) -> None:
            box = node_bbox(node, self.meta)
            if not frustum.intersects_box(box):
                return
            if node.level > 0:
                omega = solid_angle(box, camera)
                want_split = omega > self.split_angle
                stay_split = node in was_split and omega > merge_angle
                if want_split or stay_split:
                    nx, ny, nz = self.meta.nodes_at_level(node.level - 1)
                    for dz in (0, 1):
                        for dy in (0, 1):
                            for dx in (0, 1):
                                child = node.child(dx, dy, dz)
                                if child.ix < nx and child.iy < ny and child.iz < nz:
                                    visit(child)
                    return
            selected[node] = priority_of(node, camera, self.meta)

        visit(self.meta.root)

        added = tuple(
            (n, p) for n, p in selected.items() if n not in self.current
        )
        removed = tuple(n for n in self.current if n not in selected)
        repri = tuple(
            (n, p)
            for n, p in selected.items()
            if n in self.current and abs(p - self.current[n]) > PRIORITY_EPSILON
        )
        self.current = selected
        return CutDelta(added=added, removed=removed, reprioritized=repri)
