"""Boundary-surface extraction of boolean sub-volumes from one block.

Pipeline per sub-volume: composite margin over the sample lattice,
marching cubes on the zero level set (positive side = interior), normals
from the negated margin gradient, then trilinear sampling of every field
at the vertices.  All stages are pure functions; many blocks can be
processed concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import pure
from .model import (
    VELOCITY_FIELDS,
    BlockData,
    DatasetMeta,
    NodeId,
    ResultMesh,
    SpecSet,
    SubVolumeSpec,
)


class ExtractionError(Exception):
    """Extraction failed for one (node, sub-volume) combination."""


@dataclass(frozen=True)
class MarginGrid:
    """Composite margin sampled on one node's lattice."""

    values: np.ndarray  # float64 (n, n, n), [z, y, x]


def node_world_coords(
    meta: DatasetMeta, node: NodeId
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis world coordinates of the node's sample lattice.

    Lattice indices past the grid border are clamped to the border, so
    border blocks get repeated coordinates; the cells between them are
    degenerate and marching cubes drops their zero-area output.
    Coordinates derive from global integer indices, which keeps shared
    face positions bit-identical between adjacent nodes.
    """
    b = meta.block_size
    step = 1 << node.level
    coords = []
    for axis, start in ((0, node.ix), (1, node.iy), (2, node.iz)):
        idx = start * b * step + np.arange(b + 1, dtype=np.int64) * step
        idx = np.minimum(idx, meta.dims[axis] - 1)
        coords.append(meta.origin[axis] + meta.spacing[axis] * idx.astype(np.float64))
    return coords[0], coords[1], coords[2]


def margin_field(block: BlockData, spec: SubVolumeSpec) -> MarginGrid:
    """Pointwise composite margin of the block against one sub-volume."""
    stacks = []
    los = []
    his = []
    for lim in spec.limits:
        if lim.field not in block.samples:
            raise ExtractionError(f"block has no field {lim.field!r}")
        stacks.append(block.samples[lim.field])
        los.append(lim.lower)
        his.append(lim.upper)
    values = kernels.margin_grid(
        np.stack(stacks),
        np.asarray(los, dtype=np.float64),
        np.asarray(his, dtype=np.float64),
    )
    return MarginGrid(values)


def extract_surface(
    margin: MarginGrid,
    coords: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Triangle soup of the margin's zero level set in world space.

    Returns ``(positions, lattice)`` float64 arrays of shape
    ``(nverts, 3)``; every three consecutive vertices form one triangle
    wound interior to exterior.  Exactly degenerate (zero-area) triangles
    from clamped border cells are dropped.
    """
    xs, ys, zs = coords
    pos, lat = kernels.mc_extract(margin.values, xs, ys, zs)
    return pure.drop_zero_area(pos, lat)


def compute_normals(
    lattice: np.ndarray,
    positions: np.ndarray,
    margin: MarginGrid,
    steps: tuple[float, float, float],
) -> np.ndarray:
    """Unit normals from the negated margin gradient, interior to exterior.

    The gradient is taken with central differences on the margin lattice
    and trilinearly interpolated at each vertex.  Where it vanishes the
    triangle's geometric normal (consistent with the winding) is used.
    """
    return pure.margin_normals(
        margin.values, lattice, positions, steps[0], steps[1], steps[2]
    )


def sample_attributes(
    block: BlockData, lattice: np.ndarray, meta: DatasetMeta
) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Trilinear per-vertex values of every field, plus packed velocities.

    Velocities are present exactly when the dataset carries all of the
    fields ``u``, ``v`` and ``w``.
    """
    nv = lattice.shape[0]
    if nv == 0:
        attrs = {f: np.empty(0, dtype=np.float32) for f in meta.fields}
        vel = (
            np.empty((0, 3), dtype=np.float32)
            if all(f in meta.fields for f in VELOCITY_FIELDS)
            else None
        )
        return attrs, vel
    stack = np.stack([block.samples[f] for f in meta.fields])
    values = kernels.trilinear_multi(stack, lattice)
    attrs = {
        f: values[i].astype(np.float32) for i, f in enumerate(meta.fields)
    }
    vel = None
    if all(f in meta.fields for f in VELOCITY_FIELDS):
        vel = np.stack([attrs[f] for f in VELOCITY_FIELDS], axis=1)
    return attrs, vel


def field_stack(block: BlockData, meta: DatasetMeta) -> np.ndarray:
    """Channel-first float32 view of all fields, reusing the store's backing."""
    stacked = getattr(block, "stacked", None)
    if stacked is not None:
        return stacked
    return np.stack([block.samples[f] for f in meta.fields])


def extract_subvolume(
    block: BlockData, spec: SubVolumeSpec, meta: DatasetMeta, spec_version: int
) -> ResultMesh:
    """Run the full pipeline for one sub-volume of one block.

    Delegates to the selected backend's fused per-block kernel, which is
    bit-compatible with composing the public stage functions.
    """
    index = {name: i for i, name in enumerate(meta.fields)}
    limit_idx = []
    los = []
    his = []
    for lim in spec.limits:
        if lim.field not in index:
            raise ExtractionError(f"block has no field {lim.field!r}")
        limit_idx.append(index[lim.field])
        los.append(lim.lower)
        his.append(lim.upper)
    stack = field_stack(block, meta)
    xs, ys, zs = node_world_coords(meta, block.node)
    step = 1 << block.node.level
    hx, hy, hz = (meta.spacing[a] * step for a in range(3))
    positions, _lat, normals, attr_rows = kernels.extract_block(
        stack,
        np.asarray(limit_idx, dtype=np.int64),
        np.asarray(los, dtype=np.float64),
        np.asarray(his, dtype=np.float64),
        xs,
        ys,
        zs,
        hx,
        hy,
        hz,
    )
    attrs = {name: attr_rows[i] for i, name in enumerate(meta.fields)}
    velocities = None
    if all(f in index for f in VELOCITY_FIELDS):
        velocities = np.stack([attrs[f] for f in VELOCITY_FIELDS], axis=1)
    return ResultMesh(
        node=block.node,
        timestep=block.timestep,
        spec_version=spec_version,
        subvolume_id=spec.id,
        positions=positions,
        normals=normals,
        attributes=attrs,
        velocities=velocities,
    )


def extract_node(
    block: BlockData, specset: SpecSet, meta: DatasetMeta
) -> list[ResultMesh]:
    """One mesh per sub-volume, in spec order; deterministic throughout."""
    out = []
    for spec in specset.subvolumes:
        try:
            out.append(extract_subvolume(block, spec, meta, specset.version))
        except ExtractionError as exc:
            raise ExtractionError(f"sub-volume {spec.id}: {exc}") from exc
    return out
