"""Shared domain types and the grid math every other module builds on.

Conventions used throughout the package:

* ``dims`` counts *samples* per axis, ordered (x, y, z).
* Sample payloads are ``numpy.float32`` arrays of shape ``(n, n, n)``
  indexed ``[z, y, x]`` so that the flat byte order is x-fastest, which is
  also the on-disk and on-wire layout.
* The octree is addressed bottom-up: level 0 is the leaf level, the single
  root node sits at level ``levels - 1``.  Per-axis node counts follow
  ceil-halving of the leaf block counts, so non-cubic grids need no
  padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

Triple = tuple[float, float, float]
ITriple = tuple[int, int, int]


def partition_dims(dims: Sequence[int], block_size: int) -> ITriple:
    """Number of leaf blocks per axis for a grid of ``dims`` samples.

    Each block covers ``block_size`` cells (one cell = the gap between two
    adjacent samples); the last block of an axis may cover fewer cells.
    """
    if block_size < 2:
        raise ValueError(f"block size must be >= 2, got {block_size}")
    if any(d < 2 for d in dims):
        raise ValueError(f"need at least 2 samples per axis, got {tuple(dims)}")
    return tuple(-(-(d - 1) // block_size) for d in dims)  # type: ignore[return-value]


def level_count(blocks: Sequence[int]) -> int:
    """Smallest number of levels so ceil-halving every axis reaches (1,1,1)."""
    if any(b < 1 for b in blocks):
        raise ValueError(f"block counts must be >= 1, got {tuple(blocks)}")
    return 1 + max(math.ceil(math.log2(b)) if b > 1 else 0 for b in blocks)


def nodes_at_level(blocks: Sequence[int], level: int) -> ITriple:
    """Per-axis node counts at ``level`` (0 = leaves), by ceil-halving."""
    return tuple(-(-b // (1 << level)) for b in blocks)  # type: ignore[return-value]


def total_node_count(blocks: Sequence[int]) -> int:
    """Total octree nodes over all levels for the given leaf block counts."""
    return sum(
        math.prod(nodes_at_level(blocks, lv)) for lv in range(level_count(blocks))
    )


@dataclass(frozen=True)
class NodeId:
    """Address of one octree node: level plus per-axis node coordinates."""

    level: int
    ix: int
    iy: int
    iz: int

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.level, self.ix, self.iy, self.iz)

    def child(self, dx: int, dy: int, dz: int) -> "NodeId":
        if self.level == 0:
            raise ValueError("leaf nodes have no children")
        return NodeId(self.level - 1, 2 * self.ix + dx, 2 * self.iy + dy, 2 * self.iz + dz)

    def parent(self) -> "NodeId":
        return NodeId(self.level + 1, self.ix // 2, self.iy // 2, self.iz // 2)

    def is_ancestor_of(self, other: "NodeId") -> bool:
        """True when ``other`` lies strictly below this node in the tree."""
        if other.level >= self.level:
            return False
        shift = self.level - other.level
        return (
            other.ix >> shift == self.ix
            and other.iy >> shift == self.iy
            and other.iz >> shift == self.iz
        )


@dataclass(frozen=True)
class DatasetMeta:
    """Geometry and content description of one rectilinear dataset."""

    dims: ITriple
    spacing: Triple
    origin: Triple
    block_size: int
    fields: tuple[str, ...]
    timesteps: int
    levels: int

    def __post_init__(self) -> None:
        blocks = partition_dims(self.dims, self.block_size)
        expect = level_count(blocks)
        if self.levels != expect:
            raise ValueError(f"levels={self.levels} inconsistent, expected {expect}")
        if len(set(self.fields)) != len(self.fields) or not all(self.fields):
            raise ValueError("field names must be unique and non-empty")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be positive")
        if self.timesteps < 1:
            raise ValueError("need at least one timestep")

    @classmethod
    def create(
        cls,
        dims: Sequence[int],
        spacing: Sequence[float],
        origin: Sequence[float],
        block_size: int,
        fields: Sequence[str],
        timesteps: int,
    ) -> "DatasetMeta":
        blocks = partition_dims(dims, block_size)
        return cls(
            dims=tuple(int(d) for d in dims),
            spacing=tuple(float(s) for s in spacing),
            origin=tuple(float(o) for o in origin),
            block_size=int(block_size),
            fields=tuple(fields),
            timesteps=int(timesteps),
            levels=level_count(blocks),
        )

    @property
    def blocks(self) -> ITriple:
        return partition_dims(self.dims, self.block_size)

    @property
    def world_diagonal(self) -> float:
        return math.sqrt(
            sum(((d - 1) * s) ** 2 for d, s in zip(self.dims, self.spacing))
        )

    def nodes_at_level(self, level: int) -> ITriple:
        if not 0 <= level < self.levels:
            raise ValueError(f"level {level} outside [0, {self.levels})")
        return nodes_at_level(self.blocks, level)

    def node_valid(self, node: NodeId) -> bool:
        if not 0 <= node.level < self.levels:
            return False
        nx, ny, nz = nodes_at_level(self.blocks, node.level)
        return 0 <= node.ix < nx and 0 <= node.iy < ny and 0 <= node.iz < nz

    def iter_nodes(self, level: int) -> Iterator[NodeId]:
        """All nodes of one level in x-fastest order (the index order)."""
        nx, ny, nz = self.nodes_at_level(level)
        for iz in range(nz):
            for iy in range(ny):
                for ix in range(nx):
                    yield NodeId(level, ix, iy, iz)

    @property
    def root(self) -> NodeId:
        return NodeId(self.levels - 1, 0, 0, 0)

    def node_sample_range(self, node: NodeId) -> tuple[ITriple, ITriple]:
        """Inclusive finest-lattice sample index range covered by ``node``."""
        if not self.node_valid(node):
            raise ValueError(f"invalid node {node} for this dataset")
        scale = self.block_size * (1 << node.level)
        lo = (node.ix * scale, node.iy * scale, node.iz * scale)
        hi = tuple(
            min(lo[a] + scale, self.dims[a] - 1) for a in range(3)
        )
        return lo, hi  # type: ignore[return-value]


def node_bbox(node: NodeId, meta: DatasetMeta) -> tuple[Triple, Triple]:
    """World-space axis-aligned box of a node, clipped to the grid extent."""
    lo, hi = meta.node_sample_range(node)
    mins = tuple(meta.origin[a] + meta.spacing[a] * lo[a] for a in range(3))
    maxs = tuple(meta.origin[a] + meta.spacing[a] * hi[a] for a in range(3))
    return mins, maxs  # type: ignore[return-value]


@dataclass(frozen=True)
class Limit:
    """Closed scalar interval a field must stay within."""

    field: str
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValueError(f"limit for {self.field!r}: lower > upper")


@dataclass(frozen=True)
class SubVolumeSpec:
    """One sub-volume: the boolean intersection of per-field limits."""

    id: int
    limits: tuple[Limit, ...]

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("sub-volume id must be >= 0")
        if not self.limits:
            raise ValueError("sub-volume needs at least one limit")
        names = [lim.field for lim in self.limits]
        if len(set(names)) != len(names):
            raise ValueError("at most one limit per field")


@dataclass(frozen=True)
class SpecSet:
    """Versioned collection of sub-volumes; the version only ever grows."""

    version: int
    subvolumes: tuple[SubVolumeSpec, ...] = ()

    def __post_init__(self) -> None:
        ids = [sv.id for sv in self.subvolumes]
        if len(set(ids)) != len(ids):
            raise ValueError("sub-volume ids must be unique")

    def with_subvolumes(self, subvolumes: Sequence[SubVolumeSpec]) -> "SpecSet":
        return SpecSet(self.version + 1, tuple(subvolumes))


def composite_margin(values: Mapping[str, float], spec: SubVolumeSpec) -> float:
    """Minimum slack of ``values`` against all limits of one sub-volume.

    Positive strictly inside the boolean intersection, negative outside,
    zero on the boundary.  Changing one value by d moves the result by at
    most d.
    """
    margin = math.inf
    for lim in spec.limits:
        try:
            v = values[lim.field]
        except KeyError:
            raise KeyError(f"no value for field {lim.field!r}") from None
        margin = min(margin, v - lim.lower, lim.upper - v)
    return margin


@dataclass(frozen=True)
class BlockData:
    """Sample payload of one node at one timestep.

    Every field holds ``(b+1)^3`` float32 samples; the extra sample on the
    high side of each axis duplicates the neighbouring block's first
    sample so surfaces of adjacent blocks meet without cracks.
    """

    node: NodeId
    timestep: int
    samples: dict[str, np.ndarray]
    # channel-first (fields, n, n, n) backing array when the samples are
    # views into one contiguous payload; lets the extraction kernel skip
    # re-stacking
    stacked: np.ndarray | None = None

    def validate(self, meta: DatasetMeta) -> None:
        n = meta.block_size + 1
        if set(self.samples) != set(meta.fields):
            raise ValueError("sample fields do not match dataset fields")
        for name, arr in self.samples.items():
            if arr.shape != (n, n, n) or arr.dtype != np.float32:
                raise ValueError(f"field {name!r}: bad shape/dtype {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"field {name!r}: non-finite samples")

    def nbytes(self) -> int:
        return sum(arr.nbytes for arr in self.samples.values())


VELOCITY_FIELDS = ("u", "v", "w")


@dataclass
class ResultMesh:
    """Triangle soup extracted for one (node, timestep, spec) combination."""

    node: NodeId
    timestep: int
    spec_version: int
    subvolume_id: int
    positions: np.ndarray  # float32 (nverts, 3), world coordinates
    normals: np.ndarray  # float32 (nverts, 3), unit, interior -> exterior
    attributes: dict[str, np.ndarray]  # per field, float32 (nverts,)
    velocities: np.ndarray | None = None  # float32 (nverts, 3) when u,v,w exist

    @property
    def nverts(self) -> int:
        return int(self.positions.shape[0])

    @property
    def ntris(self) -> int:
        return self.nverts // 3


@dataclass(frozen=True)
class CameraState:
    """Pinhole camera pose and projection parameters."""

    position: Triple
    forward: Triple
    up: Triple
    vertical_fov: float
    aspect: float
    near: float
    far: float

    def __post_init__(self) -> None:
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError("vertical_fov must be in (0, pi)")
        if self.aspect <= 0.0:
            raise ValueError("aspect must be positive")
        if not 0.0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        fwd = np.asarray(self.forward, dtype=np.float64)
        nf = np.linalg.norm(fwd)
        if nf == 0.0:
            raise ValueError("forward must be non-zero")
        fwd = fwd / nf
        up = np.asarray(self.up, dtype=np.float64)
        up = up - fwd * float(up @ fwd)
        nu = np.linalg.norm(up)
        if nu < 1e-12:
            raise ValueError("up is parallel to forward")
        up = up / nu
        object.__setattr__(self, "forward", tuple(fwd))
        object.__setattr__(self, "up", tuple(up))

    @property
    def right(self) -> Triple:
        r = np.cross(self.forward, self.up)
        return tuple(r / np.linalg.norm(r))


@dataclass(frozen=True)
class CutDelta:
    """Per-frame change lists of the rendered node set."""

    added: tuple[tuple[NodeId, float], ...] = ()
    removed: tuple[NodeId, ...] = ()
    reprioritized: tuple[tuple[NodeId, float], ...] = ()

    def __post_init__(self) -> None:
        groups = (
            {n for n, _ in self.added},
            set(self.removed),
            {n for n, _ in self.reprioritized},
        )
        total = sum(len(g) for g in groups)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValueError("delta lists must be pairwise disjoint")

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed or self.reprioritized)
