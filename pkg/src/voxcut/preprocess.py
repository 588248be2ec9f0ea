"""Build the on-disk octree acceleration structure from raw volumes.

Raw input layout (one directory):

    meta.json                {"dims", "spacing", "origin", "fields", "timesteps"}
    t{T}_{field}.raw         flat little-endian float32, x fastest

Octree store layout (one directory):

    store.json               dataset meta plus block size and level count
    t{T}.oct                 magic "STR1", u64-LE offset index (level 0
                             upward, nodes x fastest), then payloads: per
                             node the fields in meta order, each
                             (b+1)^3 little-endian float32, x fastest

Inner levels are pure stride-2 sub-samples of their children, so every
inner sample that lands on a finest-lattice point carries exactly the
leaf-level value; border blocks and missing children are edge-clamped so
all payloads share one fixed size.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    BlockData,
    DatasetMeta,
    NodeId,
    nodes_at_level,
    partition_dims,
    total_node_count,
)

MAGIC = b"STR1"


class StoreError(Exception):
    """Raised for malformed, incomplete or inconsistent store files."""


def _meta_to_json(meta: DatasetMeta) -> dict:
    return {
        "dims": list(meta.dims),
        "spacing": list(meta.spacing),
        "origin": list(meta.origin),
        "fields": list(meta.fields),
        "timesteps": meta.timesteps,
        "block_size": meta.block_size,
        "levels": meta.levels,
    }


def _meta_from_json(doc: dict, block_size: int | None = None) -> DatasetMeta:
    return DatasetMeta.create(
        dims=doc["dims"],
        spacing=doc["spacing"],
        origin=doc["origin"],
        block_size=block_size if block_size is not None else doc["block_size"],
        fields=doc["fields"],
        timesteps=doc["timesteps"],
    )


class RawDataset:
    """Reader for the raw rectilinear input format."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.exists():
            raise StoreError(f"no meta.json under {self.root}")
        doc = json.loads(meta_path.read_text())
        self.dims: tuple[int, int, int] = tuple(doc["dims"])
        self.spacing = tuple(doc["spacing"])
        self.origin = tuple(doc["origin"])
        self.fields: tuple[str, ...] = tuple(doc["fields"])
        self.timesteps: int = int(doc["timesteps"])

    def field(self, timestep: int, name: str) -> np.ndarray:
        """Full grid of one field at one timestep, shape (nz, ny, nx)."""
        path = self.root / f"t{timestep}_{name}.raw"
        nx, ny, nz = self.dims
        data = np.memmap(path, dtype="<f4", mode="r", shape=(nz, ny, nx))
        return data

    def meta(self, block_size: int) -> DatasetMeta:
        return DatasetMeta.create(
            self.dims, self.spacing, self.origin, block_size, self.fields, self.timesteps
        )


def write_raw(
    root: str | Path,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    origin: tuple[float, float, float],
    fields: dict[int, dict[str, np.ndarray]],
) -> None:
    """Write grids as a raw dataset; ``fields[timestep][name]`` is (nz,ny,nx)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    timesteps = sorted(fields)
    names = list(fields[timesteps[0]])
    doc = {
        "dims": list(dims),
        "spacing": list(spacing),
        "origin": list(origin),
        "fields": names,
        "timesteps": len(timesteps),
    }
    (root / "meta.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    for t in timesteps:
        for name in names:
            arr = np.ascontiguousarray(fields[t][name], dtype="<f4")
            (root / f"t{t}_{name}.raw").write_bytes(arr.tobytes())


def overhead_ratio(dims: tuple[int, int, int], block_size: int) -> float:
    """Inner-node payload bytes over leaf payload bytes (payloads are uniform)."""
    blocks = partition_dims(dims, block_size)
    leaves = blocks[0] * blocks[1] * blocks[2]
    total = total_node_count(blocks)
    return (total - leaves) / leaves


def _clamped_index(start: int, step: int, count: int, limit: int) -> np.ndarray:
    idx = start + np.arange(count, dtype=np.int64) * step
    return np.minimum(idx, limit - 1)


def build_leaf(raw: RawDataset, meta: DatasetMeta, node: NodeId, timestep: int) -> BlockData:
    """Copy one leaf block out of the raw grid, edge-clamping past the border."""
    if node.level != 0 or not meta.node_valid(node):
        raise ValueError(f"not a valid leaf node: {node}")
    b = meta.block_size
    ix = _clamped_index(node.ix * b, 1, b + 1, meta.dims[0])
    iy = _clamped_index(node.iy * b, 1, b + 1, meta.dims[1])
    iz = _clamped_index(node.iz * b, 1, b + 1, meta.dims[2])
    samples = {}
    for name in meta.fields:
        grid = raw.field(timestep, name)
        samples[name] = np.ascontiguousarray(grid[np.ix_(iz, iy, ix)], dtype=np.float32)
    return BlockData(node=node, timestep=timestep, samples=samples)


def downsample(children: dict[tuple[int, int, int], BlockData], parent: NodeId) -> BlockData:
    """Stride-2 sub-sample up to eight children into one parent block.

    Parent sample (x,y,z) takes the child-domain sample (2x,2y,2z); where
    that falls outside the provided children (grid border) the nearest
    existing child sample is used instead.
    """
    if not children:
        raise ValueError("parent needs at least one child")
    first = next(iter(children.values()))
    n = next(iter(first.samples.values())).shape[0]
    b = n - 1
    timestep = first.timestep
    for (dx, dy, dz), ch in children.items():
        expect = (parent.ix * 2 + dx, parent.iy * 2 + dy, parent.iz * 2 + dz)
        got = (ch.node.ix, ch.node.iy, ch.node.iz)
        if ch.node.level != parent.level - 1 or got != expect:
            raise ValueError(f"child {ch.node} does not match parent {parent} slot {(dx, dy, dz)}")

    # per axis: child slot and local index for each parent sample
    q = 2 * np.arange(b + 1, dtype=np.int64)
    hi = q > b
    slot = hi.astype(np.int64)
    local = np.where(hi, q - b, q)

    def clamp_axis(axis_slots: np.ndarray, axis_local: np.ndarray, have_hi: bool) -> tuple[np.ndarray, np.ndarray]:
        if have_hi:
            return axis_slots, axis_local
        return np.zeros_like(axis_slots), np.minimum(q, b)

    have_x = any(k[0] == 1 for k in children)
    have_y = any(k[1] == 1 for k in children)
    have_z = any(k[2] == 1 for k in children)
    sx, lx = clamp_axis(slot, local, have_x)
    sy, ly = clamp_axis(slot, local, have_y)
    sz, lz = clamp_axis(slot, local, have_z)

    samples: dict[str, np.ndarray] = {}
    fields = list(first.samples)
    out_shape = (b + 1, b + 1, b + 1)
    for name in fields:
        out = np.empty(out_shape, dtype=np.float32)
        for cz in (0, 1):
            mz = sz == cz
            if not mz.any():
                continue
            for cy in (0, 1):
                my = sy == cy
                if not my.any():
                    continue
                for cx in (0, 1):
                    mx = sx == cx
                    if not mx.any():
                        continue
                    key = (cx, cy, cz)
                    if key not in children:
                        raise ValueError(f"missing child {key} required by sampling")
                    src = children[key].samples[name]
                    out[np.ix_(mz, my, mx)] = src[np.ix_(lz[mz], ly[my], lx[mx])]
        samples[name] = out
    return BlockData(node=parent, timestep=timestep, samples=samples)


@dataclass
class _TimestepIndex:
    offsets: list[np.ndarray]  # per level, u64 offsets in node order


class OctreeStore:
    """Random-access reader for a built octree store."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest = self.root / "store.json"
        if not manifest.exists():
            raise StoreError(f"no store.json under {self.root}")
        partials = sorted(self.root.glob("*.partial"))
        if partials:
            raise StoreError(f"store is incomplete: {partials[0].name} marker present")
        self.meta = _meta_from_json(json.loads(manifest.read_text()))
        self._payload_bytes = len(self.meta.fields) * (self.meta.block_size + 1) ** 3 * 4
        self._files: dict[int, tuple[int, _TimestepIndex]] = {}

    @property
    def dataset_id(self) -> str:
        return self.root.name

    def payload_bytes(self) -> int:
        return self._payload_bytes

    def node_counts(self) -> list[int]:
        blocks = self.meta.blocks
        return [
            int(np.prod(nodes_at_level(blocks, lv))) for lv in range(self.meta.levels)
        ]

    def _open_timestep(self, timestep: int) -> tuple[int, _TimestepIndex]:
        if timestep in self._files:
            return self._files[timestep]
        if not 0 <= timestep < self.meta.timesteps:
            raise StoreError(f"timestep {timestep} out of range")
        path = self.root / f"t{timestep}.oct"
        fd = os.open(path, os.O_RDONLY)
        head = os.pread(fd, 4, 0)
        if head != MAGIC:
            os.close(fd)
            raise StoreError(f"{path.name}: bad magic {head!r}")
        counts = self.node_counts()
        total = sum(counts)
        raw = os.pread(fd, total * 8, 4)
        if len(raw) != total * 8:
            os.close(fd)
            raise StoreError(f"{path.name}: truncated index")
        offsets = np.frombuffer(raw, dtype="<u8")
        index = _TimestepIndex(offsets=[])
        at = 0
        for c in counts:
            index.offsets.append(offsets[at : at + c])
            at += c
        entry = (fd, index)
        self._files[timestep] = entry
        return entry

    def read_block(self, timestep: int, node: NodeId) -> BlockData:
        """Read one node payload; bit-identical to what was written."""
        if not self.meta.node_valid(node):
            raise StoreError(f"invalid node {node}")
        fd, index = self._open_timestep(timestep)
        nx, ny, _ = self.meta.nodes_at_level(node.level)
        flat = (node.iz * ny + node.iy) * nx + node.ix
        offset = int(index.offsets[node.level][flat])
        raw = os.pread(fd, self._payload_bytes, offset)
        if len(raw) != self._payload_bytes:
            raise StoreError(f"short read for node {node} at t{timestep}")
        n = self.meta.block_size + 1
        stack = np.frombuffer(raw, dtype="<f4").reshape(len(self.meta.fields), n, n, n)
        samples = {name: stack[i] for i, name in enumerate(self.meta.fields)}
        return BlockData(node=node, timestep=timestep, samples=samples, stacked=stack)

    def close(self) -> None:
        for fd, _ in self._files.values():
            os.close(fd)
        self._files.clear()

    def __enter__(self) -> "OctreeStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_octree(raw: RawDataset | str | Path, block_size: int, output: str | Path) -> OctreeStore:
    """Write the full octree store for a raw dataset; deterministic and idempotent.

    Leaves are written first, then every inner level bottom-up.  A
    ``.partial`` marker file exists while a timestep file is being
    written; its presence after a crash marks the store incomplete.
    """
    if not isinstance(raw, RawDataset):
        raw = RawDataset(raw)
    meta = raw.meta(block_size)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "store.json").write_text(json.dumps(_meta_to_json(meta), indent=1, sort_keys=True))

    counts = [nodes_at_level(meta.blocks, lv) for lv in range(meta.levels)]
    payload = len(meta.fields) * (meta.block_size + 1) ** 3 * 4
    total = sum(int(np.prod(c)) for c in counts)
    header = 4 + total * 8

    for t in range(meta.timesteps):
        marker = out / f"t{t}.oct.partial"
        marker.touch()
        path = out / f"t{t}.oct"
        with open(path, "wb") as f:
            f.write(MAGIC)
            # offsets are computable up front: write order equals index order
            offset = header
            for c in counts:
                n = int(np.prod(c))
                offs = offset + np.arange(n, dtype="<u8") * payload
                f.write(offs.tobytes())
                offset += n * payload

            prev: dict[tuple[int, int, int], BlockData] = {}
            for lv in range(meta.levels):
                nx, ny, nz = counts[lv]
                cur: dict[tuple[int, int, int], BlockData] = {}
                for iz in range(nz):
                    for iy in range(ny):
                        for ix in range(nx):
                            node = NodeId(lv, ix, iy, iz)
                            if lv == 0:
                                blk = build_leaf(raw, meta, node, t)
                            else:
                                kids = {}
                                pnx, pny, pnz = counts[lv - 1]
                                for dz in (0, 1):
                                    for dy in (0, 1):
                                        for dx in (0, 1):
                                            cx, cy, cz = 2 * ix + dx, 2 * iy + dy, 2 * iz + dz
                                            if cx < pnx and cy < pny and cz < pnz:
                                                kids[(dx, dy, dz)] = prev[(cx, cy, cz)]
                                blk = downsample(kids, node)
                            cur[(ix, iy, iz)] = blk
                            stack = np.stack([blk.samples[name] for name in meta.fields])
                            f.write(np.ascontiguousarray(stack, dtype="<f4").tobytes())
                prev = cur
        marker.unlink()
    return OctreeStore(out)
