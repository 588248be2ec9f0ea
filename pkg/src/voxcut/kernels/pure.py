"""NumPy fallback for the extraction kernels.

The compiled twin in ``_fast.pyx`` implements the same four entry points
with plain loops; every arithmetic expression here mirrors the compiled
code operation for operation so both backends produce bit-identical
output (asserted by the test suite).  Keep the two in sync when touching
either.

Array layout: scalar lattices are ``(nz, ny, nx)`` C-order (x fastest),
multi-channel stacks are channel-first.
"""

from __future__ import annotations

import numpy as np

from .tables import EDGE_AXIS, EDGE_BASE, TRI_TABLE, TRI_TABLE_FLAT

_TRI_FLAT = np.asarray(TRI_TABLE_FLAT, dtype=np.int8)
_TRI_COUNT = np.asarray([len(r) for r in TRI_TABLE], dtype=np.int64)
_EDGE_BASE = np.asarray(EDGE_BASE, dtype=np.int64)
_EDGE_AXIS = np.asarray(EDGE_AXIS, dtype=np.int64)


def margin_grid(fields: np.ndarray, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """Pointwise minimum slack of ``fields[k]`` against [los[k], his[k]]."""
    fields = np.asarray(fields)
    out = None
    for k in range(fields.shape[0]):
        v = fields[k].astype(np.float64)
        slack = np.minimum(v - los[k], his[k] - v)
        out = slack if out is None else np.minimum(out, slack)
    if out is None:
        raise ValueError("need at least one limit")
    return out


def mc_extract(
    margin: np.ndarray, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """March all cells of ``margin`` and return the zero level set.

    Returns ``(positions, lattice)``: float64 ``(nverts, 3)`` triangle
    soup (consecutive triples form triangles, wound interior->exterior)
    plus the matching lattice-space coordinates.  Cells are visited
    x-fastest and each cell contributes its case's triangles in table
    order, so the output order is fully deterministic.
    """
    m = np.ascontiguousarray(margin, dtype=np.float64)
    nz, ny, nx = m.shape
    ext = (m <= 0.0).astype(np.int32)

    cases = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.int32)
    from .tables import CORNER_OFFSETS

    for c, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        cases |= ext[oz : oz + nz - 1, oy : oy + ny - 1, ox : ox + nx - 1] << c

    active = (cases != 0) & (cases != 255)
    az, ay, ax = np.nonzero(active)  # z-major == canonical x-fastest cell order
    if az.size == 0:
        empty = np.empty((0, 3), dtype=np.float64)
        return empty, empty.copy()

    acase = cases[az, ay, ax]
    counts = _TRI_COUNT[acase]
    total = int(counts.sum())
    starts = np.concatenate(([0], np.cumsum(counts)))[:-1]

    cell = np.repeat(np.arange(az.size), counts)
    slot = np.arange(total) - np.repeat(starts, counts)
    edge = _TRI_FLAT[acase[cell], slot].astype(np.int64)

    base = _EDGE_BASE[edge]
    lx0 = ax[cell] + base[:, 0]
    ly0 = ay[cell] + base[:, 1]
    lz0 = az[cell] + base[:, 2]
    axis = _EDGE_AXIS[edge]

    lx1 = lx0 + (axis == 0)
    ly1 = ly0 + (axis == 1)
    lz1 = lz0 + (axis == 2)

    m0 = m[lz0, ly0, lx0]
    m1 = m[lz1, ly1, lx1]
    t = m0 / (m0 - m1)

    lat = np.empty((total, 3), dtype=np.float64)
    lat[:, 0] = lx0
    lat[:, 1] = ly0
    lat[:, 2] = lz0
    lat[np.arange(total), axis] += t

    pos = np.empty((total, 3), dtype=np.float64)
    pos[:, 0] = xs[lx0]
    pos[:, 1] = ys[ly0]
    pos[:, 2] = zs[lz0]
    coords = (xs, ys, zs)
    for a in range(3):
        sel = axis == a
        c0 = coords[a][(lx0, ly0, lz0)[a][sel]]
        c1 = coords[a][(lx1, ly1, lz1)[a][sel]]
        pos[sel, a] = c0 + t[sel] * (c1 - c0)
    return pos, lat


def corner_gradients(
    margin: np.ndarray, hx: float, hy: float, hz: float
) -> np.ndarray:
    """Lattice gradient of the margin, central differences, one-sided rims."""
    m = np.asarray(margin, dtype=np.float64)
    g = np.empty((3,) + m.shape, dtype=np.float64)
    for a, h in ((0, hx), (1, hy), (2, hz)):
        ax = 2 - a  # component a differentiates along array axis (z,y,x)[2-a]
        c2 = 0.5 / h
        c1 = 1.0 / h
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        mid = [slice(None)] * 3
        lo[ax], hi[ax], mid[ax] = slice(0, -2), slice(2, None), slice(1, -1)
        g[(a,) + tuple(mid)] = (m[tuple(hi)] - m[tuple(lo)]) * c2
        first = [slice(None)] * 3
        second = [slice(None)] * 3
        first[ax], second[ax] = 0, 1
        g[(a,) + tuple(first)] = (m[tuple(second)] - m[tuple(first)]) * c1
        last = [slice(None)] * 3
        prev = [slice(None)] * 3
        last[ax], prev[ax] = -1, -2
        g[(a,) + tuple(last)] = (m[tuple(last)] - m[tuple(prev)]) * c1
    return g


def trilinear_multi(values: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of channel-first ``values`` at lattice points."""
    values = np.asarray(values)
    nz, ny, nx = values.shape[1:]
    ix = np.clip(np.floor(lat[:, 0]), 0, nx - 2).astype(np.int64)
    iy = np.clip(np.floor(lat[:, 1]), 0, ny - 2).astype(np.int64)
    iz = np.clip(np.floor(lat[:, 2]), 0, nz - 2).astype(np.int64)
    fx = lat[:, 0] - ix
    fy = lat[:, 1] - iy
    fz = lat[:, 2] - iz

    def corner(dx: int, dy: int, dz: int) -> np.ndarray:
        return values[:, iz + dz, iy + dy, ix + dx].astype(np.float64)

    c00 = corner(0, 0, 0) + fx * (corner(1, 0, 0) - corner(0, 0, 0))
    c10 = corner(0, 1, 0) + fx * (corner(1, 1, 0) - corner(0, 1, 0))
    c01 = corner(0, 0, 1) + fx * (corner(1, 0, 1) - corner(0, 0, 1))
    c11 = corner(0, 1, 1) + fx * (corner(1, 1, 1) - corner(0, 1, 1))
    c0 = c00 + fy * (c10 - c00)
    c1 = c01 + fy * (c11 - c01)
    return c0 + fz * (c1 - c0)


def drop_zero_area(pos: np.ndarray, lat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove exactly degenerate triangles (clamped border cells)."""
    if pos.shape[0] == 0:
        return pos, lat
    tris = pos.reshape(-1, 3, 3)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    cross = np.cross(e1, e2)
    keep = np.einsum("ij,ij->i", cross, cross) > 0.0
    if keep.all():
        return pos, lat
    mask = np.repeat(keep, 3)
    return pos[mask], lat[mask]


def margin_normals(
    margin: np.ndarray,
    lat: np.ndarray,
    pos: np.ndarray,
    hx: float,
    hy: float,
    hz: float,
) -> np.ndarray:
    """Unit normals: negated interpolated margin gradient, face fallback."""
    if lat.shape[0] == 0:
        return np.empty((0, 3), dtype=np.float32)
    grad = corner_gradients(margin, hx, hy, hz)
    g = trilinear_multi(grad, lat).T
    norm = np.sqrt(np.einsum("ij,ij->i", g, g))
    flat = norm == 0.0
    norm[flat] = 1.0
    normals = -g / norm[:, None]
    if flat.any():
        tris = pos.reshape(-1, 3, 3)
        fn = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        fl = np.sqrt(np.einsum("ij,ij->i", fn, fn))
        fl[fl == 0.0] = 1.0
        fn = np.repeat(fn / fl[:, None], 3, axis=0)
        normals[flat] = fn[flat]
    return normals.astype(np.float32)


def extract_block(
    stack: np.ndarray,
    limit_idx: np.ndarray,
    los: np.ndarray,
    his: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    zs: np.ndarray,
    hx: float,
    hy: float,
    hz: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Whole per-block pipeline in one call.

    ``stack`` holds every dataset field channel-first; ``limit_idx``
    selects the fields the margin is built from.  Returns float32
    ``(positions, normals, attrs)`` plus the float64 vertex lattice.  The
    compiled twin runs all of this without the GIL, which is the hot path
    extraction workers sit in.
    """
    stack = np.asarray(stack)
    margin = margin_grid(stack[np.asarray(limit_idx, dtype=np.int64)], los, his)
    pos, lat = mc_extract(margin, xs, ys, zs)
    pos, lat = drop_zero_area(pos, lat)
    normals = margin_normals(margin, lat, pos, hx, hy, hz)
    attrs = trilinear_multi(stack, lat).astype(np.float32)
    return pos.astype(np.float32), lat, normals, attrs
