# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled extraction kernels.

Loop-for-loop twin of ``pure.py``; all arithmetic is IEEE double and the
expressions are kept identical so both backends return bit-identical
arrays.  Every hot loop runs with the GIL released, which is what lets
extraction workers scale across threads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

from .tables import EDGE_AXIS, EDGE_BASE, TRI_TABLE, TRI_TABLE_FLAT

cnp.import_array()

cdef cnp.int8_t[:, ::1] _TRI_FLAT = np.asarray(TRI_TABLE_FLAT, dtype=np.int8)
cdef cnp.int64_t[::1] _TRI_COUNT = np.asarray(
    [len(r) for r in TRI_TABLE], dtype=np.int64
)
cdef cnp.int64_t[:, ::1] _EDGE_BASE = np.asarray(EDGE_BASE, dtype=np.int64)
cdef cnp.int64_t[::1] _EDGE_AXIS = np.asarray(EDGE_AXIS, dtype=np.int64)

ctypedef fused realsrc:
    cnp.float32_t
    cnp.float64_t


def margin_grid(fields, los, his):
    """Pointwise minimum slack of ``fields[k]`` against [los[k], his[k]]."""
    cdef const cnp.float32_t[:, :, :, ::1] f = np.ascontiguousarray(fields, dtype=np.float32)
    cdef const cnp.float64_t[::1] lo = np.ascontiguousarray(los, dtype=np.float64)
    cdef const cnp.float64_t[::1] hi = np.ascontiguousarray(his, dtype=np.float64)
    cdef Py_ssize_t nk = f.shape[0], nz = f.shape[1], ny = f.shape[2], nx = f.shape[3]
    if nk == 0:
        raise ValueError("need at least one limit")
    out_arr = np.empty((nz, ny, nx), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, z, y, x
    cdef double v, slack
    with nogil:
        for k in range(nk):
            for z in range(nz):
                for y in range(ny):
                    for x in range(nx):
                        v = <double> f[k, z, y, x]
                        slack = v - lo[k]
                        if hi[k] - v < slack:
                            slack = hi[k] - v
                        if k == 0 or slack < out[z, y, x]:
                            out[z, y, x] = slack
    return out_arr


def mc_extract(margin, xs, ys, zs):
    """March all cells of ``margin``; see the fallback for the contract."""
    cdef const cnp.float64_t[:, :, ::1] m = np.ascontiguousarray(margin, dtype=np.float64)
    cdef const cnp.float64_t[::1] cx = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const cnp.float64_t[::1] cy = np.ascontiguousarray(ys, dtype=np.float64)
    cdef const cnp.float64_t[::1] cz = np.ascontiguousarray(zs, dtype=np.float64)
    cdef Py_ssize_t nz = m.shape[0], ny = m.shape[1], nx = m.shape[2]
    cdef Py_ssize_t ncz = nz - 1, ncy = ny - 1, ncx = nx - 1

    case_arr = np.zeros((ncz, ncy, ncx), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] cases = case_arr
    cdef Py_ssize_t iz, iy, ix
    cdef int case
    cdef Py_ssize_t total = 0
    with nogil:
        for iz in range(ncz):
            for iy in range(ncy):
                for ix in range(ncx):
                    case = 0
                    if m[iz, iy, ix] <= 0.0:
                        case |= 1
                    if m[iz, iy, ix + 1] <= 0.0:
                        case |= 2
                    if m[iz, iy + 1, ix + 1] <= 0.0:
                        case |= 4
                    if m[iz, iy + 1, ix] <= 0.0:
                        case |= 8
                    if m[iz + 1, iy, ix] <= 0.0:
                        case |= 16
                    if m[iz + 1, iy, ix + 1] <= 0.0:
                        case |= 32
                    if m[iz + 1, iy + 1, ix + 1] <= 0.0:
                        case |= 64
                    if m[iz + 1, iy + 1, ix] <= 0.0:
                        case |= 128
                    cases[iz, iy, ix] = case
                    total += _TRI_COUNT[case]

    pos_arr = np.empty((total, 3), dtype=np.float64)
    lat_arr = np.empty((total, 3), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] pos = pos_arr
    cdef cnp.float64_t[:, ::1] lat = lat_arr
    cdef Py_ssize_t n = 0, s, count
    cdef int e, axis
    cdef Py_ssize_t lx0, ly0, lz0, lx1, ly1, lz1
    cdef double m0, m1, t, c0, c1
    with nogil:
        for iz in range(ncz):
            for iy in range(ncy):
                for ix in range(ncx):
                    case = cases[iz, iy, ix]
                    count = _TRI_COUNT[case]
                    for s in range(count):
                        e = _TRI_FLAT[case, s]
                        lx0 = ix + _EDGE_BASE[e, 0]
                        ly0 = iy + _EDGE_BASE[e, 1]
                        lz0 = iz + _EDGE_BASE[e, 2]
                        axis = <int> _EDGE_AXIS[e]
                        lx1 = lx0
                        ly1 = ly0
                        lz1 = lz0
                        if axis == 0:
                            lx1 += 1
                        elif axis == 1:
                            ly1 += 1
                        else:
                            lz1 += 1
                        m0 = m[lz0, ly0, lx0]
                        m1 = m[lz1, ly1, lx1]
                        t = m0 / (m0 - m1)
                        lat[n, 0] = <double> lx0
                        lat[n, 1] = <double> ly0
                        lat[n, 2] = <double> lz0
                        lat[n, axis] = lat[n, axis] + t
                        if axis == 0:
                            c0 = cx[lx0]
                            c1 = cx[lx1]
                            pos[n, 0] = c0 + t * (c1 - c0)
                            pos[n, 1] = cy[ly0]
                            pos[n, 2] = cz[lz0]
                        elif axis == 1:
                            c0 = cy[ly0]
                            c1 = cy[ly1]
                            pos[n, 0] = cx[lx0]
                            pos[n, 1] = c0 + t * (c1 - c0)
                            pos[n, 2] = cz[lz0]
                        else:
                            c0 = cz[lz0]
                            c1 = cz[lz1]
                            pos[n, 0] = cx[lx0]
                            pos[n, 1] = cy[ly0]
                            pos[n, 2] = c0 + t * (c1 - c0)
                        n += 1
    return pos_arr, lat_arr


def corner_gradients(margin, hx, hy, hz):
    """Lattice gradient of the margin, central differences, one-sided rims."""
    cdef const cnp.float64_t[:, :, ::1] m = np.ascontiguousarray(margin, dtype=np.float64)
    cdef Py_ssize_t nz = m.shape[0], ny = m.shape[1], nx = m.shape[2]
    g_arr = np.empty((3, nz, ny, nx), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] g = g_arr
    cdef double c2x = 0.5 / hx, c1x = 1.0 / hx
    cdef double c2y = 0.5 / hy, c1y = 1.0 / hy
    cdef double c2z = 0.5 / hz, c1z = 1.0 / hz
    cdef Py_ssize_t z, y, x
    with nogil:
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if x == 0:
                        g[0, z, y, x] = (m[z, y, 1] - m[z, y, 0]) * c1x
                    elif x == nx - 1:
                        g[0, z, y, x] = (m[z, y, nx - 1] - m[z, y, nx - 2]) * c1x
                    else:
                        g[0, z, y, x] = (m[z, y, x + 1] - m[z, y, x - 1]) * c2x
                    if y == 0:
                        g[1, z, y, x] = (m[z, 1, x] - m[z, 0, x]) * c1y
                    elif y == ny - 1:
                        g[1, z, y, x] = (m[z, ny - 1, x] - m[z, ny - 2, x]) * c1y
                    else:
                        g[1, z, y, x] = (m[z, y + 1, x] - m[z, y - 1, x]) * c2y
                    if z == 0:
                        g[2, z, y, x] = (m[1, y, x] - m[0, y, x]) * c1z
                    elif z == nz - 1:
                        g[2, z, y, x] = (m[nz - 1, y, x] - m[nz - 2, y, x]) * c1z
                    else:
                        g[2, z, y, x] = (m[z + 1, y, x] - m[z - 1, y, x]) * c2z
    return g_arr


def _trilinear_impl(const realsrc[:, :, :, ::1] v, const cnp.float64_t[:, ::1] lat, out_arr):
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t nc = v.shape[0], nz = v.shape[1], ny = v.shape[2], nx = v.shape[3]
    cdef Py_ssize_t nv = lat.shape[0]
    cdef Py_ssize_t i, c, ix, iy, iz
    cdef double fx, fy, fz
    cdef double v000, v100, v010, v110, v001, v101, v011, v111
    cdef double c00, c10, c01, c11, c0, c1
    with nogil:
        for i in range(nv):
            ix = <Py_ssize_t> floor(lat[i, 0])
            if ix < 0:
                ix = 0
            elif ix > nx - 2:
                ix = nx - 2
            iy = <Py_ssize_t> floor(lat[i, 1])
            if iy < 0:
                iy = 0
            elif iy > ny - 2:
                iy = ny - 2
            iz = <Py_ssize_t> floor(lat[i, 2])
            if iz < 0:
                iz = 0
            elif iz > nz - 2:
                iz = nz - 2
            fx = lat[i, 0] - <double> ix
            fy = lat[i, 1] - <double> iy
            fz = lat[i, 2] - <double> iz
            for c in range(nc):
                v000 = <double> v[c, iz, iy, ix]
                v100 = <double> v[c, iz, iy, ix + 1]
                v010 = <double> v[c, iz, iy + 1, ix]
                v110 = <double> v[c, iz, iy + 1, ix + 1]
                v001 = <double> v[c, iz + 1, iy, ix]
                v101 = <double> v[c, iz + 1, iy, ix + 1]
                v011 = <double> v[c, iz + 1, iy + 1, ix]
                v111 = <double> v[c, iz + 1, iy + 1, ix + 1]
                c00 = v000 + fx * (v100 - v000)
                c10 = v010 + fx * (v110 - v010)
                c01 = v001 + fx * (v101 - v001)
                c11 = v011 + fx * (v111 - v011)
                c0 = c00 + fy * (c10 - c00)
                c1 = c01 + fy * (c11 - c01)
                out[c, i] = c0 + fz * (c1 - c0)
    return out_arr


def trilinear_multi(values, lat):
    """Trilinear interpolation of channel-first ``values`` at lattice points."""
    values = np.ascontiguousarray(values)
    if values.dtype != np.float32:
        values = np.ascontiguousarray(values, dtype=np.float64)
    lat = np.ascontiguousarray(lat, dtype=np.float64)
    out = np.empty((values.shape[0], lat.shape[0]), dtype=np.float64)
    return _trilinear_impl(values, lat, out)


def extract_block(stack, limit_idx, los, his, xs, ys, zs, hx, hy, hz):
    """Whole per-block pipeline in one call, GIL-free end to end.

    Mirrors the fallback composition in ``pure.extract_block`` bit for
    bit: margin, marching cubes, degenerate-triangle drop, gradient
    normals with face fallback, and per-field attribute sampling.
    """
    cdef const cnp.float32_t[:, :, :, ::1] f = np.ascontiguousarray(stack, dtype=np.float32)
    cdef const cnp.int64_t[::1] lidx = np.ascontiguousarray(limit_idx, dtype=np.int64)
    cdef const cnp.float64_t[::1] lo = np.ascontiguousarray(los, dtype=np.float64)
    cdef const cnp.float64_t[::1] hi = np.ascontiguousarray(his, dtype=np.float64)
    cdef const cnp.float64_t[::1] cx = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const cnp.float64_t[::1] cy = np.ascontiguousarray(ys, dtype=np.float64)
    cdef const cnp.float64_t[::1] cz = np.ascontiguousarray(zs, dtype=np.float64)
    cdef double chx = hx, chy = hy, chz = hz

    cdef Py_ssize_t nk = f.shape[0], nz = f.shape[1], ny = f.shape[2], nx = f.shape[3]
    cdef Py_ssize_t nl = lidx.shape[0]
    if nl == 0:
        raise ValueError("need at least one limit")

    margin_arr = np.empty((nz, ny, nx), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] m = margin_arr
    case_arr = np.empty((nz - 1, ny - 1, nx - 1), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] cases = case_arr

    cdef Py_ssize_t k, z, y, x, iz, iy, ix
    cdef double v, slack
    cdef int case
    cdef Py_ssize_t total = 0
    with nogil:
        for k in range(nl):
            for z in range(nz):
                for y in range(ny):
                    for x in range(nx):
                        v = <double> f[lidx[k], z, y, x]
                        slack = v - lo[k]
                        if hi[k] - v < slack:
                            slack = hi[k] - v
                        if k == 0 or slack < m[z, y, x]:
                            m[z, y, x] = slack
        for iz in range(nz - 1):
            for iy in range(ny - 1):
                for ix in range(nx - 1):
                    case = 0
                    if m[iz, iy, ix] <= 0.0:
                        case |= 1
                    if m[iz, iy, ix + 1] <= 0.0:
                        case |= 2
                    if m[iz, iy + 1, ix + 1] <= 0.0:
                        case |= 4
                    if m[iz, iy + 1, ix] <= 0.0:
                        case |= 8
                    if m[iz + 1, iy, ix] <= 0.0:
                        case |= 16
                    if m[iz + 1, iy, ix + 1] <= 0.0:
                        case |= 32
                    if m[iz + 1, iy + 1, ix + 1] <= 0.0:
                        case |= 64
                    if m[iz + 1, iy + 1, ix] <= 0.0:
                        case |= 128
                    cases[iz, iy, ix] = case
                    total += _TRI_COUNT[case]

    pos_tmp = np.empty((total, 3), dtype=np.float64)
    lat_tmp = np.empty((total, 3), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] pos = pos_tmp
    cdef cnp.float64_t[:, ::1] lat = lat_tmp
    cdef Py_ssize_t n = 0, s, count, t, w, j
    cdef int e, axis
    cdef Py_ssize_t lx0, ly0, lz0, lx1, ly1, lz1
    cdef double m0, m1, tt, c0, c1
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, crx, cry, crz
    cdef Py_ssize_t nkept_tris = 0
    with nogil:
        for iz in range(nz - 1):
            for iy in range(ny - 1):
                for ix in range(nx - 1):
                    case = cases[iz, iy, ix]
                    count = _TRI_COUNT[case]
                    for s in range(count):
                        e = _TRI_FLAT[case, s]
                        lx0 = ix + _EDGE_BASE[e, 0]
                        ly0 = iy + _EDGE_BASE[e, 1]
                        lz0 = iz + _EDGE_BASE[e, 2]
                        axis = <int> _EDGE_AXIS[e]
                        lx1 = lx0
                        ly1 = ly0
                        lz1 = lz0
                        if axis == 0:
                            lx1 += 1
                        elif axis == 1:
                            ly1 += 1
                        else:
                            lz1 += 1
                        m0 = m[lz0, ly0, lx0]
                        m1 = m[lz1, ly1, lx1]
                        tt = m0 / (m0 - m1)
                        lat[n, 0] = <double> lx0
                        lat[n, 1] = <double> ly0
                        lat[n, 2] = <double> lz0
                        lat[n, axis] = lat[n, axis] + tt
                        if axis == 0:
                            c0 = cx[lx0]
                            c1 = cx[lx1]
                            pos[n, 0] = c0 + tt * (c1 - c0)
                            pos[n, 1] = cy[ly0]
                            pos[n, 2] = cz[lz0]
                        elif axis == 1:
                            c0 = cy[ly0]
                            c1 = cy[ly1]
                            pos[n, 0] = cx[lx0]
                            pos[n, 1] = c0 + tt * (c1 - c0)
                            pos[n, 2] = cz[lz0]
                        else:
                            c0 = cz[lz0]
                            c1 = cz[lz1]
                            pos[n, 0] = cx[lx0]
                            pos[n, 1] = cy[ly0]
                            pos[n, 2] = c0 + tt * (c1 - c0)
                        n += 1
        # stable in-place compaction of non-degenerate triangles
        w = 0
        for t in range(total // 3):
            e1x = pos[3 * t + 1, 0] - pos[3 * t, 0]
            e1y = pos[3 * t + 1, 1] - pos[3 * t, 1]
            e1z = pos[3 * t + 1, 2] - pos[3 * t, 2]
            e2x = pos[3 * t + 2, 0] - pos[3 * t, 0]
            e2y = pos[3 * t + 2, 1] - pos[3 * t, 1]
            e2z = pos[3 * t + 2, 2] - pos[3 * t, 2]
            crx = e1y * e2z - e1z * e2y
            cry = e1z * e2x - e1x * e2z
            crz = e1x * e2y - e1y * e2x
            if crx * crx + cry * cry + crz * crz > 0.0:
                if w != t:
                    for s in range(3):
                        for j in range(3):
                            pos[3 * w + s, j] = pos[3 * t + s, j]
                            lat[3 * w + s, j] = lat[3 * t + s, j]
                w += 1
        nkept_tris = w

    cdef Py_ssize_t nv = 3 * nkept_tris
    grad_arr = np.empty((3, nz, ny, nx), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] g = grad_arr
    pos_out = np.empty((nv, 3), dtype=np.float32)
    lat_out = np.empty((nv, 3), dtype=np.float64)
    nrm_out = np.empty((nv, 3), dtype=np.float32)
    attr_out = np.empty((nk, nv), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] pos32 = pos_out
    cdef cnp.float64_t[:, ::1] lat64 = lat_out
    cdef cnp.float32_t[:, ::1] nrm32 = nrm_out
    cdef cnp.float32_t[:, ::1] attr32 = attr_out

    cdef double c2x = 0.5 / chx, c1x = 1.0 / chx
    cdef double c2y = 0.5 / chy, c1y = 1.0 / chy
    cdef double c2z = 0.5 / chz, c1z = 1.0 / chz
    cdef Py_ssize_t i, jx, jy, jz
    cdef double fx, fy, fz, gx, gy, gz, nrm
    cdef double v000, v100, v010, v110, v001, v101, v011, v111
    cdef double c00, c10, c01, c11, d0, d1
    with nogil:
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if x == 0:
                        g[0, z, y, x] = (m[z, y, 1] - m[z, y, 0]) * c1x
                    elif x == nx - 1:
                        g[0, z, y, x] = (m[z, y, nx - 1] - m[z, y, nx - 2]) * c1x
                    else:
                        g[0, z, y, x] = (m[z, y, x + 1] - m[z, y, x - 1]) * c2x
                    if y == 0:
                        g[1, z, y, x] = (m[z, 1, x] - m[z, 0, x]) * c1y
                    elif y == ny - 1:
                        g[1, z, y, x] = (m[z, ny - 1, x] - m[z, ny - 2, x]) * c1y
                    else:
                        g[1, z, y, x] = (m[z, y + 1, x] - m[z, y - 1, x]) * c2y
                    if z == 0:
                        g[2, z, y, x] = (m[1, y, x] - m[0, y, x]) * c1z
                    elif z == nz - 1:
                        g[2, z, y, x] = (m[nz - 1, y, x] - m[nz - 2, y, x]) * c1z
                    else:
                        g[2, z, y, x] = (m[z + 1, y, x] - m[z - 1, y, x]) * c2z

        for i in range(nv):
            for j in range(3):
                pos32[i, j] = <float> pos[i, j]
                lat64[i, j] = lat[i, j]

        for i in range(nv):
            jx = <Py_ssize_t> floor(lat[i, 0])
            if jx < 0:
                jx = 0
            elif jx > nx - 2:
                jx = nx - 2
            jy = <Py_ssize_t> floor(lat[i, 1])
            if jy < 0:
                jy = 0
            elif jy > ny - 2:
                jy = ny - 2
            jz = <Py_ssize_t> floor(lat[i, 2])
            if jz < 0:
                jz = 0
            elif jz > nz - 2:
                jz = nz - 2
            fx = lat[i, 0] - <double> jx
            fy = lat[i, 1] - <double> jy
            fz = lat[i, 2] - <double> jz

            # gradient channels through the same lerp chain
            gx = _lerp3(g, 0, jz, jy, jx, fx, fy, fz)
            gy = _lerp3(g, 1, jz, jy, jx, fx, fy, fz)
            gz = _lerp3(g, 2, jz, jy, jx, fx, fy, fz)
            nrm = sqrt(gx * gx + gy * gy + gz * gz)
            if nrm == 0.0:
                t = i // 3
                e1x = pos[3 * t + 1, 0] - pos[3 * t, 0]
                e1y = pos[3 * t + 1, 1] - pos[3 * t, 1]
                e1z = pos[3 * t + 1, 2] - pos[3 * t, 2]
                e2x = pos[3 * t + 2, 0] - pos[3 * t, 0]
                e2y = pos[3 * t + 2, 1] - pos[3 * t, 1]
                e2z = pos[3 * t + 2, 2] - pos[3 * t, 2]
                crx = e1y * e2z - e1z * e2y
                cry = e1z * e2x - e1x * e2z
                crz = e1x * e2y - e1y * e2x
                nrm = sqrt(crx * crx + cry * cry + crz * crz)
                if nrm == 0.0:
                    nrm = 1.0
                nrm32[i, 0] = <float> (crx / nrm)
                nrm32[i, 1] = <float> (cry / nrm)
                nrm32[i, 2] = <float> (crz / nrm)
            else:
                nrm32[i, 0] = <float> ((-gx) / nrm)
                nrm32[i, 1] = <float> ((-gy) / nrm)
                nrm32[i, 2] = <float> ((-gz) / nrm)

            for k in range(nk):
                v000 = <double> f[k, jz, jy, jx]
                v100 = <double> f[k, jz, jy, jx + 1]
                v010 = <double> f[k, jz, jy + 1, jx]
                v110 = <double> f[k, jz, jy + 1, jx + 1]
                v001 = <double> f[k, jz + 1, jy, jx]
                v101 = <double> f[k, jz + 1, jy, jx + 1]
                v011 = <double> f[k, jz + 1, jy + 1, jx]
                v111 = <double> f[k, jz + 1, jy + 1, jx + 1]
                c00 = v000 + fx * (v100 - v000)
                c10 = v010 + fx * (v110 - v010)
                c01 = v001 + fx * (v101 - v001)
                c11 = v011 + fx * (v111 - v011)
                d0 = c00 + fy * (c10 - c00)
                d1 = c01 + fy * (c11 - c01)
                attr32[k, i] = <float> (d0 + fz * (d1 - d0))

    return pos_out, lat_out, nrm_out, attr_out


cdef inline double _lerp3(
    cnp.float64_t[:, :, :, ::1] vals,
    Py_ssize_t c,
    Py_ssize_t jz,
    Py_ssize_t jy,
    Py_ssize_t jx,
    double fx,
    double fy,
    double fz,
) noexcept nogil:
    cdef double v000 = vals[c, jz, jy, jx]
    cdef double v100 = vals[c, jz, jy, jx + 1]
    cdef double v010 = vals[c, jz, jy + 1, jx]
    cdef double v110 = vals[c, jz, jy + 1, jx + 1]
    cdef double v001 = vals[c, jz + 1, jy, jx]
    cdef double v101 = vals[c, jz + 1, jy, jx + 1]
    cdef double v011 = vals[c, jz + 1, jy + 1, jx]
    cdef double v111 = vals[c, jz + 1, jy + 1, jx + 1]
    cdef double c00 = v000 + fx * (v100 - v000)
    cdef double c10 = v010 + fx * (v110 - v010)
    cdef double c01 = v001 + fx * (v101 - v001)
    cdef double c11 = v011 + fx * (v111 - v011)
    cdef double c0 = c00 + fy * (c10 - c00)
    cdef double c1 = c01 + fy * (c11 - c01)
    return c0 + fz * (c1 - c0)
