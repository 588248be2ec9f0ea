"""Kernel backends: bit-parity with each other and with a reference walk."""

import itertools

import numpy as np
import pytest

from util import reference_mc, smooth_field

from voxcut.kernels import available_backends
from voxcut.kernels.tables import (
    CORNER_OFFSETS,
    EDGE_CORNERS,
    EDGE_TABLE,
    TRI_TABLE,
)

BACKENDS = available_backends()


def backend_pairs():
    names = list(BACKENDS)
    return [(a, b) for a, b in itertools.combinations(names, 2)]


class TestTables:
    def test_shapes(self):
        assert len(EDGE_TABLE) == 256
        assert len(TRI_TABLE) == 256
        assert TRI_TABLE[0] == () and TRI_TABLE[255] == ()

    def test_tri_entries_use_flagged_edges(self):
        for case in range(256):
            for e in TRI_TABLE[case]:
                assert EDGE_TABLE[case] & (1 << e), (case, e)

    def test_complement_edge_symmetry(self):
        for case in range(256):
            assert EDGE_TABLE[case] == EDGE_TABLE[255 - case]

    def test_face_consistency_exhaustive(self):
        """Adjacent cells must induce identical segments on the shared face.

        This is what makes the extracted soup watertight across cells and
        the parity oracle sound.  Checked for all sign assignments of two
        adjacent cells along every axis.
        """
        corners = CORNER_OFFSETS

        def cell_segments(origin, signs, axis, plane):
            vals = [
                signs[tuple(origin[a] + corners[c][a] for a in range(3))]
                for c in range(8)
            ]
            case = 0
            for c in range(8):
                if vals[c] <= 0:
                    case |= 1 << c

            def vpos(e):
                a, b = EDGE_CORNERS[e]
                pa = tuple(origin[k] + corners[a][k] for k in range(3))
                pb = tuple(origin[k] + corners[b][k] for k in range(3))
                return tuple((pa[k] + pb[k]) / 2 for k in range(3))

            segs = []
            t = TRI_TABLE[case]
            for i in range(0, len(t), 3):
                tri = [vpos(t[i]), vpos(t[i + 1]), vpos(t[i + 2])]
                on = [p for p in tri if p[axis] == plane]
                assert len(on) < 3, "cap triangle in a face plane"
                if len(on) == 2:
                    segs.append(tuple(sorted(on)))
            segs.sort()
            return segs

        for axis in range(3):
            step = [0, 0, 0]
            step[axis] = 1
            origin_b = tuple(step)
            pts = sorted(
                {tuple(corners[c]) for c in range(8)}
                | {tuple(origin_b[k] + corners[c][k] for k in range(3)) for c in range(8)}
            )
            for bits in range(1 << len(pts)):
                signs = {p: (1 if (bits >> i) & 1 else -1) for i, p in enumerate(pts)}
                sa = cell_segments((0, 0, 0), signs, axis, 1)
                sb = cell_segments(origin_b, signs, axis, 1)
                assert sa == sb, f"axis {axis} face mismatch for bits {bits}"


class TestSingleCell:
    def test_one_positive_corner_cuts_at_midpoints(self):
        mod = next(iter(BACKENDS.values()))
        m = np.full((2, 2, 2), -1.0)
        m[0, 0, 0] = 1.0
        ax = np.array([0.0, 1.0])
        pos, lat = mod.mc_extract(m, ax, ax, ax)
        assert pos.shape == (3, 3)
        expect = {(0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5)}
        assert {tuple(p) for p in pos} == expect

    def test_winding_faces_exterior(self):
        # interior corner at the origin: the triangle normal must point away
        mod = next(iter(BACKENDS.values()))
        m = np.full((2, 2, 2), -1.0)
        m[0, 0, 0] = 1.0
        ax = np.array([0.0, 1.0])
        pos, _ = mod.mc_extract(m, ax, ax, ax)
        n = np.cross(pos[1] - pos[0], pos[2] - pos[0])
        assert (n > 0).all()

    def test_uniform_sign_is_empty(self):
        mod = next(iter(BACKENDS.values()))
        ax = np.array([0.0, 1.0, 2.0])
        for value in (1.0, -1.0):
            pos, lat = mod.mc_extract(np.full((3, 3, 3), value), ax, ax, ax)
            assert pos.shape == (0, 3) and lat.shape == (0, 3)


class TestBackendParity:
    @pytest.mark.parametrize("pair", backend_pairs())
    def test_mc_bitwise_equal(self, pair, rng):
        a, b = (BACKENDS[p] for p in pair)
        for _ in range(8):
            n = int(rng.integers(2, 20))
            m = rng.normal(size=(n, n, n))
            xs = np.cumsum(rng.random(n))
            ys = np.cumsum(rng.random(n))
            zs = np.cumsum(rng.random(n))
            pa, la = a.mc_extract(m, xs, ys, zs)
            pb, lb = b.mc_extract(m, xs, ys, zs)
            assert pa.shape == pb.shape
            assert (pa == pb).all() and (la == lb).all()

    @pytest.mark.parametrize("pair", backend_pairs())
    def test_margin_gradients_trilinear_bitwise_equal(self, pair, rng):
        a, b = (BACKENDS[p] for p in pair)
        fields = rng.normal(size=(3, 7, 8, 9)).astype(np.float32)
        lo = rng.normal(size=3)
        hi = lo + rng.random(3) * 2
        ma = a.margin_grid(fields, lo, hi)
        mb = b.margin_grid(fields, lo, hi)
        assert (ma == mb).all()
        ga = a.corner_gradients(ma, 0.5, 0.25, 2.0)
        gb = b.corner_gradients(mb, 0.5, 0.25, 2.0)
        assert (ga == gb).all()
        lat = np.stack(
            [rng.random(64) * 8, rng.random(64) * 7, rng.random(64) * 6], axis=1
        )
        for values in (fields, ga):
            ta = a.trilinear_multi(values, lat)
            tb = b.trilinear_multi(values, lat)
            assert (ta == tb).all()

    def test_matches_reference_walk(self, rng):
        for name, mod in BACKENDS.items():
            for _ in range(4):
                n = int(rng.integers(2, 14))
                m = smooth_field(rng, (n, n, n)).astype(np.float64)
                m -= np.median(m)
                ax = np.arange(n, dtype=np.float64)
                pos, lat = mod.mc_extract(m, ax, ax, ax)
                rpos, rlat = reference_mc(m, ax, ax, ax)
                assert pos.shape == rpos.shape, name
                assert (pos == rpos).all() and (lat == rlat).all(), name


class TestExtractBlock:
    @pytest.mark.parametrize("pair", backend_pairs())
    def test_fused_pipeline_bitwise_equal(self, pair, rng):
        a, b = (BACKENDS[p] for p in pair)
        for _ in range(6):
            n = int(rng.integers(4, 18))
            stack = np.stack(
                [smooth_field(rng, (n, n, n)) for _ in range(3)]
            ).astype(np.float32)
            lidx = np.asarray(sorted(rng.choice(3, size=2, replace=False)), np.int64)
            los = np.quantile(stack[lidx].reshape(2, -1), 0.2, axis=1)
            his = np.quantile(stack[lidx].reshape(2, -1), 0.8, axis=1)
            xs = np.cumsum(rng.random(n))
            ys = np.cumsum(rng.random(n))
            zs = np.cumsum(rng.random(n))
            outs = [
                mod.extract_block(stack, lidx, los, his, xs, ys, zs, 0.5, 0.8, 1.1)
                for mod in (a, b)
            ]
            for xa, xb in zip(*outs):
                assert xa.dtype == xb.dtype and xa.shape == xb.shape
                assert (xa == xb).all()

    def test_fused_matches_staged_pipeline(self, rng):
        """extract_block equals composing the public stage functions."""
        from voxcut.extract import (
            compute_normals,
            extract_surface,
            margin_field,
            node_world_coords,
            sample_attributes,
        )
        from voxcut.kernels import extract_block
        from voxcut.model import BlockData, DatasetMeta, Limit, NodeId, SubVolumeSpec

        n = 13
        fields = {name: smooth_field(rng, (n, n, n)) for name in ("a", "b")}
        meta = DatasetMeta.create((n, n, n), (1, 0.5, 2), (0, 0, 0), n - 1, ["a", "b"], 1)
        block = BlockData(NodeId(0, 0, 0, 0), 0, fields)
        spec = SubVolumeSpec(0, (Limit("a", -0.05, 0.4),))
        margin = margin_field(block, spec)
        coords = node_world_coords(meta, block.node)
        pos, lat = extract_surface(margin, coords)
        normals = compute_normals(lat, pos, margin, (1, 0.5, 2))
        attrs, _ = sample_attributes(block, lat, meta)

        fpos, flat, fnorm, fattr = extract_block(
            np.stack([fields["a"], fields["b"]]),
            np.asarray([0], np.int64),
            np.asarray([-0.05]),
            np.asarray([0.4]),
            *coords,
            1.0,
            0.5,
            2.0,
        )
        assert (fpos == pos.astype(np.float32)).all()
        assert (flat == lat).all()
        assert (fnorm == normals).all()
        assert (fattr[0] == attrs["a"]).all()
        assert (fattr[1] == attrs["b"]).all()


class TestMarginGrid:
    def test_values(self, rng):
        mod = next(iter(BACKENDS.values()))
        f = rng.normal(size=(2, 4, 4, 4)).astype(np.float32)
        lo = np.array([-0.5, 0.0])
        hi = np.array([0.5, 2.0])
        got = mod.margin_grid(f, lo, hi)
        v = f.astype(np.float64)
        expect = np.minimum(
            np.minimum(v[0] - lo[0], hi[0] - v[0]),
            np.minimum(v[1] - lo[1], hi[1] - v[1]),
        )
        assert (got == expect).all()


class TestTrilinear:
    def test_exact_on_lattice_points(self, rng):
        mod = next(iter(BACKENDS.values()))
        vals = rng.normal(size=(1, 5, 5, 5))
        lat = np.array([[2.0, 3.0, 1.0], [0.0, 0.0, 0.0], [4.0, 4.0, 4.0]])
        got = mod.trilinear_multi(vals, lat)
        assert got[0, 0] == vals[0, 1, 3, 2]
        assert got[0, 1] == vals[0, 0, 0, 0]
        # the high border interpolates as v3 + 1.0*(v4 - v3): close, not bitwise
        assert np.isclose(got[0, 2], vals[0, 4, 4, 4], atol=1e-12)

    def test_exact_on_linear_field(self, rng):
        mod = next(iter(BACKENDS.values()))
        n = 6
        zs, ys, xs = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        vals = (2.0 * xs - 3.0 * ys + 0.5 * zs + 1.0)[None].astype(np.float64)
        lat = rng.random((40, 3)) * (n - 1)
        got = mod.trilinear_multi(vals, lat)
        expect = 2.0 * lat[:, 0] - 3.0 * lat[:, 1] + 0.5 * lat[:, 2] + 1.0
        assert np.allclose(got[0], expect, atol=1e-12)
