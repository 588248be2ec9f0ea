import math

import numpy as np
import pytest

from util import composite_premultiplied, raymarch_slab

from voxcut.client.resolve import Fragment, FragmentList, pair_segments, resolve_fragments


def exp_alpha(sigmas):
    return lambda sid, thickness: 1.0 - math.exp(-sigmas[sid] * thickness)


def filled(fragments, capacity=16, far=100.0):
    fl = FragmentList(capacity=capacity, far=far)
    for depth, sid, color in fragments:
        fl.insert(depth, sid, color)
    return fl


class TestPairing:
    def test_entry_exit_pairs(self):
        fl = filled([(2.0, 0, (1, 0, 0)), (5.0, 0, (0, 1, 0))])
        segs = pair_segments(fl.fragments, fl.far)
        assert len(segs) == 1
        assert (segs[0].entry, segs[0].exit) == (2.0, 5.0)
        assert segs[0].color == (1, 0, 0)  # entry fragment's color

    def test_unpaired_trailing_closes_at_far_plane(self):
        fl = filled([(2.0, 0, (1, 1, 1))], far=50.0)
        segs = pair_segments(fl.fragments, fl.far)
        assert len(segs) == 1
        assert segs[0].exit == 50.0

    def test_interleaved_ids(self):
        fl = filled(
            [(1.0, 1, (1, 0, 0)), (2.0, 2, (0, 1, 0)), (3.0, 2, (0, 0, 0)), (4.0, 1, (0, 0, 0))]
        )
        segs = pair_segments(fl.fragments, fl.far)
        assert [(s.subvolume_id, s.entry, s.exit) for s in segs] == [
            (1, 1.0, 4.0),
            (2, 2.0, 3.0),
        ]

    def test_reentry_same_id(self):
        fl = filled(
            [(1.0, 0, (1, 0, 0)), (2.0, 0, (0, 0, 0)), (5.0, 0, (0, 1, 0)), (6.0, 0, (0, 0, 0))]
        )
        segs = pair_segments(fl.fragments, fl.far)
        assert [(s.entry, s.exit) for s in segs] == [(1.0, 2.0), (5.0, 6.0)]


class TestResolve:
    def test_empty_is_background(self):
        fl = FragmentList(capacity=4, far=10.0)
        assert resolve_fragments(fl, lambda i, t: 0.5, (0.2, 0.4, 0.6)) == (0.2, 0.4, 0.6)

    def test_opaque_limit_gives_segment_color(self):
        fl = filled([(1.0, 0, (0.3, 0.6, 0.9)), (2.0, 0, (0, 0, 0))])
        out = resolve_fragments(fl, exp_alpha({0: 1e9}), (1, 1, 1))
        assert np.allclose(out, (0.3, 0.6, 0.9), atol=1e-12)

    def test_nested_slabs_match_raymarch_oracle(self):
        """Two nested constant-density slabs against per-slab ray marching."""
        sigmas = {1: 0.37, 2: 1.21}
        colors = {1: (0.9, 0.2, 0.1), 2: (0.1, 0.5, 0.8)}
        d = [1.0, 2.5, 4.0, 6.0]  # 1-enter, 2-enter, 2-exit, 1-exit
        fl = filled(
            [(d[0], 1, colors[1]), (d[1], 2, colors[2]), (d[2], 2, (0, 0, 0)), (d[3], 1, (0, 0, 0))]
        )
        background = (0.25, 0.25, 0.3)
        got = resolve_fragments(fl, exp_alpha(sigmas), background)

        slab1 = raymarch_slab(colors[1], sigmas[1], d[0], d[3])
        slab2 = raymarch_slab(colors[2], sigmas[2], d[1], d[2])
        expect = composite_premultiplied([slab1, slab2], background)
        assert np.max(np.abs(np.asarray(got) - expect)) < 1e-5

    def test_non_overlapping_random_pairs_closed_form(self, rng):
        """Disjoint segments equal the closed-form compositing exactly."""
        for _ in range(50):
            k = int(rng.integers(1, 5))
            depth = 0.0
            frags = []
            segs = []
            for sid in range(k):
                entry = depth + rng.uniform(0.1, 1.0)
                exit = entry + rng.uniform(0.1, 2.0)
                depth = exit
                color = tuple(rng.uniform(0, 1, size=3))
                frags.append((entry, sid, color))
                frags.append((exit, sid, (0, 0, 0)))
                segs.append((sid, entry, exit, color))
            sigmas = {sid: rng.uniform(0.05, 3.0) for sid in range(k)}
            fl = filled(frags, capacity=16, far=depth + 1)
            got = resolve_fragments(fl, exp_alpha(sigmas), (0.1, 0.2, 0.3))

            acc = np.zeros(3)
            trans = 1.0
            for sid, entry, exit, color in segs:
                alpha = 1 - math.exp(-sigmas[sid] * (exit - entry))
                acc += trans * alpha * np.asarray(color)
                trans *= 1 - alpha
            acc += trans * np.asarray((0.1, 0.2, 0.3))
            assert np.max(np.abs(np.asarray(got) - acc)) < 1e-6


class TestOverflow:
    def test_farthest_dropped_at_insert(self):
        fl = FragmentList(capacity=3, far=100.0)
        for depth in (5.0, 1.0, 9.0):
            fl.insert(depth, 0, (0, 0, 0))
        fl.insert(4.0, 1, (0, 0, 0))  # drops depth 9.0
        assert sorted(f.depth for f in fl.fragments) == [1.0, 4.0, 5.0]
        assert fl.overflowed == 1

    def test_new_fragment_dropped_if_farthest(self):
        fl = FragmentList(capacity=2, far=100.0)
        fl.insert(1.0, 0, (0, 0, 0))
        fl.insert(2.0, 0, (0, 0, 0))
        fl.insert(50.0, 1, (0, 0, 0))
        assert sorted(f.depth for f in fl.fragments) == [1.0, 2.0]

    def test_overflow_keeps_nearest_k(self, rng):
        depths = rng.permutation(20).astype(float)
        fl = FragmentList(capacity=8, far=100.0)
        for d in depths:
            fl.insert(float(d), 0, (0, 0, 0))
        assert sorted(f.depth for f in fl.fragments) == sorted(depths)[:8]
