import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvoxel.core import PointCloud, RigidTransform
from pointvoxel.range_image import (
    AugmentationRecord,
    BallQueryRequest,
    CopyPaste,
    FlipAxis,
    GlobalRotation,
    GlobalScale,
    RangeImageSpec,
    ball_query,
    brute_force_ball_query,
    build,
    inverse_augment,
    window_covers_ball,
    window_starts,
)

SENSOR = RigidTransform.from_yaw(0.0, (0.0, 0.0, 1.8))


def cloud(n, seed=0, extent=30.0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-extent, extent, (n, 2))
    z = rng.uniform(-0.2, 2.5, n)
    return np.column_stack([xy, z])


def oracle_window_points(img, q, kernel):
    """Sorted slots of every point stored in the query's window, listed pixel by pixel."""
    _, (ur, uc) = img.query_pixels(q.reshape(1, 3))
    r0, c0 = window_starts(img.spec, ur, uc, kernel)
    slots = []
    for dr in range(kernel):
        r = int(r0[0]) + dr
        if not 0 <= r < img.spec.rows:
            continue
        for dc in range(min(kernel, img.spec.cols)):
            c = (int(c0[0]) + dc) % img.spec.cols
            s, e = img.pixel_range(r, c)
            slots.extend(range(s, e))
    return slots


class TestAugmentation:
    def test_steps(self):
        p = np.array([[1.0, 2.0, 3.0]])
        assert GlobalRotation(math.pi / 2).apply(p) == pytest.approx(np.array([[-2.0, 1.0, 3.0]]))
        assert FlipAxis(1).apply(p).tolist() == [[1.0, -2.0, 3.0]]
        assert GlobalScale(2.0).apply(p).tolist() == [[2.0, 4.0, 6.0]]
        with pytest.raises(ValueError):
            FlipAxis(2)
        with pytest.raises(ValueError):
            GlobalScale(0.0)

    def test_copy_paste_bookkeeping(self):
        rec = AugmentationRecord().record(CopyPaste(0, 10)).record(GlobalScale(1.1))
        assert rec.pasted_ranges() == [(0, 10)]

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.one_of(
                st.builds(GlobalRotation, st.floats(-math.pi, math.pi)),
                st.builds(FlipAxis, st.sampled_from([0, 1])),
                st.builds(GlobalScale, st.floats(0.9, 1.1)),
                st.just(CopyPaste(0, 5)),
            ),
            max_size=5,
        ),
        st.integers(0, 1000),
    )
    def test_inverse_round_trip(self, steps, seed):
        rec = AugmentationRecord(list(steps))
        pts = cloud(50, seed, 70.0)
        back = inverse_augment(rec.apply(pts), rec)
        assert np.max(np.abs(back - pts)) < 1e-9

    def test_inverse_keeps_features(self):
        pc = PointCloud(np.ones((2, 3)), np.array([[1.0], [2.0]]))
        out = inverse_augment(pc, AugmentationRecord([GlobalScale(2.0)]))
        assert out.features.tolist() == [[1.0], [2.0]]
        assert out.positions.tolist() == [[0.5] * 3] * 2


class TestBuild:
    def test_csr_integrity(self):
        pts = cloud(5000)
        img = build(pts, SENSOR, RangeImageSpec(32, 256))
        assert img.pixel_start[0] == 0 and img.pixel_end[-1] == len(pts)
        assert np.array_equal(img.pixel_start[1:], img.pixel_end[:-1])
        assert sorted(img.order.tolist()) == list(range(len(pts)))
        np.testing.assert_array_equal(img.positions, pts[img.order])
        np.testing.assert_array_equal(img.positions_of(np.arange(len(pts))), pts)
        row, col = img.spec.pixels(img.spherical)
        pid = row * img.spec.cols + col
        for p in np.unique(pid)[:200]:
            s, e = img.pixel_start[p], img.pixel_end[p]
            assert np.all(pid[s:e] == p)

    def test_empty_and_singleton(self):
        empty = build(np.zeros((0, 3)), SENSOR, RangeImageSpec(8, 16))
        assert empty.n == 0 and not np.any(empty.pixel_end - empty.pixel_start)
        r = ball_query(empty, BallQueryRequest([[1.0, 0, 0]], 1.0, 4, 3))
        assert r.counts.tolist() == [0]
        one = build(np.array([[3.0, 1.0, 0.5]]), SENSOR, RangeImageSpec(8, 16))
        assert np.count_nonzero(one.pixel_end - one.pixel_start) == 1
        r = ball_query(one, BallQueryRequest([[3.0, 1.0, 0.5]], 0.1, 4, 1))
        assert r.neighbors(0).tolist() == [0]

    def test_overlapping_returns_kept(self):
        pts = np.array([[5.0, 0.0, 0.0], [5.0, 0.0, 0.0], [5.001, 0.0, 0.0]])
        img = build(pts, None, RangeImageSpec(8, 16))
        assert np.count_nonzero(img.pixel_end - img.pixel_start) == 1

    def test_row_convention_and_clamping(self):
        spec = RangeImageSpec(4, 8, -math.pi / 4, math.pi / 4)
        pts = np.array([[1.0, 0, 0.9], [1.0, 0, -0.9], [1.0, 0, 10.0], [1.0, 0, -10.0], [-1.0, 0, 0]])
        img = build(pts, None, spec)
        row, col = spec.pixels(img.spherical[img.rank])
        # inclination 0 sits on the boundary u_row = 2 and belongs to the row below it
        assert row.tolist() == [0, 3, 0, 3, 2]
        # azimuth 0 -> column cols/2; azimuth pi is -pi, i.e. column 0
        assert col.tolist()[:2] == [4, 4] and col[4] == 0

    def test_dump_csv(self, tmp_path):
        img = build(cloud(100), SENSOR, RangeImageSpec(8, 16))
        img.dump_csv(tmp_path / "ri.csv")
        lines = (tmp_path / "ri.csv").read_text().splitlines()
        assert lines[0] == "row,col,start,end"
        assert sum(int(l.split(",")[3]) - int(l.split(",")[2]) for l in lines[1:]) == 100


class TestBallQuery:
    def test_radius_hand_case(self):
        q = np.array([10.0, 0.0, 0.0])
        pts = np.array([q + [0.5, 0, 0], q + [0, 0.79, 0], q + [0, 0, 0.81], q + [5, 0, 0]])
        for mode in ("random", "sequential"):
            img = build(pts, None, RangeImageSpec(16, 64))
            r = ball_query(img, BallQueryRequest(q, 0.8, 8, 5, mode))
            assert sorted(r.neighbors(0).tolist()) == [0, 1]
            assert r.indices[0, 2:].tolist() == [-1] * 6
            b = brute_force_ball_query(pts, q, 0.8, 8, mode)
            assert sorted(b.neighbors(0).tolist()) == [0, 1]

    def test_exact_boundary_excluded(self):
        pts = np.array([[10.5, 0.0, 0.0]])
        r = brute_force_ball_query(pts, [[10.0, 0.0, 0.0]], 0.5, 4)
        assert r.counts[0] == 0

    def test_random_selection_uniform(self):
        q = np.array([10.0, 0.0, 0.0])
        pts = q + np.array([[0.1, 0, 0], [0, 0.1, 0], [0, 0, 0.1], [-0.1, 0, 0]])
        img = build(pts, None, RangeImageSpec(16, 64))
        hits = np.zeros(4)
        runs = 10_000
        for seed in range(runs):
            r = ball_query(img, BallQueryRequest(q, 0.5, 2, 5, "random", seed))
            hits[r.neighbors(0)] += 1
        np.testing.assert_allclose(hits / runs, 0.5, atol=0.02)

    def test_sequential_window_order(self):
        pts = cloud(4000, 3)
        img = build(pts, SENSOR, RangeImageSpec(32, 256))
        q = pts[:20] + 0.05
        r = ball_query(img, BallQueryRequest(q, 1.5, 4, 7, "sequential"))
        for i in range(len(q)):
            slots = oracle_window_points(img, q[i], 7)
            inside = [img.order[s] for s in slots if np.linalg.norm(img.positions[s] - q[i]) < 1.5]
            assert r.neighbors(i).tolist() == inside[:4]

    def test_inspection_counter_matches_window(self):
        pts = cloud(4000, 4)
        img = build(pts, SENSOR, RangeImageSpec(32, 256))
        q = pts[:30]
        r = ball_query(img, BallQueryRequest(q, 0.8, 1000, 6, "random"))
        for i in range(len(q)):
            assert r.inspected[i] == len(oracle_window_points(img, q[i], 6))

    def test_subset_and_equality_under_coverage(self):
        pts = cloud(20_000, 5)
        img = build(pts, SENSOR, RangeImageSpec(64, 512))
        q = pts[::97] + 0.03
        for mode in ("random", "sequential"):
            rv = ball_query(img, BallQueryRequest(q, 0.8, 16, 16, mode, 11))
            bf = brute_force_ball_query(pts, q, 0.8, 10**6, mode)
            covered = window_covers_ball(img, q, 0.8, 16)
            assert covered.any()
            for i in range(len(q)):
                assert set(rv.neighbors(i).tolist()) <= set(bf.neighbors(i).tolist())
            if mode == "random":
                bf16 = brute_force_ball_query(pts, q, 0.8, 16, mode, 11)
                for i in np.flatnonzero(covered):
                    assert rv.neighbors(i).tolist() == bf16.neighbors(i).tolist()

    def test_large_k_mode_independent(self):
        pts = cloud(3000, 9)
        q = pts[:25]
        a = brute_force_ball_query(pts, q, 1.2, 3000, "random", 5)
        b = brute_force_ball_query(pts, q, 1.2, 3000, "sequential")
        for i in range(len(q)):
            assert sorted(a.neighbors(i).tolist()) == b.neighbors(i).tolist()

    def test_deterministic_and_batch_independent(self):
        pts = cloud(3000, 6)
        img = build(pts, SENSOR, RangeImageSpec(32, 256))
        q = pts[:10]
        a = ball_query(img, BallQueryRequest(q, 1.0, 4, 8, "random", 3))
        b = ball_query(img, BallQueryRequest(q, 1.0, 4, 8, "random", 3))
        assert np.array_equal(a.indices, b.indices)
        c = ball_query(img, BallQueryRequest(q[:5], 1.0, 4, 8, "random", 3))
        assert np.array_equal(a.indices[:5], c.indices)

    def test_azimuth_wrap(self):
        # points straddling azimuth +-pi are one window apart, not a full turn
        pts = np.array([[-10.0, 0.01, 0.0], [-10.0, -0.01, 0.0]])
        img = build(pts, None, RangeImageSpec(8, 64))
        r = ball_query(img, BallQueryRequest([[-10.0, 0.0, 0.0]], 0.5, 4, 3))
        assert sorted(r.neighbors(0).tolist()) == [0, 1]

    def test_request_validation(self):
        with pytest.raises(ValueError):
            BallQueryRequest([[0, 0, 0]], 0.0, 4)
        with pytest.raises(ValueError):
            BallQueryRequest([[0, 0, 0]], 1.0, 0)

    def test_inspections_bounded_by_window_not_n(self):
        # doubling the points and the image width keeps per-pixel density and inspections
        small = cloud(20_000, 8)
        big = cloud(40_000, 8)
        a = build(small, SENSOR, RangeImageSpec(64, 256))
        b = build(big, SENSOR, RangeImageSpec(64, 512))
        q = small[:200]
        ia = ball_query(a, BallQueryRequest(q, 0.8, 32, 16)).inspected.mean()
        ib = ball_query(b, BallQueryRequest(q, 0.8, 32, 16)).inspected.mean()
        assert 0.5 < ib / ia < 2.0
