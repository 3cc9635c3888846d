import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvoxel.core import PointCloud
from pointvoxel.knn_interp import (
    COINCIDENT_EPS,
    KnnRequest,
    NoNeighbors,
    brute_knn,
    conquer_fetch_knn,
    interpolate,
    interpolate_batch,
    interpolation_weights,
    voxel_knn,
)
from pointvoxel.voxelizer import SparseVoxelGrid, VoxelGridSpec, voxelize

SPEC = VoxelGridSpec((0, 0, 0), (1, 1, 1), (10, 10, 10))


def random_grid(seed, n=300, spec=SPEC):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, np.array(spec.extents) * spec.size_array, (n, 3))
    return voxelize(PointCloud(pts), spec)


def oracle_knn(q, grid, k, window):
    """Sort every occupied cell inside the window by (distance, storage order)."""
    cell = np.floor((q - grid.spec.origin_array) / grid.spec.size_array).astype(int)
    cand = [r for r, idx in enumerate(grid.indices) if np.all(np.abs(idx - cell) <= window)]
    d = [float(np.sqrt(np.sum((grid.centers[r] - q) ** 2))) for r in cand]
    ranked = sorted(zip(d, cand))[:k]
    return [r for _, r in ranked]


def test_hand_case():
    grid = SparseVoxelGrid(SPEC, [[0, 0, 0], [1, 0, 0], [3, 0, 0]], np.eye(3), [1, 1, 1])
    r = voxel_knn(KnnRequest([[0.6, 0.5, 0.5]], grid, k=2, window=1))
    assert r.neighbors(0).tolist() == [0, 1]
    np.testing.assert_allclose(r.distances[0], [0.1, 0.9])
    # the cell three steps away is outside a half-width-1 window
    r = voxel_knn(KnnRequest([[0.6, 0.5, 0.5]], grid, k=3, window=1))
    assert r.counts[0] == 2 and r.rows[0, 2] == -1 and r.distances[0, 2] == np.inf


def test_tie_goes_to_lower_cell_order():
    grid = SparseVoxelGrid(SPEC, [[2, 0, 0], [0, 0, 0]], np.zeros((2, 1)), [1, 1])
    r = voxel_knn(KnnRequest([[1.5, 0.5, 0.5]], grid, k=1, window=1))
    assert r.neighbors(0).tolist() == [0]  # row 0 is cell (0,0,0) after sorting
    assert brute_knn([[1.5, 0.5, 0.5]], grid, 1).neighbors(0).tolist() == [0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 3))
def test_voxel_knn_matches_window_oracle(seed, k, window):
    grid = random_grid(seed)
    q = np.random.default_rng(seed + 1).uniform(0, 10, (15, 3))
    r = voxel_knn(KnnRequest(q, grid, k, window))
    for i in range(len(q)):
        assert r.neighbors(i).tolist() == oracle_knn(q[i], grid, k, window)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_conquer_equals_voxel(seed):
    grid = random_grid(seed)
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, 10, (8, 3))
    q = np.repeat(base, 6, axis=0) + rng.normal(0, 0.3, (48, 3))
    req = KnnRequest(q, grid, 6, 2)
    a, b = voxel_knn(req), conquer_fetch_knn(req)
    assert np.array_equal(a.rows, b.rows)
    assert np.array_equal(a.distances, b.distances)
    assert b.counters.window_scans <= a.counters.window_scans == len(q)


def test_dense_grid_window_equals_brute():
    # with every cell occupied, the k nearest always lie inside a half-width-2 window
    spec = VoxelGridSpec((0, 0, 0), (1, 1, 1), (6, 6, 6))
    idx = np.array(np.meshgrid(*[np.arange(6)] * 3, indexing="ij")).reshape(3, -1).T
    grid = SparseVoxelGrid(spec, idx, np.zeros((len(idx), 1)), np.ones(len(idx)))
    q = np.random.default_rng(0).uniform(0, 6, (200, 3))
    a = voxel_knn(KnnRequest(q, grid, 8, 2))
    b = brute_knn(q, grid, 8)
    assert np.array_equal(a.rows, b.rows)


def test_conquer_counts_distinct_cells():
    grid = random_grid(0)
    q = np.array([[1.1, 1.1, 1.1], [1.9, 1.2, 1.5], [5.5, 5.5, 5.5]])
    r = conquer_fetch_knn(KnnRequest(q, grid, 4, 1))
    assert r.counters.window_scans == 2
    assert r.counters.cells_probed == 2 * 27


def test_request_validation():
    grid = random_grid(0)
    with pytest.raises(ValueError):
        KnnRequest([[0, 0, 0]], grid, 0)
    with pytest.raises(ValueError):
        KnnRequest([[0, 0, 0]], grid, 1, 0)


class TestInterpolate:
    def test_hand_case(self):
        # distances 1 and 3: weights 3/4 and 1/4
        out = interpolate([0, 0, 0], [[1, 0, 0], [0, 3, 0]], [[4.0], [8.0]])
        assert abs(out[0] - 5.0) < 1e-12
        np.testing.assert_allclose(interpolation_weights([0, 0, 0], [[1, 0, 0], [0, 3, 0]]), [0.75, 0.25], atol=1e-12)

    def test_equidistant_is_mean(self):
        out = interpolate([0, 0, 0], [[1, 0, 0], [0, 1, 0], [0, 0, -1]], [[1.0, 0], [2.0, 3], [6.0, 3]])
        np.testing.assert_allclose(out, [3.0, 2.0], atol=1e-12)

    def test_coincident_returns_feature(self):
        out = interpolate([1, 1, 1], [[1, 1, 1 + COINCIDENT_EPS / 2], [2, 2, 2]], [[7.0], [9.0]])
        assert out.tolist() == [7.0]

    def test_single_neighbor(self):
        assert interpolate([0, 0, 0], [[3, 4, 0]], [[2.5, -1]]).tolist() == [2.5, -1.0]

    def test_no_neighbors(self):
        with pytest.raises(NoNeighbors):
            interpolate([0, 0, 0], np.empty((0, 3)), np.empty((0, 1)))

    @settings(max_examples=100)
    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_convex_combination(self, seed, k):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-5, 5, (k, 3))
        f = rng.normal(size=(k, 4))
        out = interpolate(rng.uniform(-5, 5, 3), c, f)
        assert np.all(out <= f.max(axis=0) + 1e-12) and np.all(out >= f.min(axis=0) - 1e-12)

    def test_batch_matches_scalar(self):
        grid = random_grid(2)
        feats = np.random.default_rng(2).normal(size=(len(grid), 5))
        q = np.vstack([np.random.default_rng(3).uniform(0, 10, (50, 3)), grid.centers[:3]])
        knn = voxel_knn(KnnRequest(q, grid, 8, 2))
        batch = interpolate_batch(q, knn, feats)
        for i in range(len(q)):
            if knn.counts[i] == 0:
                assert not batch[i].any()
                continue
            rows = knn.neighbors(i)
            np.testing.assert_allclose(batch[i], interpolate(q[i], grid.centers[rows], feats[rows]), atol=1e-12)
        np.testing.assert_array_equal(batch[-3:], feats[:3])
