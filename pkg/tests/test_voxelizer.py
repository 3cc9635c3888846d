import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvoxel.core import PointCloud
from pointvoxel.voxelizer import (
    BevFeatureMap,
    BevGridSpec,
    EmptyGrid,
    OutOfBounds,
    SparseVoxelGrid,
    VoxelGridSpec,
    bilinear_lookup,
    collapse_height,
    densify,
    dump_grid_csv,
    voxelize,
)

UNIT = VoxelGridSpec((0, 0, 0), (1, 1, 1), (4, 4, 4))


def test_from_range_extents():
    spec = VoxelGridSpec.from_range((-40, -40, -3), (40, 40, 6.6), (0.8, 0.8, 1.2))
    assert spec.extents == (100, 100, 8)


def test_invalid_spec():
    with pytest.raises(ValueError):
        VoxelGridSpec((0, 0, 0), (1, 0, 1), (1, 1, 1))


def test_max_reducer_hand_case():
    pc = PointCloud([[0.2, 0.2, 0.2], [0.7, 0.7, 0.7]], [[1.0, 5.0], [3.0, 2.0]])
    grid = voxelize(pc, UNIT, "max")
    assert len(grid) == 1
    assert grid.features[0].tolist() == [3.0, 5.0]
    assert grid.counts.tolist() == [2]
    assert grid.centers[0].tolist() == [0.5, 0.5, 0.5]


def test_mean_reducer_and_standin():
    pc = PointCloud([[0.2, 0.2, 0.2], [0.8, 0.4, 0.5]])
    grid = voxelize(pc, UNIT)
    np.testing.assert_allclose(grid.features[0], [0.0, -0.2, -0.15, 2.0], atol=1e-15)


def test_points_outside_dropped_and_empty():
    pc = PointCloud([[0.5, 0.5, 0.5], [10, 10, 10], [-0.1, 0, 0]])
    assert len(voxelize(pc, UNIT)) == 1
    with pytest.raises(EmptyGrid):
        voxelize(PointCloud([[10, 10, 10]]), UNIT)


def test_lexicographic_order_and_find():
    rng = np.random.default_rng(1)
    pc = PointCloud(rng.uniform(0, 4, (200, 3)))
    grid = voxelize(pc, UNIT)
    keys = [tuple(i) for i in grid.indices.tolist()]
    assert keys == sorted(keys)
    rows = grid.find(grid.indices)
    assert rows.tolist() == list(range(len(grid)))
    assert grid.find([[-1, 0, 0], [9, 9, 9]]).tolist() == [-1, -1]


def test_duplicate_indices_rejected():
    with pytest.raises(ValueError):
        SparseVoxelGrid(UNIT, [[0, 0, 1], [0, 0, 1]], np.zeros((2, 1)), [1, 1])


@settings(max_examples=50)
@given(st.lists(st.tuples(*[st.floats(0, 3.999)] * 3), min_size=1, max_size=40))
def test_voxelize_matches_dict_oracle(pts):
    pts = np.array(pts)
    feats = np.arange(len(pts), dtype=np.float64)[:, None]
    grid = voxelize(PointCloud(pts, feats), UNIT, "max")
    oracle = {}
    for p, f in zip(pts, feats[:, 0]):
        key = tuple(int(v) for v in np.floor(p))
        oracle[key] = max(oracle.get(key, -np.inf), f)
    got = {k: v[0][0] for k, v in grid.entries.items()}
    assert got == oracle


def test_collapse_height_max_pools_columns():
    idx = [[1, 2, 0], [1, 2, 3], [0, 0, 0]]
    grid = SparseVoxelGrid(UNIT, idx, [[1.0, 9.0], [4.0, 2.0], [7.0, 7.0]], [1, 1, 1])
    bev = collapse_height(grid)
    assert {k: v.tolist() for k, v in bev.entries.items()} == {(0, 0): [7.0, 7.0], (1, 2): [4.0, 9.0]}
    fmap = densify(bev)
    assert fmap.values.shape == (4, 4, 2)
    assert fmap.values[1, 2].tolist() == [4.0, 9.0] and fmap.values[3, 3].tolist() == [0.0, 0.0]


def _fmap(values):
    values = np.asarray(values, dtype=np.float64)
    nx, ny = values.shape[:2]
    return BevFeatureMap(BevGridSpec((0.0, 0.0), (1.0, 1.0), (nx, ny)), values)


def test_bilinear_hand_cases():
    # values 0 and 4 at neighboring centers; a quarter cell in gives 1
    fmap = _fmap([[[0.0], [0.0]], [[4.0], [4.0]]])
    assert bilinear_lookup(fmap, (0.75, 0.5))[0] == pytest.approx(1.0, abs=1e-12)
    assert bilinear_lookup(fmap, (1.0, 1.0))[0] == pytest.approx(2.0, abs=1e-12)
    # exact cell centers return stored rows
    assert bilinear_lookup(fmap, (1.5, 0.5))[0] == 4.0
    # outer half-cell replicates the edge
    assert bilinear_lookup(fmap, (0.1, 0.1))[0] == 0.0
    assert bilinear_lookup(fmap, (2.0, 2.0))[0] == 4.0


def test_bilinear_four_corners():
    fmap = _fmap([[[1.0], [2.0]], [[3.0], [4.0]]])
    assert bilinear_lookup(fmap, (1.0, 1.0))[0] == pytest.approx(2.5, abs=1e-12)


def test_bilinear_out_of_bounds():
    fmap = _fmap(np.zeros((2, 2, 1)))
    with pytest.raises(OutOfBounds):
        bilinear_lookup(fmap, (2.5, 0.5))
    assert bilinear_lookup(fmap, [[2.5, 0.5]], clamp=True).shape == (1, 1)


def test_bilinear_centers_exact_on_offset_grid():
    spec = BevGridSpec((-40.0, -40.0), (0.8, 0.8), (100, 100))
    rng = np.random.default_rng(0)
    fmap = BevFeatureMap(spec, rng.normal(size=(100, 100, 3)))
    idx = rng.integers(0, 100, (50, 2))
    centers = spec.cell_centers(idx)
    assert np.array_equal(bilinear_lookup(fmap, centers), fmap.values[idx[:, 0], idx[:, 1]])


def test_dump_csv(tmp_path):
    grid = voxelize(PointCloud([[0.5, 0.5, 0.5]], [[2.0]]), UNIT)
    dump_grid_csv(tmp_path / "g.csv", grid)
    assert (tmp_path / "g.csv").read_text().splitlines() == ["ix,iy,iz,f0", "0,0,0,2.0"]
