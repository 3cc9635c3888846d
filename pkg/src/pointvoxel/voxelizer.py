"""Point-to-voxel assignment, height collapse and dense BEV rasters.

Sparse grids keep their occupied cells sorted by a lexicographic linear key
``(ix * ny + iy) * nz + iz`` so that lookups are a binary search and the
storage order doubles as the tie-break order used by the neighbor searches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import PointCloud


class EmptyGrid(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGridSpec:
    origin: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    extents: tuple[int, int, int]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        size = tuple(float(v) for v in self.voxel_size)
        ext = tuple(int(v) for v in self.extents)
        if len(origin) != 3 or len(size) != 3 or len(ext) != 3:
            raise ValueError("origin, voxel_size and extents must have 3 components")
        if not all(s > 0 for s in size):
            raise ValueError(f"voxel sizes must be positive, got {size}")
        if not all(e > 0 for e in ext):
            raise ValueError(f"grid extents must be positive, got {ext}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "extents", ext)

    @classmethod
    def from_range(cls, lower, upper, voxel_size) -> VoxelGridSpec:
        """Grid covering the box [lower, upper); extents round up to whole cells."""
        lower = np.asarray(lower, dtype=np.float64)
        size = np.asarray(voxel_size, dtype=np.float64)
        ext = np.ceil((np.asarray(upper, dtype=np.float64) - lower) / size - 1e-9).astype(int)
        return cls(tuple(lower), tuple(size), tuple(np.maximum(ext, 1)))

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def size_array(self) -> np.ndarray:
        return np.array(self.voxel_size)

    def cell_indices(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell of every point and a mask of those inside the grid."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((pts - self.origin_array) / self.size_array).astype(np.int64)
        valid = np.all((idx >= 0) & (idx < np.array(self.extents)), axis=1)
        return idx, valid

    def linear_keys(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        _, ny, nz = self.extents
        return (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]

    def cell_centers(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.float64).reshape(-1, 3)
        return (idx + 0.5) * self.size_array + self.origin_array

    def bev(self) -> BevGridSpec:
        return BevGridSpec(self.origin[:2], self.voxel_size[:2], self.extents[:2])


@dataclass(frozen=True)
class BevGridSpec:
    origin: tuple[float, float]
    cell_size: tuple[float, float]
    extents: tuple[int, int]

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    @property
    def size_array(self) -> np.ndarray:
        return np.array(self.cell_size, dtype=np.float64)

    def cell_centers(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.float64).reshape(-1, 2)
        return (idx + 0.5) * self.size_array + self.origin_array

    def upper(self) -> np.ndarray:
        return self.origin_array + self.size_array * np.array(self.extents)


@dataclass(frozen=True)
class SparseVoxelGrid:
    """Occupied voxels in lexicographic cell order.

    ``indices`` (N, 3) int64, ``features`` (N, d), ``counts`` points per voxel.
    ``centers`` are the geometric cell centers.
    """

    spec: VoxelGridSpec
    indices: np.ndarray
    features: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64).reshape(-1, 3))
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] != idx.shape[0]:
            raise ValueError("one feature row per voxel is required")
        keys = self.spec.linear_keys(idx)
        if keys.size and np.any(np.diff(keys) <= 0):
            order = np.argsort(keys, kind="stable")
            keys, idx, feats = keys[order], idx[order], feats[order]
            object.__setattr__(self, "counts", np.asarray(self.counts)[order])
            if np.any(np.diff(keys) == 0):
                raise ValueError("duplicate voxel indices")
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.array(self.spec.extents))):
            raise ValueError("voxel index outside grid extents")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "centers", self.spec.cell_centers(idx))

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def entries(self) -> dict:
        return {tuple(int(v) for v in i): (f, c) for i, f, c in zip(self.indices, self.features, self.centers)}

    def find(self, idx) -> np.ndarray:
        """Row of each queried cell, or -1 where the cell is empty or off-grid."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        inside = np.all((idx >= 0) & (idx < np.array(self.spec.extents)), axis=1)
        keys = self.spec.linear_keys(idx)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, max(len(self) - 1, 0))
        hit = inside & (pos < len(self)) & (self.keys[pos_c] == keys) if len(self) else np.zeros(len(keys), bool)
        return np.where(hit, pos_c, -1)

    def with_features(self, features) -> SparseVoxelGrid:
        return SparseVoxelGrid(self.spec, self.indices, features, self.counts)


@dataclass(frozen=True)
class SparseBevGrid:
    spec: BevGridSpec
    indices: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.spec.cell_centers(self.indices)

    @property
    def entries(self) -> dict:
        return {(int(i[0]), int(i[1])): f for i, f in zip(self.indices, self.features)}


@dataclass(frozen=True)
class BevFeatureMap:
    """Dense raster ``values[ix, iy, :]``; empty cells hold zero rows."""

    spec: BevGridSpec
    values: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.values.shape[2]


def _group_reduce(keys, rows, reducer):
    order = np.argsort(keys, kind="stable")
    k_sorted = keys[order]
    starts = np.flatnonzero(np.r_[True, k_sorted[1:] != k_sorted[:-1]])
    rows_sorted = rows[order]
    counts = np.diff(np.r_[starts, k_sorted.size])
    if reducer == "max":
        out = np.maximum.reduceat(rows_sorted, starts, axis=0)
    elif reducer == "mean":
        out = np.add.reduceat(rows_sorted, starts, axis=0) / counts[:, None]
    else:
        raise ValueError(f"unknown reducer {reducer!r}")
    return order[starts], out, counts


def voxelize(pc: PointCloud, spec: VoxelGridSpec, reducer: str = "mean") -> SparseVoxelGrid:
    """Aggregate points into occupied voxels; points outside the grid are dropped.

    Without point features, each voxel gets a 4-dim stand-in: the reduced
    member offsets from the cell center followed by the member count.
    """
    idx, valid = spec.cell_indices(pc.positions)
    if not np.any(valid):
        raise EmptyGrid("no point falls inside the voxel grid")
    idx = idx[valid]
    keys = spec.linear_keys(idx)
    if pc.features is not None:
        rows = pc.features[valid]
    else:
        rows = pc.positions[valid] - spec.cell_centers(idx)
    first, feats, counts = _group_reduce(keys, rows, reducer)
    if pc.features is None:
        feats = np.hstack([feats, counts[:, None].astype(np.float64)])
    return SparseVoxelGrid(spec, idx[first], feats, counts)


def collapse_height(grid: SparseVoxelGrid) -> SparseBevGrid:
    """Max-pool every vertical column of voxels into one BEV cell."""
    if len(grid) == 0:
        raise EmptyGrid("cannot collapse an empty grid")
    ny = grid.spec.extents[1]
    keys2 = grid.indices[:, 0] * ny + grid.indices[:, 1]
    first, feats, _ = _group_reduce(keys2, grid.features, "max")
    return SparseBevGrid(grid.spec.bev(), grid.indices[first, :2].copy(), feats)


def densify(bev: SparseBevGrid, feature_dim: int | None = None) -> BevFeatureMap:
    nx, ny = bev.spec.extents
    d = bev.features.shape[1] if len(bev) else (feature_dim or 0)
    values = np.zeros((nx, ny, d), dtype=np.float64)
    if len(bev):
        values[bev.indices[:, 0], bev.indices[:, 1]] = bev.features
    return BevFeatureMap(bev.spec, values)


def bilinear_lookup(fmap: BevFeatureMap, xy, clamp: bool = False) -> np.ndarray:
    """Bilinear blend of the four cell-center values around each query.

    Accepts one (2,) point or an (m, 2) array. Values live at cell centers;
    inside the outer half-cell ring the edge value is replicated.
    """
    q = np.asarray(xy, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 2)
    lo, hi = fmap.spec.origin_array, fmap.spec.upper()
    outside = np.any((q < lo) | (q > hi), axis=1)
    if np.any(outside):
        if not clamp:
            raise OutOfBounds(f"{int(outside.sum())} queries fall outside the BEV extent")
        q = np.clip(q, lo, hi)
    nx, ny = fmap.spec.extents
    u = (q - lo) / fmap.spec.size_array - 0.5
    # metric -> cell conversion rounds; snap so cell centers hit rows exactly
    snapped = np.round(u)
    u = np.where(np.abs(u - snapped) < 1e-9, snapped, u)
    u[:, 0] = np.clip(u[:, 0], 0.0, nx - 1)
    u[:, 1] = np.clip(u[:, 1], 0.0, ny - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), [max(nx - 2, 0), max(ny - 2, 0)])
    t = u - i0
    i1 = np.minimum(i0 + 1, [nx - 1, ny - 1])
    v = fmap.values
    tx, ty = t[:, :1], t[:, 1:]
    out = (
        (1 - tx) * (1 - ty) * v[i0[:, 0], i0[:, 1]]
        + tx * (1 - ty) * v[i1[:, 0], i0[:, 1]]
        + (1 - tx) * ty * v[i0[:, 0], i1[:, 1]]
        + tx * ty * v[i1[:, 0], i1[:, 1]]
    )
    return out[0] if single else out


def dump_grid_csv(path, grid) -> None:
    """Write ``ix,iy[,iz],f0,...`` rows for a sparse 3D or BEV grid."""
    dims = grid.indices.shape[1]
    header = ["ix", "iy", "iz"][:dims] + [f"f{i}" for i in range(grid.features.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for idx, f in zip(grid.indices.tolist(), grid.features.tolist()):
            w.writerow(idx + [repr(v) for v in f])
