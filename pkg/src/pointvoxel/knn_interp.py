"""Voxel-window KNN, conquer-fetch deduplication and inverse-distance interpolation.

All three searches share one candidate order (lexicographic cell index) and
one distance expression, so ties resolve identically and the window search
can be compared bit-for-bit against the exhaustive oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .voxelizer import SparseVoxelGrid

COINCIDENT_EPS = 1e-8


class NoNeighbors(ValueError):
    pass


@dataclass
class KnnCounters:
    window_scans: int = 0
    cells_probed: int = 0
    distance_evals: int = 0


@dataclass(frozen=True)
class KnnRequest:
    queries: np.ndarray
    grid: SparseVoxelGrid
    k: int = 8
    window: int = 2  # half-width in cells; the scan covers (2v+1)^3 cells

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.queries, dtype=np.float64).reshape(-1, 3))
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.window < 1:
            raise ValueError("window half-width must be at least 1")
        object.__setattr__(self, "queries", q)


@dataclass(frozen=True)
class KnnResult:
    """Per query up to ``k`` grid rows sorted by distance; -1 / inf pad the rest."""

    rows: np.ndarray
    distances: np.ndarray
    counts: np.ndarray
    counters: KnnCounters = field(default_factory=KnnCounters, compare=False)

    def neighbors(self, q: int) -> np.ndarray:
        return self.rows[q, : self.counts[q]]


def _query_cells(grid: SparseVoxelGrid, queries) -> np.ndarray:
    spec = grid.spec
    return np.floor((queries - spec.origin_array) / spec.size_array).astype(np.int64)


@njit(cache=True)
def _find(keys, key):
    lo, hi = 0, keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


@njit(cache=True)
def _window_candidates(cx, cy, cz, v, ext, keys, buf):
    """Occupied rows in the (2v+1)^3 window, in lexicographic cell order."""
    nx, ny, nz = ext[0], ext[1], ext[2]
    n = 0
    for ix in range(cx - v, cx + v + 1):
        if ix < 0 or ix >= nx:
            continue
        for iy in range(cy - v, cy + v + 1):
            if iy < 0 or iy >= ny:
                continue
            for iz in range(cz - v, cz + v + 1):
                if iz < 0 or iz >= nz:
                    continue
                r = _find(keys, (ix * ny + iy) * nz + iz)
                if r >= 0:
                    buf[n] = r
                    n += 1
    return n


@njit(cache=True)
def _rank(qx, qy, qz, cand, ncand, centers, k, out_rows, out_dist):
    d = np.empty(ncand, dtype=np.float64)
    for t in range(ncand):
        c = cand[t]
        dx = centers[c, 0] - qx
        dy = centers[c, 1] - qy
        dz = centers[c, 2] - qz
        d[t] = math.sqrt(dx * dx + dy * dy + dz * dz)
    o = np.argsort(d, kind="mergesort")
    take = min(k, ncand)
    for t in range(take):
        out_rows[t] = cand[o[t]]
        out_dist[t] = d[o[t]]
    return take


@njit(cache=True)
def _voxel_knn(q, cells, v, ext, keys, centers, k):
    m = q.shape[0]
    rows = np.full((m, k), -1, dtype=np.int64)
    dist = np.full((m, k), np.inf)
    counts = np.zeros(m, dtype=np.int64)
    buf = np.empty((2 * v + 1) ** 3, dtype=np.int64)
    probed = 0
    evals = 0
    for i in range(m):
        n = _window_candidates(cells[i, 0], cells[i, 1], cells[i, 2], v, ext, keys, buf)
        probed += (2 * v + 1) ** 3
        evals += n
        counts[i] = _rank(q[i, 0], q[i, 1], q[i, 2], buf, n, centers, k, rows[i], dist[i])
    return rows, dist, counts, probed, evals


@njit(cache=True)
def _conquer_fetch(q, inverse, ucells, v, ext, keys, centers, k):
    u = ucells.shape[0]
    w = (2 * v + 1) ** 3
    # conquer: one window scan per distinct cell
    cand = np.empty((u, w), dtype=np.int64)
    ncand = np.zeros(u, dtype=np.int64)
    for j in range(u):
        ncand[j] = _window_candidates(ucells[j, 0], ucells[j, 1], ucells[j, 2], v, ext, keys, cand[j])
    # fetch: every query ranks its cell's shared candidate list by its own position
    m = q.shape[0]
    rows = np.full((m, k), -1, dtype=np.int64)
    dist = np.full((m, k), np.inf)
    counts = np.zeros(m, dtype=np.int64)
    evals = 0
    for i in range(m):
        j = inverse[i]
        evals += ncand[j]
        counts[i] = _rank(q[i, 0], q[i, 1], q[i, 2], cand[j], ncand[j], centers, k, rows[i], dist[i])
    return rows, dist, counts, u * w, evals


@njit(cache=True)
def _brute(q, centers, k):
    m = q.shape[0]
    n = centers.shape[0]
    rows = np.full((m, k), -1, dtype=np.int64)
    dist = np.full((m, k), np.inf)
    counts = np.zeros(m, dtype=np.int64)
    allc = np.arange(n)
    for i in range(m):
        counts[i] = _rank(q[i, 0], q[i, 1], q[i, 2], allc, n, centers, k, rows[i], dist[i])
    return rows, dist, counts


def _ext(grid):
    return np.array(grid.spec.extents, dtype=np.int64)


def voxel_knn(req: KnnRequest) -> KnnResult:
    """Scan the window around each query's own cell; one scan per query."""
    grid = req.grid
    cells = _query_cells(grid, req.queries)
    rows, dist, counts, probed, evals = _voxel_knn(
        req.queries, cells, int(req.window), _ext(grid), grid.keys, grid.centers, int(req.k)
    )
    return KnnResult(rows, dist, counts, KnnCounters(len(req.queries), int(probed), int(evals)))


def conquer_fetch_knn(req: KnnRequest) -> KnnResult:
    """Deduplicate queries by containing cell, scan each distinct cell once, then
    let every query re-rank its cell's candidates with its exact coordinates."""
    grid = req.grid
    cells = _query_cells(grid, req.queries)
    if len(cells) == 0:
        ucells, inverse = np.empty((0, 3), np.int64), np.empty(0, np.int64)
    else:
        ucells, inverse = np.unique(cells, axis=0, return_inverse=True)
    rows, dist, counts, probed, evals = _conquer_fetch(
        req.queries,
        inverse.reshape(-1).astype(np.int64),
        np.ascontiguousarray(ucells),
        int(req.window),
        _ext(grid),
        grid.keys,
        grid.centers,
        int(req.k),
    )
    return KnnResult(rows, dist, counts, KnnCounters(len(ucells), int(probed), int(evals)))


def brute_knn(queries, grid: SparseVoxelGrid, k: int) -> KnnResult:
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
    rows, dist, counts = _brute(q, grid.centers, int(k))
    return KnnResult(rows, dist, counts, KnnCounters(0, 0, len(q) * len(grid)))


def interpolate(query, centers, features) -> np.ndarray:
    """Inverse-distance weighted mean of neighbor features.

    A neighbor closer than ``COINCIDENT_EPS`` is returned verbatim (the first
    such one), which is the limit of the weighting at zero distance. A lone
    neighbor is also returned verbatim, avoiding the w * f / w rounding.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(-1, 1)
    if len(centers) == 0:
        raise NoNeighbors("interpolation needs at least one neighbor")
    d = np.sqrt(np.sum((centers - np.asarray(query, dtype=np.float64)) ** 2, axis=1))
    close = np.flatnonzero(d < COINCIDENT_EPS)
    if close.size:
        return features[close[0]].copy()
    if len(d) == 1:
        return features[0].copy()
    w = 1.0 / d
    return (w[:, None] * features).sum(axis=0) / w.sum()


def interpolation_weights(query, centers) -> np.ndarray:
    d = np.sqrt(np.sum((np.asarray(centers) - np.asarray(query)) ** 2, axis=1))
    w = 1.0 / d
    return w / w.sum()


def interpolate_batch(queries, knn: KnnResult, features) -> np.ndarray:
    """Vectorized ``interpolate`` over a KNN result; rows without neighbors get zeros."""
    features = np.asarray(features, dtype=np.float64)
    m, k = knn.rows.shape
    valid = knn.rows >= 0
    safe = np.where(valid, knn.rows, 0)
    f = features[safe]  # (m, k, d)
    d = knn.distances
    with np.errstate(divide="ignore"):
        w = np.where(valid, 1.0 / d, 0.0)
    out = np.zeros((m, features.shape[1]))
    has = knn.counts > 0
    coincident = valid & (d < COINCIDENT_EPS)
    first_close = np.argmax(coincident, axis=1)
    any_close = coincident.any(axis=1) | (knn.counts == 1)
    first_close[knn.counts == 1] = 0
    normal = has & ~any_close
    wn = w[normal]
    out[normal] = np.einsum("mk,mkd->md", wn, f[normal]) / wn.sum(axis=1, keepdims=True)
    out[any_close] = f[any_close, first_close[any_close]]
    return out
