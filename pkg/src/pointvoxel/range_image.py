"""Virtual range image over merged multi-sensor / multi-frame points.

Points are binned on a spherical raster seen from the top sensor. Each
pixel owns a contiguous ``[start, end)`` slice of a pixel-sorted point array,
so overlapping returns are kept, and a radius query only visits the points
stored in an ``s x s`` pixel window around the query's pixel.

Raster conventions:

* row 0 is the top of the image (``phi_max``); rows grow downward and
  inclinations outside ``[phi_min, phi_max]`` are clamped to the edge rows;
* column ``c`` covers azimuths ``[-pi + c*dtheta, -pi + (c+1)*dtheta)`` and
  the image wraps around in azimuth;
* the window of side ``s`` starts at ``floor(u - s/2 + 0.5)`` for continuous
  pixel coordinate ``u``, i.e. it is centered on the query pixel for odd
  ``s`` and on the nearest pixel corner for even ``s``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from .core import PointCloud, RigidTransform, cartesian_to_spherical_array
from .core.rng import derive_seeds, priority

# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class GlobalRotation:
    angle: float  # about +z, radians

    def apply(self, pts):
        c, s = math.cos(self.angle), math.sin(self.angle)
        out = pts.copy()
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
        return out

    def invert(self, pts):
        return GlobalRotation(-self.angle).apply(pts)


@dataclass(frozen=True)
class FlipAxis:
    axis: int  # coordinate that is negated: 0 -> x, 1 -> y

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise ValueError("only x (0) or y (1) flips are supported")

    def apply(self, pts):
        out = pts.copy()
        out[:, self.axis] = -out[:, self.axis]
        return out

    invert = apply


@dataclass(frozen=True)
class GlobalScale:
    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError("scale factor must be positive")

    def apply(self, pts):
        return pts * self.factor

    def invert(self, pts):
        return pts / self.factor


@dataclass(frozen=True)
class CopyPaste:
    """Object points pasted at their original positions; rows [start, end) of the scene."""

    start: int
    end: int

    def apply(self, pts):
        return pts

    def invert(self, pts):
        return pts


@dataclass
class AugmentationRecord:
    steps: list = field(default_factory=list)

    def record(self, step) -> AugmentationRecord:
        self.steps.append(step)
        return self

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        for step in self.steps:
            pts = step.apply(pts)
        return pts

    def pasted_ranges(self) -> list[tuple[int, int]]:
        return [(s.start, s.end) for s in self.steps if isinstance(s, CopyPaste)]


def inverse_augment(points, rec: AugmentationRecord):
    """Undo the recorded geometric steps in reverse order.

    Accepts a PointCloud (features carried along) or an (n, 3) array.
    """
    is_cloud = isinstance(points, PointCloud)
    pts = points.positions if is_cloud else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    for step in reversed(rec.steps):
        pts = step.invert(pts)
    return PointCloud(pts, points.features) if is_cloud else pts


# ----------------------------------------------------------------- the image


@dataclass(frozen=True)
class RangeImageSpec:
    rows: int = 64
    cols: int = 2048
    phi_min: float = math.radians(-25.0)
    phi_max: float = math.radians(15.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("range image needs at least one row and column")
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be below phi_max")

    @property
    def dphi(self) -> float:
        return (self.phi_max - self.phi_min) / self.rows

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.cols

    def continuous(self, sph):
        """Continuous (row, col) coordinates of spherical rows (az, inc, r)."""
        sph = np.asarray(sph, dtype=np.float64).reshape(-1, 3)
        u_row = (self.phi_max - sph[:, 1]) / self.dphi
        u_col = (sph[:, 0] + math.pi) / self.dtheta
        return u_row, u_col

    def pixels(self, sph):
        u_row, u_col = self.continuous(sph)
        row = np.clip(np.floor(u_row), 0, self.rows - 1).astype(np.int64)
        col = np.mod(np.floor(u_col).astype(np.int64), self.cols)
        return row, col


class SelectionMode(str, Enum):
    RANDOM = "random"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class BallQueryRequest:
    """Radius query; ``queries`` are Cartesian points in the image's reference frame."""

    queries: np.ndarray
    radius: float
    k: int
    kernel: int = 16
    mode: SelectionMode = SelectionMode.RANDOM
    seed: int = 0

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.queries, dtype=np.float64).reshape(-1, 3))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.kernel < 1:
            raise ValueError("kernel size must be at least 1")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "mode", SelectionMode(self.mode))


@dataclass(frozen=True)
class BallQueryResult:
    indices: np.ndarray  # (m, k) original point indices, -1 in unused slots
    counts: np.ndarray  # (m,) valid slots per query
    inspected: np.ndarray  # (m,) candidate points examined per query

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.indices.shape[1])[None, :] < self.counts[:, None]

    def neighbors(self, q: int) -> np.ndarray:
        return self.indices[q, : self.counts[q]]


@dataclass(frozen=True)
class VirtualRangeImage:
    spec: RangeImageSpec
    ref_to_sensor: RigidTransform
    order: np.ndarray  # original index of each sorted point
    spherical: np.ndarray  # (n, 3) sensor-frame azimuth, inclination, range
    positions: np.ndarray  # (n, 3) reference-frame xyz, pixel-sorted
    pixel_start: np.ndarray  # (rows * cols,)
    pixel_end: np.ndarray
    rank: np.ndarray  # sorted slot of each original index (inverse of ``order``)

    @property
    def n(self) -> int:
        return self.order.shape[0]

    def positions_of(self, indices) -> np.ndarray:
        """Reference-frame xyz of original point indices."""
        return self.positions[self.rank[np.asarray(indices, dtype=np.int64)]]

    def pixel_range(self, row: int, col: int) -> tuple[int, int]:
        p = row * self.spec.cols + col
        return int(self.pixel_start[p]), int(self.pixel_end[p])

    def query_pixels(self, queries):
        sph = cartesian_to_spherical_array(self.ref_to_sensor.apply(queries))
        return sph, self.spec.continuous(sph)

    def dump_csv(self, path) -> None:
        """Write ``row,col,start,end`` for every non-empty pixel."""
        nz = np.flatnonzero(self.pixel_end > self.pixel_start)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "start", "end"])
            for p in nz:
                w.writerow([p // self.spec.cols, p % self.spec.cols, self.pixel_start[p], self.pixel_end[p]])


def build(points, sensor_to_ref: RigidTransform | None = None, spec: RangeImageSpec | None = None) -> VirtualRangeImage:
    """Bin reference-frame points into a CSR-indexed virtual range image.

    ``sensor_to_ref`` maps top-sensor coordinates into the reference (car)
    frame; its inverse brings the points back to the sensor.
    """
    spec = spec or RangeImageSpec()
    sensor_to_ref = sensor_to_ref or RigidTransform.identity()
    pos = points.positions if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ref_to_sensor = sensor_to_ref.inverse()
    sph = cartesian_to_spherical_array(ref_to_sensor.apply(pos))
    row, col = spec.pixels(sph)
    pid = row * spec.cols + col
    order = np.argsort(pid, kind="stable")
    counts = np.bincount(pid, minlength=spec.rows * spec.cols)
    end = np.cumsum(counts)
    start = end - counts
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return VirtualRangeImage(
        spec,
        ref_to_sensor,
        order.astype(np.int64),
        np.ascontiguousarray(sph[order]),
        np.ascontiguousarray(pos[order]),
        start.astype(np.int64),
        end.astype(np.int64),
        rank.astype(np.int64),
    )


def window_starts(spec: RangeImageSpec, u_row, u_col, kernel: int):
    row = np.clip(np.floor(u_row), 0, spec.rows - 1)
    # clamped queries are centered on their edge pixel
    u_row_c = np.where((u_row < 0) | (u_row >= spec.rows), row + 0.5, u_row)
    r0 = np.floor(u_row_c - kernel / 2 + 0.5).astype(np.int64)
    c0 = np.floor(u_col - kernel / 2 + 0.5).astype(np.int64)
    return r0, c0


@njit(cache=True)
def _select(kept, nkept, k, mode_random, seed, out_row):
    if nkept <= k:
        if mode_random:
            pri = np.empty(nkept, dtype=np.uint64)
            for t in range(nkept):
                pri[t] = priority(seed, kept[t])
            o = np.argsort(pri)
            for t in range(nkept):
                out_row[t] = kept[o[t]]
        else:
            for t in range(nkept):
                out_row[t] = kept[t]
        return nkept
    if mode_random:
        pri = np.empty(nkept, dtype=np.uint64)
        for t in range(nkept):
            pri[t] = priority(seed, kept[t])
        o = np.argsort(pri)
        for t in range(k):
            out_row[t] = kept[o[t]]
    else:
        for t in range(k):
            out_row[t] = kept[t]
    return k


@njit(cache=True)
def _rv_ball_query(q, r0s, c0s, seeds, radius, k, kernel, mode_random, rows, cols, pstart, pend, pos, order):
    m = q.shape[0]
    out = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    inspected = np.zeros(m, dtype=np.int64)
    kept = np.empty(pos.shape[0] + 1, dtype=np.int64)
    ncols = min(kernel, cols)
    for i in range(m):
        qx, qy, qz = q[i, 0], q[i, 1], q[i, 2]
        nkept = 0
        seen = 0
        done = False
        for dr in range(kernel):
            rr = r0s[i] + dr
            if rr < 0 or rr >= rows:
                continue
            for dc in range(ncols):
                cc = (c0s[i] + dc) % cols
                p = rr * cols + cc
                for t in range(pstart[p], pend[p]):
                    seen += 1
                    dx = pos[t, 0] - qx
                    dy = pos[t, 1] - qy
                    dz = pos[t, 2] - qz
                    if math.sqrt(dx * dx + dy * dy + dz * dz) < radius:
                        kept[nkept] = order[t]
                        nkept += 1
                        if not mode_random and nkept == k:
                            done = True
                            break
                if done:
                    break
            if done:
                break
        inspected[i] = seen
        counts[i] = _select(kept, nkept, k, mode_random, seeds[i], out[i])
    return out, counts, inspected


@njit(cache=True)
def _brute_ball_query(q, seeds, radius, k, mode_random, pos):
    m = q.shape[0]
    n = pos.shape[0]
    out = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    kept = np.empty(n + 1, dtype=np.int64)
    for i in range(m):
        qx, qy, qz = q[i, 0], q[i, 1], q[i, 2]
        nkept = 0
        for j in range(n):
            dx = pos[j, 0] - qx
            dy = pos[j, 1] - qy
            dz = pos[j, 2] - qz
            if math.sqrt(dx * dx + dy * dy + dz * dz) < radius:
                kept[nkept] = j
                nkept += 1
                if not mode_random and nkept == k:
                    break
        counts[i] = _select(kept, nkept, k, mode_random, seeds[i], out[i])
    return out, counts


def query_seeds(seed: int, m: int) -> np.ndarray:
    """Per-query child seeds; query ``i`` always gets the same child regardless of batching."""
    return derive_seeds(seed, np.arange(m, dtype=np.uint64))


def ball_query(img: VirtualRangeImage, req: BallQueryRequest) -> BallQueryResult:
    """Window neighbor query with radius check and random or sequential selection.

    Random mode keeps the ``k`` candidates with the smallest per-query
    priorities (a uniform k-subset independent of visiting order).
    Sequential mode scans the window top-left to bottom-right and keeps the
    first ``k`` that pass the radius check.
    """
    _, (u_row, u_col) = img.query_pixels(req.queries)
    r0, c0 = window_starts(img.spec, u_row, u_col, req.kernel)
    out, counts, inspected = _rv_ball_query(
        req.queries,
        r0,
        c0,
        query_seeds(req.seed, len(req.queries)),
        float(req.radius),
        int(req.k),
        int(req.kernel),
        req.mode is SelectionMode.RANDOM,
        img.spec.rows,
        img.spec.cols,
        img.pixel_start,
        img.pixel_end,
        img.positions,
        img.order,
    )
    return BallQueryResult(out, counts, inspected)


def brute_force_ball_query(points, queries, radius: float, k: int, mode=SelectionMode.RANDOM, seed: int = 0) -> BallQueryResult:
    """Exhaustive O(mn) scan with the same radius and selection rules."""
    pos = points.positions if isinstance(points, PointCloud) else np.ascontiguousarray(points, dtype=np.float64)
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
    mode = SelectionMode(mode)
    out, counts = _brute_ball_query(q, query_seeds(seed, len(q)), float(radius), int(k), mode is SelectionMode.RANDOM, pos)
    return BallQueryResult(out, counts, np.full(len(q), pos.shape[0], dtype=np.int64))


def window_covers_ball(img: VirtualRangeImage, queries, radius: float, kernel: int, margin: float = 1e-9) -> np.ndarray:
    """True where the query's pixel window is guaranteed to contain its whole ball.

    Every point within ``radius`` of a query at horizontal distance ``rho``
    and range ``r`` differs from it by at most ``asin(radius / rho)`` in
    azimuth and ``asin(radius / r)`` in inclination; the window must span both.
    """
    spec = img.spec
    sph, (u_row, u_col) = img.query_pixels(queries)
    rng = sph[:, 2]
    rho = rng * np.cos(sph[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        az_half = np.where(rho > radius, np.arcsin(np.minimum(radius / rho, 1.0)), np.inf)
        inc_half = np.where(rng > radius, np.arcsin(np.minimum(radius / rng, 1.0)), np.inf)
    r0, c0 = window_starts(spec, u_row, u_col, kernel)

    if kernel >= spec.cols:
        col_ok = np.ones(len(rng), dtype=bool)
    else:
        span = az_half / spec.dtheta + margin
        col_ok = (u_col - span >= c0) & (u_col + span <= c0 + kernel)

    span = inc_half / spec.dphi + margin
    top_ok = (r0 <= 0) | (u_row - span >= r0)
    bottom_ok = (r0 + kernel >= spec.rows) | (u_row + span <= r0 + kernel)
    return col_ok & top_ok & bottom_ok
