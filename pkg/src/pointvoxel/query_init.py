"""Query initialization: collapse voxels to BEV, sample, lift to 3D, align features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox3D, PointCloud, SeededRng, points_in_box
from .sampler import InvalidCount, SampleRequest, Strategy, sample
from .voxelizer import BevFeatureMap, VoxelGridSpec, bilinear_lookup, collapse_height, voxelize

FOREGROUND_SCORE = 1.0
BACKGROUND_SCORE = 0.1


@dataclass(frozen=True)
class LiftParams:
    offsets: np.ndarray  # (m, 3)
    base_height: float = 0.0

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(off)):
            raise ValueError("lift offsets must be finite")
        object.__setattr__(self, "offsets", off)


@dataclass(frozen=True)
class QuerySet:
    reference_points: np.ndarray  # (m, 3)
    content: np.ndarray  # (m, d)
    provenance: np.ndarray  # rows of the sampled sparse BEV grid
    foreground: np.ndarray | None = None

    def __post_init__(self):
        if self.reference_points.shape[0] != self.content.shape[0]:
            raise ValueError("reference points and content queries must have equal row counts")
        if not (np.all(np.isfinite(self.reference_points)) and np.all(np.isfinite(self.content))):
            raise ValueError("query rows must be finite")

    def __len__(self) -> int:
        return self.reference_points.shape[0]


def lift(centers_2d, params: LiftParams) -> np.ndarray:
    c = np.asarray(centers_2d, dtype=np.float64).reshape(-1, 2)
    if c.shape[0] != params.offsets.shape[0]:
        raise ValueError("one offset per sampled voxel is required")
    out = np.empty((c.shape[0], 3))
    out[:, :2] = c + params.offsets[:, :2]
    out[:, 2] = params.base_height + params.offsets[:, 2]
    return out


def foreground_labels(centers_2d, boxes) -> np.ndarray:
    """1 where a BEV center lies inside any box footprint (height ignored)."""
    c = np.asarray(centers_2d, dtype=np.float64).reshape(-1, 2)
    pts = np.column_stack([c, np.zeros(len(c))])
    label = np.zeros(len(c), dtype=np.int64)
    for b in boxes:
        label |= points_in_box(pts, b, ignore_height=True)
    return label


def containment_scores(centers_2d, boxes) -> np.ndarray:
    """Stand-in foreground probabilities: 1.0 inside a box footprint, 0.1 elsewhere."""
    lab = foreground_labels(centers_2d, boxes)
    return np.where(lab == 1, FOREGROUND_SCORE, BACKGROUND_SCORE)


def oracle_offsets(centers_2d, boxes: list[BoundingBox3D]) -> np.ndarray:
    """Offset from each center to the nearest containing box center; zero if none.

    The z component is the box center height, since lifting starts from z = 0.
    """
    c = np.asarray(centers_2d, dtype=np.float64).reshape(-1, 2)
    pts = np.column_stack([c, np.zeros(len(c))])
    best = np.full(len(c), np.inf)
    off = np.zeros((len(c), 3))
    for b in boxes:
        inside = points_in_box(pts, b, ignore_height=True)
        bc = b.center_array
        d = np.hypot(c[:, 0] - bc[0], c[:, 1] - bc[1])
        take = inside & (d < best)
        best[take] = d[take]
        off[take, 0] = bc[0] - c[take, 0]
        off[take, 1] = bc[1] - c[take, 1]
        off[take, 2] = bc[2]
    return off


def seeded_cell_linear(fmap: BevFeatureMap, rng: SeededRng) -> BevFeatureMap:
    """Shared per-cell linear map standing in for the BEV convolution tower."""
    d = fmap.feature_dim
    bound = 1.0 / np.sqrt(max(d, 1))
    w = rng.uniform(-bound, bound, (d, d))
    return BevFeatureMap(fmap.spec, fmap.values @ w)


def init_queries(
    pc: PointCloud,
    boxes,
    bev_map: BevFeatureMap,
    spec: VoxelGridSpec,
    m: int,
    rng: SeededRng | None = None,
    offsets: np.ndarray | None = None,
    strategy: Strategy = Strategy.SFPS,
    cell_linear: bool = False,
) -> QuerySet:
    """Sample ``m`` BEV voxels, lift them to reference points and read content queries.

    ``offsets`` defaults to the box-center oracle; pass predicted offsets
    (one row per BEV voxel) to use a learned head instead.
    """
    bev = collapse_height(voxelize(pc, spec))
    if m > len(bev):
        raise InvalidCount(f"cannot sample {m} references from {len(bev)} BEV voxels")
    centers = bev.centers
    scores = containment_scores(centers, boxes)
    picked = sample(SampleRequest(centers, scores, m, strategy)).indices
    all_offsets = oracle_offsets(centers, boxes) if offsets is None else np.asarray(offsets)
    refs = lift(centers[picked], LiftParams(all_offsets[picked]))
    if cell_linear:
        bev_map = seeded_cell_linear(bev_map, rng if rng is not None else SeededRng(0))
    content = bilinear_lookup(bev_map, refs[:, :2])
    return QuerySet(refs, content, picked, scores[picked] == FOREGROUND_SCORE)
