"""Farthest-point style sampling of voxel centers.

Three strategies are supported:

* ``fps``   greedy max-min Euclidean distance, seeded at index 0;
* ``sfps``  the same loop keyed on ``score * min_distance``, seeded at the
  highest score;
* ``topk``  the ``m`` highest scores.

Ties always go to the lowest candidate index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class InvalidCount(ValueError):
    pass


class Strategy(str, Enum):
    FPS = "fps"
    SFPS = "sfps"
    TOPK = "topk"


@dataclass(frozen=True)
class SampleRequest:
    candidates: np.ndarray
    scores: np.ndarray
    m: int
    strategy: Strategy = Strategy.SFPS
    seed_index: int | None = None  # None -> the strategy's default seed

    def __post_init__(self):
        cand = np.asarray(self.candidates, dtype=np.float64)
        if cand.ndim == 1:
            cand = cand.reshape(-1, 1)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if scores.shape[0] != cand.shape[0]:
            raise ValueError("one score per candidate is required")
        if not np.all(np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
            raise ValueError("scores must lie in [0, 1]")
        if not 0 < self.m <= cand.shape[0]:
            raise InvalidCount(f"cannot sample {self.m} of {cand.shape[0]} candidates")
        object.__setattr__(self, "candidates", cand)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "strategy", Strategy(self.strategy))


@dataclass(frozen=True)
class SampleResult:
    indices: np.ndarray  # selection order
    keys: np.ndarray  # key of each pick when chosen; inf for the seed


def _farthest(points, weights, m, first):
    n = points.shape[0]
    indices = np.empty(m, dtype=np.int64)
    keys = np.empty(m, dtype=np.float64)
    min_dist = np.full(n, np.inf)
    selected = np.zeros(n, dtype=bool)
    cur = first
    keys[0] = np.inf
    for step in range(m):
        if step:
            key = min_dist if weights is None else weights * min_dist
            key = np.where(selected, -np.inf, key)
            cur = int(np.argmax(key))
            keys[step] = key[cur]
        indices[step] = cur
        selected[cur] = True
        d = np.sqrt(np.sum((points - points[cur]) ** 2, axis=1))
        np.minimum(min_dist, d, out=min_dist)
    return indices, keys


def sample(req: SampleRequest) -> SampleResult:
    if req.strategy is Strategy.TOPK:
        order = np.argsort(-req.scores, kind="stable")[: req.m]
        return SampleResult(order.astype(np.int64), req.scores[order])
    if req.strategy is Strategy.FPS:
        first = 0 if req.seed_index is None else int(req.seed_index)
        idx, keys = _farthest(req.candidates, None, req.m, first)
    else:
        first = int(np.argmax(req.scores)) if req.seed_index is None else int(req.seed_index)
        idx, keys = _farthest(req.candidates, req.scores, req.m, first)
    return SampleResult(idx, keys)


def fps(points, m: int, seed_index: int = 0) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    req = SampleRequest(pts, np.ones(len(pts)), m, Strategy.FPS, seed_index)
    return sample(req).indices


def semantic_fps(points, scores, m: int) -> np.ndarray:
    return sample(SampleRequest(points, scores, m, Strategy.SFPS)).indices
