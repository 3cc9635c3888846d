import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvoxel.sampler import InvalidCount, SampleRequest, Strategy, fps, sample, semantic_fps


def oracle_farthest(points, scores, m, first):
    """Literal greedy loop: recompute every candidate's distance to the picked set."""
    picked = [first]
    n = len(points)
    while len(picked) < m:
        best, best_key = None, -1.0
        for i in range(n):
            if i in picked:
                continue
            dmin = min(float(np.sqrt(np.sum((points[i] - points[j]) ** 2))) for j in picked)
            key = dmin if scores is None else scores[i] * dmin
            if key > best_key:  # strict: the lowest index wins ties
                best, best_key = i, key
        picked.append(best)
    return picked


def test_fps_line_hand_case():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    assert fps(pts, 3).tolist() == [0, 3, 1]


def test_sfps_hand_case():
    # the highest score seeds; then score * distance decides
    pts = np.array([[0.0, 0], [10, 0], [1, 0]])
    scores = np.array([0.5, 0.1, 1.0])
    assert semantic_fps(pts, scores, 2).tolist() == [2, 1]
    scores2 = np.array([1.0, 0.01, 0.5])
    assert semantic_fps(pts, scores2, 2).tolist() == [0, 2]


def test_topk_stable():
    r = sample(SampleRequest(np.zeros((5, 2)), [0.2, 0.9, 0.2, 0.9, 0.5], 3, Strategy.TOPK))
    assert r.indices.tolist() == [1, 3, 4]


def test_invalid_counts():
    with pytest.raises(InvalidCount):
        SampleRequest(np.zeros((3, 2)), np.ones(3), 4)
    with pytest.raises(InvalidCount):
        SampleRequest(np.zeros((3, 2)), np.ones(3), 0)
    with pytest.raises(ValueError):
        SampleRequest(np.zeros((3, 2)), [0.5, 1.5, 0.5], 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30), st.sampled_from(["fps", "sfps"]))
def test_matches_brute_oracle(seed, n, strategy):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-10, 10, (n, 2))
    scores = rng.uniform(0.05, 1, n)
    m = int(rng.integers(1, n + 1))
    got = sample(SampleRequest(pts, scores, m, strategy)).indices.tolist()
    if strategy == "fps":
        assert got == oracle_farthest(pts, None, m, 0)
    else:
        assert got == oracle_farthest(pts, scores, m, int(np.argmax(scores)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_scale_covariance(seed, factor):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-10, 10, (40, 2))
    scores = rng.uniform(0.05, 1, 40)
    a = semantic_fps(pts, scores, 12)
    b = semantic_fps(pts * factor, scores, 12)
    assert a.tolist() == b.tolist()


def test_uniform_scores_reduce_to_fps():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-10, 10, (100, 2))
    a = sample(SampleRequest(pts, np.full(100, 0.3), 20, Strategy.SFPS, seed_index=0)).indices
    assert a.tolist() == fps(pts, 20).tolist()


def test_keys_non_increasing_for_fps():
    rng = np.random.default_rng(2)
    r = sample(SampleRequest(rng.uniform(size=(60, 3)), np.ones(60), 30, Strategy.FPS))
    assert r.keys[0] == np.inf and np.all(np.diff(r.keys[1:]) <= 0)
