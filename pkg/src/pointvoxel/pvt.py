"""Voxel/point token generation and the point-voxel cross-attention block.

Inference only. A block computes, per reference point::

    X = LayerNorm(Attention(tokens, query) + query)
    Y = LayerNorm(FFN(X) + X)

with multi-head scaled dot-product cross-attention over the valid tokens of
that query. Positional information enters in one of four ways:

* ``none``        plain attention;
* ``absolute``    an MLP of the absolute coordinate added to the key-side
                  token features and to the query feature;
* ``bias``        a linear map of the token-minus-query offset giving one
                  additive logit bias per head;
* ``contextual``  an MLP of the offset giving per-head key-side vectors
                  (dotted with the projected query and added to the logit)
                  and value-side vectors (added to the values).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .core import SeededRng
from .core.rng import bottom_k, derive_seed, derive_seeds
from .knn_interp import KnnRequest, conquer_fetch_knn, interpolate_batch
from .range_image import BallQueryRequest, SelectionMode, VirtualRangeImage, ball_query
from .voxelizer import SparseVoxelGrid

VOXEL, POINT = 0, 1


class ShapeMismatch(ValueError):
    pass


class PosEncodingMode(str, Enum):
    NONE = "none"
    CONTEXTUAL = "contextual"
    BIAS = "bias"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class TokenSet:
    """Tokens for one query, shapes (L, .), or a batch, shapes (m, L, .)."""

    coords: np.ndarray
    features: np.ndarray
    kind: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        c, f = np.asarray(self.coords, dtype=np.float64), np.asarray(self.features, dtype=np.float64)
        if c.shape[:-1] != f.shape[:-1] or c.shape[:-1] != np.shape(self.mask):
            raise ShapeMismatch("coords, features and mask must share leading dimensions")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        object.__setattr__(self, "kind", np.broadcast_to(np.asarray(self.kind, dtype=np.int8), c.shape[:-1]))

    @property
    def batched(self) -> bool:
        return self.coords.ndim == 3

    @property
    def valid_count(self):
        return self.mask.sum(axis=-1)

    @classmethod
    def empty(cls, length: int, d: int) -> TokenSet:
        return cls(np.zeros((length, 3)), np.zeros((length, d)), np.zeros(length), np.zeros(length, bool))

    @staticmethod
    def concat(a: TokenSet, b: TokenSet) -> TokenSet:
        ax = a.coords.ndim - 2
        return TokenSet(
            np.concatenate([a.coords, b.coords], axis=ax),
            np.concatenate([a.features, b.features], axis=ax),
            np.concatenate([a.kind, b.kind], axis=ax),
            np.concatenate([a.mask, b.mask], axis=ax),
        )

    def permuted(self, perm) -> TokenSet:
        ax = self.coords.ndim - 2
        take = lambda x: np.take(x, perm, axis=ax)  # noqa: E731
        return TokenSet(take(self.coords), take(self.features), take(self.kind), take(self.mask))


# ------------------------------------------------------------------- tokens


def _pad_tokens(coords, feats, length, kind, d):
    n = len(coords)
    c = np.zeros((length, 3))
    f = np.zeros((length, d))
    c[:n], f[:n] = coords, feats
    mask = np.arange(length) < n
    return c, f, mask


def gen_voxel_tokens_batch(refs, grid: SparseVoxelGrid, radius: float, length: int, seed: int) -> TokenSet:
    """Uniformly sample up to ``length`` occupied voxels within ``radius`` of each reference.

    Reference ``i`` draws with the child seed ``derive_seed(seed, i)``.
    """
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 3)
    if not radius > 0 or length < 1:
        raise ValueError("radius must be positive and length at least 1")
    m, d = len(refs), grid.feature_dim
    coords = np.zeros((m, length, 3))
    feats = np.zeros((m, length, d))
    mask = np.zeros((m, length), dtype=bool)
    seeds = derive_seeds(seed, np.arange(m, dtype=np.uint64))
    centers = grid.centers
    for i in range(m):
        dist = np.sqrt(np.sum((centers - refs[i]) ** 2, axis=1))
        rows = bottom_k(int(seeds[i]), np.flatnonzero(dist < radius), length)
        coords[i], feats[i], mask[i] = _pad_tokens(centers[rows], grid.features[rows], length, VOXEL, d)
    return TokenSet(coords, feats, VOXEL, mask)


def gen_voxel_tokens(ref, grid: SparseVoxelGrid, radius: float, length: int, rng: SeededRng) -> TokenSet:
    sub = derive_seed(rng.seed, rng.counter)
    rng.counter += 1
    t = gen_voxel_tokens_batch(np.asarray(ref).reshape(1, 3), grid, radius, length, sub)
    return TokenSet(t.coords[0], t.features[0], VOXEL, t.mask[0])


@dataclass
class PointTokenStats:
    ball_inspected: int = 0
    knn_window_scans: int = 0
    knn_points: int = 0


def gen_point_tokens_batch(
    refs,
    img: VirtualRangeImage,
    grid: SparseVoxelGrid,
    radius: float,
    length: int,
    seed: int,
    kernel: int = 16,
    knn_k: int = 8,
    knn_window: int = 2,
    mode: SelectionMode = SelectionMode.RANDOM,
    stats: PointTokenStats | None = None,
    token_positions=None,
) -> TokenSet:
    """Ball-query raw points around each reference and give them voxel-interpolated features.

    The KNN runs once over the points of all references, so points shared
    between references are deduplicated by the conquer step.
    ``token_positions`` (indexed like the image's points) supplies token
    coordinates in another frame, e.g. the augmented one; by default the
    image's own coordinates are used.
    """
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 3)
    m, d = len(refs), grid.feature_dim
    bq = ball_query(img, BallQueryRequest(refs, radius, length, kernel, mode, seed))
    valid = bq.mask
    idx = bq.indices[valid]
    pts = img.positions_of(idx) if token_positions is None else np.asarray(token_positions)[idx]
    knn = conquer_fetch_knn(KnnRequest(pts, grid, knn_k, knn_window))
    pf = interpolate_batch(pts, knn, grid.features)
    coords = np.zeros((m, length, 3))
    feats = np.zeros((m, length, d))
    coords[valid] = pts
    feats[valid] = pf
    # a point with no voxel inside the KNN window carries no feature; mask it
    has_feat = np.zeros((m, length), dtype=bool)
    has_feat[valid] = knn.counts > 0
    if stats is not None:
        stats.ball_inspected += int(bq.inspected.sum())
        stats.knn_window_scans += knn.counters.window_scans
        stats.knn_points += len(pts)
    return TokenSet(coords, feats, POINT, valid & has_feat)


def gen_point_tokens(ref, img, grid, radius: float, length: int, rng: SeededRng, **kw) -> TokenSet:
    sub = derive_seed(rng.seed, rng.counter)
    rng.counter += 1
    t = gen_point_tokens_batch(np.asarray(ref).reshape(1, 3), img, grid, radius, length, sub, **kw)
    return TokenSet(t.coords[0], t.features[0], POINT, t.mask[0])


# ------------------------------------------------------------------ weights


@dataclass
class AttentionWeights:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    abs_w1: np.ndarray
    abs_b1: np.ndarray
    abs_w2: np.ndarray
    abs_b2: np.ndarray
    bias_w: np.ndarray
    bias_b: np.ndarray
    ctx_w1: np.ndarray
    ctx_b1: np.ndarray
    ctx_w2: np.ndarray
    ctx_b2: np.ndarray
    heads: int = 4

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.heads:
            raise ShapeMismatch(f"model dim {d} is not divisible by {self.heads} heads")
        for f in fields(self):
            if f.name == "heads":
                continue
            a = getattr(self, f.name)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"weight {f.name} is not finite")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.ffn_w1.shape[1]

    @classmethod
    def seeded(cls, seed: int, d: int = 128, d_ff: int = 512, heads: int = 4) -> AttentionWeights:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; unit LayerNorm gains."""
        rng = SeededRng(seed)

        def lin(fan_in, fan_out):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, (fan_in, fan_out)), rng.uniform(-b, b, fan_out)

        wq, bq = lin(d, d)
        wk, bk = lin(d, d)
        wv, bv = lin(d, d)
        wo, bo = lin(d, d)
        w1, b1 = lin(d, d_ff)
        w2, b2 = lin(d_ff, d)
        aw1, ab1 = lin(3, d)
        aw2, ab2 = lin(d, d)
        bw, bb = lin(3, heads)
        cw1, cb1 = lin(3, d)
        cw2, cb2 = lin(d, 2 * d)
        one, zero = np.ones(d), np.zeros(d)
        return cls(
            wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2,
            one, zero, one.copy(), zero.copy(),
            aw1, ab1, aw2, ab2, bw, bb, cw1, cb1, cw2, cb2, heads,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "heads"}

    def save(self, path) -> None:
        """Flat little-endian float32 blob plus a ``.json`` manifest of names, shapes, offsets."""
        path = Path(path)
        manifest = {"format": "float32-le", "heads": self.heads, "tensors": []}
        offset = 0
        chunks = []
        for name, arr in self.tensors().items():
            manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(np.asarray(arr, dtype="<f4").tobytes())
            offset += arr.size * 4
        path.write_bytes(b"".join(chunks))
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, path) -> AttentionWeights:
        path = Path(path)
        manifest = json.loads(Path(str(path) + ".json").read_text())
        blob = path.read_bytes()
        kw = {}
        for t in manifest["tensors"]:
            n = int(np.prod(t["shape"])) if t["shape"] else 1
            a = np.frombuffer(blob, dtype="<f4", count=n, offset=t["offset"])
            kw[t["name"]] = a.astype(np.float64).reshape(t["shape"])
        return cls(heads=manifest["heads"], **kw)


# ---------------------------------------------------------------- forward


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _relu(x):
    return np.maximum(x, 0.0)


def _mlp(x, w1, b1, w2, b2):
    return _relu(x @ w1 + b1) @ w2 + b2


def cross_attention(q_feat, q_pos, tokens: TokenSet, w: AttentionWeights, mode, return_probs: bool = False):
    """Multi-head attention output (before residual) for a batch of queries.

    ``q_feat`` (m, d), ``q_pos`` (m, 3); ``tokens`` batched (m, L, .).
    Queries without any valid token get a zero output.
    """
    mode = PosEncodingMode(mode)
    m, d = q_feat.shape
    h = w.heads
    dh = d // h
    L = tokens.coords.shape[1]
    valid = tokens.mask

    q_in, k_in = q_feat, tokens.features
    if mode is PosEncodingMode.ABSOLUTE:
        q_in = q_in + _mlp(q_pos, w.abs_w1, w.abs_b1, w.abs_w2, w.abs_b2)
        k_in = k_in + _mlp(tokens.coords, w.abs_w1, w.abs_b1, w.abs_w2, w.abs_b2)
    q = (q_in @ w.wq + w.bq).reshape(m, h, dh)
    k = (k_in @ w.wk + w.bk).reshape(m, L, h, dh)
    v = (tokens.features @ w.wv + w.bv).reshape(m, L, h, dh)

    logits = np.einsum("mhc,mlhc->mlh", q, k)
    if mode in (PosEncodingMode.BIAS, PosEncodingMode.CONTEXTUAL):
        rel = tokens.coords - q_pos[:, None, :]
        if mode is PosEncodingMode.BIAS:
            bias = rel @ w.bias_w + w.bias_b
        else:
            ctx = _mlp(rel, w.ctx_w1, w.ctx_b1, w.ctx_w2, w.ctx_b2)
            rk = ctx[..., :d].reshape(m, L, h, dh)
            v = v + ctx[..., d:].reshape(m, L, h, dh)
            logits = logits + np.einsum("mhc,mlhc->mlh", q, rk)
    logits = logits / np.sqrt(dh)
    if mode is PosEncodingMode.BIAS:
        logits = logits + bias

    logits = np.where(valid[..., None], logits, -np.inf)
    any_valid = valid.any(axis=1)
    peak = np.where(any_valid[:, None], logits.max(axis=1), 0.0)
    e = np.where(valid[..., None], np.exp(logits - peak[:, None, :]), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    probs = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    heads_out = np.einsum("mlh,mlhc->mhc", probs, v).reshape(m, d)
    out = heads_out @ w.wo + w.bo
    out[~any_valid] = 0.0
    return (out, probs) if return_probs else out


def transformer_block(q_feat, q_pos, tokens: TokenSet, w: AttentionWeights, mode):
    x = layer_norm(cross_attention(q_feat, q_pos, tokens, w, mode) + q_feat, w.ln1_gamma, w.ln1_beta)
    y = _relu(x @ w.ffn_w1 + w.ffn_b1) @ w.ffn_w2 + w.ffn_b2
    return layer_norm(y + x, w.ln2_gamma, w.ln2_beta)


def attention_forward(queries, tokens: TokenSet, weights, mode=PosEncodingMode.CONTEXTUAL, chunk: int = 64):
    """Run one or more blocks over the queries; returns updated (m, d) features.

    ``queries`` is a QuerySet or a ``(features, positions)`` pair. Unbatched
    tokens are shared by every query. ``weights`` may be a list of blocks.
    """
    if hasattr(queries, "content"):
        feat, pos = queries.content, queries.reference_points
    else:
        feat, pos = queries
    feat = np.asarray(feat, dtype=np.float64).reshape(-1, np.shape(feat)[-1])
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
    blocks = weights if isinstance(weights, (list, tuple)) else [weights]
    m = feat.shape[0]
    if pos.shape[0] != m:
        raise ShapeMismatch("one reference point per content query is required")
    if not tokens.batched:
        tokens = TokenSet(
            np.broadcast_to(tokens.coords, (m, *tokens.coords.shape)),
            np.broadcast_to(tokens.features, (m, *tokens.features.shape)),
            np.broadcast_to(tokens.kind, (m, *tokens.kind.shape)),
            np.broadcast_to(tokens.mask, (m, *tokens.mask.shape)),
        )
    if tokens.coords.shape[0] != m:
        raise ShapeMismatch(f"{tokens.coords.shape[0]} token groups for {m} queries")
    for w in blocks:
        if feat.shape[1] != w.dim or tokens.features.shape[-1] != w.dim:
            raise ShapeMismatch(
                f"weights expect dim {w.dim}, got queries {feat.shape[1]} / tokens {tokens.features.shape[-1]}"
            )
    for w in blocks:
        out = np.empty_like(feat)
        for s in range(0, m, chunk):
            sl = slice(s, s + chunk)
            part = TokenSet(tokens.coords[sl], tokens.features[sl], tokens.kind[sl], tokens.mask[sl])
            out[sl] = transformer_block(feat[sl], pos[sl], part, w, mode)
        feat = out
    return feat
