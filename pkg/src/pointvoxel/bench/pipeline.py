"""End-to-end driver: voxels -> queries -> tokens -> attention -> losses."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import PointCloud, RigidTransform, SeededRng, point_in_box
from ..core.rng import derive_seed
from ..losses import (
    binary_entropy,
    box_row,
    centerness_targets,
    cls_loss,
    offset_loss,
    reg_loss,
    seg_loss,
)
from ..pvt import (
    AttentionWeights,
    PointTokenStats,
    PosEncodingMode,
    TokenSet,
    attention_forward,
    gen_point_tokens_batch,
    gen_voxel_tokens_batch,
)
from ..query_init import foreground_labels, init_queries, oracle_offsets
from ..range_image import AugmentationRecord, GlobalScale, RangeImageSpec, build, inverse_augment
from ..sampler import Strategy
from ..voxelizer import EmptyGrid, VoxelGridSpec, collapse_height, densify, voxelize
from .config import PipelineConfig

# fixed child-seed keys so every stage draws from its own stream
_K_BACKBONE, _K_VOXEL_TOKENS, _K_POINT_TOKENS, _K_WEIGHTS, _K_HEAD, _K_BEV = range(1, 7)


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineResult:
    features: np.ndarray  # fused (m, d) query features
    reference_points: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def grid_spec(cfg: PipelineConfig) -> VoxelGridSpec:
    r = cfg.point_range
    return VoxelGridSpec.from_range(r[:3], r[3:], cfg.voxel_size)


def backbone_standin(grid, dim: int, seed: int):
    """Seeded linear lift of the 4-dim voxel surrogate to ``dim`` channels.

    Stands in for middle-layer backbone features. Offsets are expressed in
    voxel units and the member count as log1p(count).
    """
    raw = grid.features
    x = np.column_stack([raw[:, :3] / grid.spec.size_array, np.log1p(raw[:, 3])])
    rng = SeededRng(seed)
    w = rng.uniform(-0.5, 0.5, (4, dim))
    b = rng.uniform(-0.5, 0.5, dim)
    return grid.with_features(np.tanh(x @ w + b))


def _total_scale(rec: AugmentationRecord) -> float:
    s = 1.0
    for step in rec.steps:
        if isinstance(step, GlobalScale):
            s *= step.factor
    return s


def run_pipeline(cloud: PointCloud, boxes, cfg: PipelineConfig | None = None, record: AugmentationRecord | None = None) -> PipelineResult:
    """Run the full query/token/attention path and score it against oracle targets.

    ``cloud`` and ``boxes`` are in the augmented frame; ``record`` lists the
    augmentations so reference points can be mapped back for the range-image
    ball query, which is built from the un-augmented points.
    """
    cfg = cfg or PipelineConfig()
    record = record or AugmentationRecord()
    timings = {}
    t0 = time.perf_counter()
    spec = grid_spec(cfg)
    try:
        raw_grid = voxelize(cloud, spec)
    except EmptyGrid as exc:
        raise EmptyGrid(f"pipeline input produced no voxels ({cloud.n} points, range {cfg.point_range}): {exc}") from exc
    grid = backbone_standin(raw_grid, cfg.dim, derive_seed(cfg.seed, _K_BACKBONE))
    bev = collapse_height(grid)
    bev_map = densify(bev)
    timings["voxelize"] = time.perf_counter() - t0

    t = time.perf_counter()
    m = min(cfg.references, len(bev))
    qs = init_queries(
        cloud, boxes, bev_map, spec, m,
        rng=SeededRng(derive_seed(cfg.seed, _K_BEV)),
        strategy=Strategy(cfg.sampling),
        cell_linear=cfg.cell_linear,
    )
    timings["init_queries"] = time.perf_counter() - t

    t = time.perf_counter()
    vt = gen_voxel_tokens_batch(qs.reference_points, grid, cfg.voxel_radius, cfg.tokens, derive_seed(cfg.seed, _K_VOXEL_TOKENS))
    timings["voxel_tokens"] = time.perf_counter() - t

    t = time.perf_counter()
    raw = inverse_augment(cloud.positions, record)
    sensor = RigidTransform.from_yaw(0.0, (0.0, 0.0, cfg.sensor_height))
    rspec = RangeImageSpec(cfg.range_rows, cfg.range_cols, math.radians(cfg.phi_min_deg), math.radians(cfg.phi_max_deg))
    img = build(raw, sensor, rspec)
    timings["range_image_build"] = time.perf_counter() - t

    t = time.perf_counter()
    stats = PointTokenStats()
    refs_raw = inverse_augment(qs.reference_points, record)
    pt = gen_point_tokens_batch(
        refs_raw, img, grid, cfg.point_radius / _total_scale(record), cfg.tokens,
        derive_seed(cfg.seed, _K_POINT_TOKENS),
        kernel=cfg.kernel, knn_k=cfg.knn_k, knn_window=cfg.knn_window, mode=cfg.selection,
        stats=stats, token_positions=cloud.positions,
    )
    timings["point_tokens"] = time.perf_counter() - t

    t = time.perf_counter()
    tokens = TokenSet.concat(vt, pt)
    weights = [AttentionWeights.seeded(derive_seed(cfg.seed, _K_WEIGHTS * 100 + i), cfg.dim, cfg.ffn_dim, cfg.heads) for i in range(cfg.blocks)]
    fused = attention_forward(qs, tokens, weights, PosEncodingMode(cfg.pos_encoding))
    timings["attention"] = time.perf_counter() - t

    losses = _losses(cfg, bev, boxes, qs, fused)
    diag = {
        "points": cloud.n,
        "voxels": len(grid),
        "bev_voxels": len(bev),
        "references": m,
        "foreground_references": int(qs.foreground.sum()),
        "voxel_tokens_mean": float(vt.valid_count.mean()),
        "voxel_tokens_max": int(vt.valid_count.max()),
        "point_tokens_mean": float(pt.valid_count.mean()),
        "point_tokens_max": int(pt.valid_count.max()),
        "voxel_token_mask_rate": float(1 - vt.mask.mean()),
        "point_token_mask_rate": float(1 - pt.mask.mean()),
        "ball_query_inspected": stats.ball_inspected,
        "knn_points": stats.knn_points,
        "knn_window_scans": stats.knn_window_scans,
        **losses,
        **{f"time_{k}": v for k, v in timings.items()},
        "time_total": time.perf_counter() - t0,
    }
    return PipelineResult(fused, qs.reference_points, diag)


def _losses(cfg, bev, boxes, qs, fused) -> dict:
    centers = bev.centers
    fg = foreground_labels(centers, boxes)
    target_off = oracle_offsets(centers, boxes)
    cn = centerness_targets(qs.reference_points, boxes)
    ref_fg = cn > 0

    if cfg.predictions == "oracle":
        seg_pred = fg.astype(np.float64)
        off_pred = target_off
        cls_pred = cn
        box_pred = None
    else:
        rng = SeededRng(derive_seed(cfg.seed, _K_HEAD))
        d = fused.shape[1]
        w_cls = rng.uniform(-1, 1, d) / math.sqrt(d)
        w_box = rng.uniform(-1, 1, (d, 7)) / math.sqrt(d)
        seg_pred = np.full(len(centers), fg.mean())
        off_pred = np.zeros_like(target_off)
        cls_pred = 1.0 / (1.0 + np.exp(-(fused @ w_cls)))
        box_pred = fused @ w_box

    out = {"loss_seg": seg_loss(seg_pred, fg)}
    fg_rows = fg == 1
    out["loss_offset"] = offset_loss(off_pred[fg_rows], target_off[fg_rows]) if fg_rows.any() else 0.0
    out["loss_cls"] = cls_loss(cls_pred, cn)
    out["loss_cls_excess"] = out["loss_cls"] - float(binary_entropy(cn).mean())
    if ref_fg.any():
        targets = np.array([box_row(_containing_box(p, boxes)) for p in qs.reference_points[ref_fg]])
        if box_pred is None:
            preds = targets
        else:
            preds = targets.copy()
            preds[:, :3] = qs.reference_points[ref_fg] + box_pred[ref_fg, :3]
            preds[:, 3:6] = targets[:, 3:6] * np.exp(box_pred[ref_fg, 3:6])
            preds[:, 6] = box_pred[ref_fg, 6]
        c, s, a = reg_loss(preds, targets)
    else:
        c = s = a = 0.0
    out.update(loss_reg_center=c, loss_reg_size=s, loss_reg_angle=a)
    return out


def _containing_box(p, boxes):
    for b in boxes:
        if point_in_box(p, b):
            return b
    raise PipelineError("foreground reference outside every box")
