"""Detection losses: segmentation, offset, centerness classification, box regression."""

from __future__ import annotations

import numpy as np

from .core import BoundingBox3D

PROB_EPS = 1e-7
SMOOTH_L1_BETA = 1.0


class EmptyBatch(ValueError):
    pass


def _nonempty(n, what):
    if n < 1:
        raise EmptyBatch(f"{what} needs at least one row")


def binary_cross_entropy(prob, target):
    """Elementwise -t*ln(p) - (1-t)*ln(1-p); terms with zero weight vanish exactly.

    Probabilities are clamped to [eps, 1 - eps] only inside a term that
    carries weight, so a perfect hard prediction costs exactly zero.
    """
    p = np.asarray(prob, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    pos = np.where(t > 0, t * -np.log(np.clip(p, PROB_EPS, 1.0)), 0.0)
    neg = np.where(t < 1, (1 - t) * -np.log(np.clip(1.0 - p, PROB_EPS, 1.0)), 0.0)
    return pos + neg


def smooth_l1(err, beta: float = SMOOTH_L1_BETA):
    a = np.abs(np.asarray(err, dtype=np.float64))
    return np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)


def seg_loss(prob, label) -> float:
    """Mean binary cross entropy over all non-empty voxels."""
    prob, label = np.ravel(prob), np.ravel(label)
    _nonempty(prob.size, "segmentation loss")
    if prob.size != label.size:
        raise ValueError("one label per voxel is required")
    return float(binary_cross_entropy(prob, label).mean())


def offset_loss(pred, target, beta: float = SMOOTH_L1_BETA) -> float:
    """Mean over foreground rows of the smooth-l1 summed over xyz."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    _nonempty(len(pred), "offset loss")
    return float(smooth_l1(pred - target, beta).sum(axis=1).mean())


def cls_loss(prob, centerness) -> float:
    """Mean soft-label cross entropy against centerness targets."""
    prob, centerness = np.ravel(prob), np.ravel(centerness)
    _nonempty(prob.size, "classification loss")
    if np.any((centerness < 0) | (centerness > 1)):
        raise ValueError("centerness labels must lie in [0, 1]")
    return float(binary_cross_entropy(prob, centerness).mean())


def centerness_target(p, box: BoundingBox3D) -> float:
    """Cube root of the product of min/max face-distance ratios on the three box axes.

    Zero outside the box and on its faces, one only at the exact center.
    """
    local = box.to_local(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    half = box.half_extents
    near = half - np.abs(local)
    if np.any(near < 0):
        return 0.0
    far = half + np.abs(local)
    return float(np.prod(near / far) ** (1.0 / 3.0))


def centerness_targets(points, boxes) -> np.ndarray:
    """Per point: centerness in the first containing box, else 0."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros(len(pts))
    done = np.zeros(len(pts), dtype=bool)
    for b in boxes:
        local = b.to_local(pts)
        half = b.half_extents
        near = half - np.abs(local)
        inside = np.all(near >= 0, axis=1) & ~done
        far = half + np.abs(local[inside])
        out[inside] = np.prod(near[inside] / far, axis=1) ** (1.0 / 3.0)
        done |= inside
    return out


def reg_loss(pred, target, beta: float = SMOOTH_L1_BETA) -> tuple[float, float, float]:
    """(center, size, angle) terms averaged over foreground pairs.

    Rows are ``(cx, cy, cz, l, w, h, yaw)``. Size uses the log ratio, angle
    uses ``sin(pred_yaw - target_yaw)``, which cannot tell a box from its
    180-degree flip.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 7)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 7)
    _nonempty(len(pred), "regression loss")
    if np.any(pred[:, 3:6] <= 0) or np.any(target[:, 3:6] <= 0):
        raise ValueError("box sizes must be positive")
    center = smooth_l1(pred[:, :3] - target[:, :3], beta).sum(axis=1).mean()
    size = smooth_l1(np.log(pred[:, 3:6] / target[:, 3:6]), beta).sum(axis=1).mean()
    angle = smooth_l1(np.sin(pred[:, 6] - target[:, 6]), beta).mean()
    return float(center), float(size), float(angle)


def box_row(b: BoundingBox3D) -> np.ndarray:
    return np.array([*b.center, *b.size, b.yaw])


def binary_entropy(t) -> np.ndarray:
    """Minimum of ``binary_cross_entropy(p, t)`` over p, reached at p = t."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(t > 0, -t * np.log(np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, -(1 - t) * np.log(np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a + b

