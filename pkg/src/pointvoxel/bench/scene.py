"""Seeded synthetic LiDAR-like scenes: boxes on a ground disc."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import BoundingBox3D, PointCloud, SeededRng
from ..range_image import (
    AugmentationRecord,
    CopyPaste,
    FlipAxis,
    GlobalRotation,
    GlobalScale,
    inverse_augment,
)


class PlacementFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    extent: float = 40.0  # ground disc radius, meters
    objects: int = 8
    points_per_object: int = 400
    background_points: int = 20000
    noise: float = 0.02
    seed: int = 0
    augment: bool = False
    min_object_range: float = 5.0
    max_retries: int = 200

    def __post_init__(self):
        if self.objects < 0 or self.points_per_object < 0 or self.background_points < 0:
            raise ValueError("scene counts must be non-negative")
        if self.noise < 0:
            raise ValueError("noise sigma must be non-negative")
        if not self.extent > 0:
            raise ValueError("extent must be positive")


@dataclass(frozen=True)
class Scene:
    cloud: PointCloud  # augmented frame (what the detector sees)
    boxes: list
    record: AugmentationRecord
    object_slices: list  # point row ranges of each object

    @property
    def raw_positions(self) -> np.ndarray:
        """Positions with every recorded augmentation undone."""
        return inverse_augment(self.cloud.positions, self.record)


def _place_boxes(spec: SceneSpec, rng: SeededRng) -> list[BoundingBox3D]:
    boxes: list[BoundingBox3D] = []
    radii: list[float] = []
    for _ in range(spec.objects):
        for _attempt in range(spec.max_retries):
            length, width, height = 3.8 + rng.random(), 1.7 + 0.4 * rng.random(), 1.4 + 0.4 * rng.random()
            r = spec.min_object_range + (spec.extent - 3.0 - spec.min_object_range) * math.sqrt(rng.random())
            ang = 2 * math.pi * rng.random()
            cx, cy = r * math.cos(ang), r * math.sin(ang)
            circ = 0.5 * math.hypot(length, width)
            if all(math.hypot(cx - b.center[0], cy - b.center[1]) > circ + rb for b, rb in zip(boxes, radii)):
                boxes.append(BoundingBox3D((cx, cy, height / 2), (length, width, height), 2 * math.pi * rng.random()))
                radii.append(circ)
                break
        else:
            raise PlacementFailure(f"could not place object {len(boxes)} after {spec.max_retries} tries")
    return boxes


def _surface_points(box: BoundingBox3D, count: int, noise: float, rng: SeededRng) -> np.ndarray:
    lx, ly, lz = box.size
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])
    cdf = np.cumsum(areas) / areas.sum()
    face = np.minimum(np.searchsorted(cdf, rng.random(count), side="right"), 5)
    u = rng.random(count) - 0.5
    v = rng.random(count) - 0.5
    local = np.zeros((count, 3))
    half = box.half_extents
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    other = np.array([[1, 2], [0, 2], [0, 1]])[axis]
    rows = np.arange(count)
    local[rows, axis] = sign * half[axis]
    local[rows, other[:, 0]] = u * 2 * half[other[:, 0]]
    local[rows, other[:, 1]] = v * 2 * half[other[:, 1]]
    if noise > 0:
        local += noise * rng.normal(3 * count).reshape(count, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.column_stack(
        [c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1], local[:, 2]]
    )
    return world + box.center_array


def gen_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene for ``spec.seed``: object surface points first, then ground."""
    rng = SeededRng(spec.seed)
    boxes = _place_boxes(spec, rng.fork(1))
    obj_rng = rng.fork(2)
    parts, slices, start = [], [], 0
    for b in boxes:
        parts.append(_surface_points(b, spec.points_per_object, spec.noise, obj_rng))
        slices.append((start, start + spec.points_per_object))
        start += spec.points_per_object
    g = rng.fork(3)
    n = spec.background_points
    r = spec.extent * np.sqrt(g.random(n))
    a = 2 * np.pi * g.random(n)
    ground = np.column_stack([r * np.cos(a), r * np.sin(a), spec.noise * g.normal(n)])
    parts.append(ground)
    pos = np.vstack(parts) if parts else np.zeros((0, 3))

    record = AugmentationRecord()
    if spec.objects:
        record.record(CopyPaste(0, start))
    if spec.augment:
        ag = rng.fork(4)
        for step in (GlobalRotation(ag.uniform(-math.pi / 4, math.pi / 4, 1)[0]),
                     FlipAxis(1), GlobalScale(0.95 + 0.1 * ag.random())):
            record.record(step)
            pos = step.apply(pos)
            boxes = [_augment_box(b, step) for b in boxes]
    return Scene(PointCloud(pos), boxes, record, slices)


def _augment_box(b: BoundingBox3D, step) -> BoundingBox3D:
    c = step.apply(b.center_array.reshape(1, 3))[0]
    if isinstance(step, GlobalRotation):
        return BoundingBox3D(tuple(c), b.size, b.yaw + step.angle)
    if isinstance(step, FlipAxis):
        yaw = -b.yaw if step.axis == 1 else math.pi - b.yaw
        return BoundingBox3D(tuple(c), b.size, yaw)
    if isinstance(step, GlobalScale):
        return BoundingBox3D(tuple(c), tuple(np.array(b.size) * step.factor), b.yaw)
    return b
