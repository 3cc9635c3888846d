"""Geometric value types: point clouds, rigid transforms, spherical coords, boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2.0 * np.pi, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(pos)):
            raise GeometryError("point positions must be finite")
        object.__setattr__(self, "positions", pos)
        if self.features is not None:
            feat = np.asarray(self.features, dtype=np.float64)
            if feat.ndim == 1:
                feat = feat.reshape(-1, 1)
            if feat.shape[0] != pos.shape[0]:
                raise GeometryError(
                    f"features have {feat.shape[0]} rows for {pos.shape[0]} points"
                )
            object.__setattr__(self, "features", np.ascontiguousarray(feat))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def subset(self, idx) -> PointCloud:
        feats = None if self.features is None else self.features[idx]
        return PointCloud(self.positions[idx], feats)

    def concat(self, other: PointCloud) -> PointCloud:
        if self.feature_dim != other.feature_dim:
            raise GeometryError("cannot concatenate clouds with different feature dims")
        feats = None
        if self.features is not None:
            feats = np.vstack([self.features, other.features])
        return PointCloud(np.vstack([self.positions, other.positions]), feats)


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """4x4 homogeneous rigid motion acting on row-vector points: p' = R p + t."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError("rigid transform must be 4x4")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=0.0, rtol=0.0):
            raise GeometryError("last row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) >= 1e-9 or np.linalg.det(r) <= 0:
            raise GeometryError("rotation block is not a proper rotation")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rotation_translation(cls, rotation, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls.from_rotation_translation(_rot_z(yaw), translation)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(4))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return the transform applying ``other`` first, then ``self``."""
        return RigidTransform(self.matrix @ other.matrix)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)

    def inverse(self) -> RigidTransform:
        r = self.rotation
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ self.translation
        return RigidTransform(m)


@dataclass(frozen=True)
class SphericalCoordinate:
    azimuth: float
    inclination: float
    range: float


def cartesian_to_spherical(p) -> SphericalCoordinate:
    x, y, z = (float(v) for v in p)
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise GeometryError("point must be finite")
    a, i, r = cartesian_to_spherical_array(np.array([[x, y, z]]))[0]
    return SphericalCoordinate(float(a), float(i), float(r))


def spherical_to_cartesian(s: SphericalCoordinate) -> np.ndarray:
    return spherical_to_cartesian_array(
        np.array([[s.azimuth, s.inclination, s.range]], dtype=np.float64)
    )[0]


def cartesian_to_spherical_array(points) -> np.ndarray:
    """Vectorized conversion; returns (n, 3) columns azimuth, inclination, range.

    The origin maps to all zeros. An azimuth of exactly -pi is reported as pi.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    rho = np.hypot(x, y)
    az = np.arctan2(y, x)
    az = np.where(az == -np.pi, np.pi, az)
    inc = np.arctan2(z, rho)
    r = np.sqrt(x * x + y * y + z * z)
    # atan2(+-0, +-0) can give +-pi; pin the origin convention
    origin = r == 0.0
    az = np.where(origin, 0.0, az)
    inc = np.where(origin, 0.0, inc)
    return np.column_stack([az, inc, r])


def spherical_to_cartesian_array(sph) -> np.ndarray:
    s = np.asarray(sph, dtype=np.float64).reshape(-1, 3)
    az, inc, r = s[:, 0], s[:, 1], s[:, 2]
    c = np.cos(inc)
    return np.column_stack([r * c * np.cos(az), r * c * np.sin(az), r * np.sin(inc)])


@dataclass(frozen=True)
class BoundingBox3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise GeometryError("center and size must be 3-vectors")
        if not all(v > 0 for v in size):
            raise GeometryError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))

    @property
    def center_array(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.array(self.size)

    def to_local(self, points) -> np.ndarray:
        """Express world points in the box frame (origin at center, x along heading)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center_array
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * pts[:, 0] + s * pts[:, 1]
        ly = -s * pts[:, 0] + c * pts[:, 1]
        return np.column_stack([lx, ly, pts[:, 2]])

    def transformed(self, t: RigidTransform) -> BoundingBox3D:
        """Box moved by a rigid motion whose rotation is about z only."""
        r = t.rotation
        if abs(r[2, 2] - 1.0) > 1e-9:
            raise GeometryError("boxes only support yaw rotations")
        new_center = t.apply(self.center_array)
        dyaw = math.atan2(r[1, 0], r[0, 0])
        return BoundingBox3D(tuple(new_center), self.size, self.yaw + dyaw)


def points_in_box(points, box: BoundingBox3D, ignore_height: bool = False) -> np.ndarray:
    local = box.to_local(points)
    half = box.half_extents
    inside = (np.abs(local[:, 0]) <= half[0]) & (np.abs(local[:, 1]) <= half[1])
    if not ignore_height:
        inside &= np.abs(local[:, 2]) <= half[2]
    return inside


def point_in_box(p, box: BoundingBox3D, ignore_height: bool = False) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64).reshape(1, 3), box, ignore_height)[0])
