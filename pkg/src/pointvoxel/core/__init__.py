from .geometry import (
    BoundingBox3D,
    GeometryError,
    PointCloud,
    RigidTransform,
    SphericalCoordinate,
    cartesian_to_spherical,
    cartesian_to_spherical_array,
    point_in_box,
    points_in_box,
    spherical_to_cartesian,
    spherical_to_cartesian_array,
    wrap_angle,
)
from .io import FormatError, read_boxes_csv, read_pcb, read_points_csv, write_boxes_csv, write_pcb
from .rng import SeededRng, bottom_k, derive_seed

__all__ = [
    "BoundingBox3D",
    "FormatError",
    "GeometryError",
    "PointCloud",
    "RigidTransform",
    "SeededRng",
    "SphericalCoordinate",
    "bottom_k",
    "cartesian_to_spherical",
    "cartesian_to_spherical_array",
    "derive_seed",
    "point_in_box",
    "points_in_box",
    "read_boxes_csv",
    "read_pcb",
    "read_points_csv",
    "spherical_to_cartesian",
    "spherical_to_cartesian_array",
    "wrap_angle",
    "write_boxes_csv",
    "write_pcb",
]
