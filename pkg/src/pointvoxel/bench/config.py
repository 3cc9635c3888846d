"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys are the field names of the
target dataclass; unknown keys and malformed values raise ``ConfigError``.
Tuple fields take comma-separated numbers, booleans take true/false/1/0.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    references: int = 512
    tokens: int = 128  # neighbors per reference for each token type
    voxel_radius: float = 8.0
    point_radius: float = 3.2
    dim: int = 128
    ffn_dim: int = 512
    heads: int = 4
    blocks: int = 1
    knn_k: int = 8
    knn_window: int = 2
    kernel: int = 16
    selection: str = "random"
    pos_encoding: str = "contextual"
    sampling: str = "sfps"
    predictions: str = "oracle"  # oracle | head
    # middle-layer voxels: the 0.1 x 0.1 x 0.15 m input grid at stride 8
    voxel_size: tuple[float, float, float] = (0.8, 0.8, 1.2)
    point_range: tuple[float, float, float, float, float, float] = (-40.0, -40.0, -3.0, 40.0, 40.0, 6.6)
    range_rows: int = 64
    range_cols: int = 2048
    phi_min_deg: float = -25.0
    phi_max_deg: float = 15.0
    sensor_height: float = 1.8
    cell_linear: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.references < 1 or self.tokens < 1:
            raise ConfigError("references and tokens must be positive")
        if self.dim % self.heads:
            raise ConfigError("dim must be divisible by heads")
        if not (self.voxel_radius > 0 and self.point_radius > 0):
            raise ConfigError("radii must be positive")
        if self.predictions not in ("oracle", "head"):
            raise ConfigError("predictions must be 'oracle' or 'head'")
        if not all(math.isfinite(v) for v in (*self.voxel_size, *self.point_range)):
            raise ConfigError("voxel_size and point_range must be finite")


def _convert(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if origin is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            args = typing.get_args(tp)
            if len(parts) != len(args):
                raise ConfigError(f"{key} expects {len(args)} comma-separated values")
            return tuple(a(p) for a, p in zip(args, parts))
        if tp is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ConfigError(f"{key} expects a boolean, got {raw!r}")
        return tp(raw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, cls=PipelineConfig):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(raw, hints[key], key)
    return cls(**values)


def load_config(path, cls=PipelineConfig):
    with open(path) as fh:
        return parse_config(fh.read(), cls)


def format_config(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
