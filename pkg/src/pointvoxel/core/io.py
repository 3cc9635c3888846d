"""Point-cloud and box file formats.

PCB v1 layout (little-endian)::

    b"PCB1" | u32 n | u32 d | n*3 float32 positions | n*d float32 features

Positions and features are stored as float32, so a write/read round trip
rounds each value to the nearest float32 (relative error <= 2**-24).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import BoundingBox3D, PointCloud

MAGIC = b"PCB1"
_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    pass


def write_pcb(path, pc: PointCloud) -> None:
    d = pc.feature_dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, pc.n, d))
        fh.write(pc.positions.astype("<f4").tobytes())
        if d:
            fh.write(pc.features.astype("<f4").tobytes())


def read_pcb(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for a PCB header")
    magic, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + 4 * n * (3 + d)
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for n={n}, d={d}, got {len(data)}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    pos = body[: 3 * n].reshape(n, 3).astype(np.float64)
    feats = body[3 * n :].reshape(n, d).astype(np.float64) if d else None
    return PointCloud(pos, feats)


def read_points_csv(path) -> PointCloud:
    """Read ``x,y,z[,f0,f1,...]`` with a header row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:3] != ["x", "y", "z"]:
            raise FormatError(f"header must start with x,y,z, got {header[:3]}")
        for i, name in enumerate(header[3:]):
            if name != f"f{i}":
                raise FormatError(f"unexpected feature column {name!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    feats = arr[:, 3:] if len(header) > 3 else None
    return PointCloud(arr[:, :3], feats)


def write_points_csv(path, pc: PointCloud) -> None:
    header = ["x", "y", "z"] + [f"f{i}" for i in range(pc.feature_dim)]
    data = pc.positions if pc.features is None else np.hstack([pc.positions, pc.features])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(data.tolist())


BOX_FIELDS = ["cx", "cy", "cz", "length", "width", "height", "yaw"]


def write_boxes_csv(path, boxes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOX_FIELDS)
        for b in boxes:
            w.writerow([repr(v) for v in (*b.center, *b.size, b.yaw)])


def read_boxes_csv(path) -> list[BoundingBox3D]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BOX_FIELDS:
            raise FormatError(f"box header must be {','.join(BOX_FIELDS)}")
        return [
            BoundingBox3D(
                (float(r["cx"]), float(r["cy"]), float(r["cz"])),
                (float(r["length"]), float(r["width"]), float(r["height"])),
                float(r["yaw"]),
            )
            for r in reader
        ]
