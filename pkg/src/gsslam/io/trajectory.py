"""TUM trajectory text format: ``timestamp tx ty tz qx qy qz qw`` (camera-to-world)."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import CameraPose, quat_normalize
from .files import write_text_atomic

log = logging.getLogger(__name__)


class FormatError(ValueError):
    """Malformed dataset or interchange file."""


def pose_to_tum_fields(pose: CameraPose) -> np.ndarray:
    """``[tx ty tz qx qy qz qw]`` of the camera-to-world transform."""
    inv = pose.inverse()
    q = inv.rotation
    if q[0] < 0:
        q = -q
    return np.concatenate([inv.translation, q[1:], q[:1]])


def pose_from_tum_fields(values: Sequence[float]) -> CameraPose:
    tx, ty, tz, qx, qy, qz, qw = values
    c2w = CameraPose(quat_normalize(np.array([qw, qx, qy, qz])), np.array([tx, ty, tz]))
    return c2w.inverse()


def format_trajectory_tum(trajectory: Sequence[CameraPose], timestamps: Sequence[float]) -> str:
    if len(trajectory) != len(timestamps):
        raise ValueError(f"{len(trajectory)} poses but {len(timestamps)} timestamps")
    lines = []
    for ts, pose in zip(timestamps, trajectory):
        vals = " ".join(f"{v:.9g}" for v in pose_to_tum_fields(pose) + 0.0)
        lines.append(f"{ts:.9f} {vals}")
    return "\n".join(lines) + ("\n" if lines else "")


def export_trajectory_tum(trajectory: Sequence[CameraPose], timestamps: Sequence[float], path) -> None:
    write_text_atomic(path, format_trajectory_tum(trajectory, timestamps))


def parse_tum_rows(path, ncols: int, strict: bool = True) -> list[list[str]]:
    """Whitespace-separated rows of a TUM index file, skipping ``#`` comments."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    rows, skipped = [], 0
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != ncols:
            if strict:
                raise FormatError(f"{path}:{lineno}: expected {ncols} fields, got {len(parts)}")
            skipped += 1
            continue
        rows.append(parts)
    if skipped:
        log.warning("%s: skipped %d malformed rows", path, skipped)
    return rows


def load_trajectory_tum(path, strict: bool = True) -> tuple[list[float], list[CameraPose]]:
    """Parse a TUM trajectory; returns timestamps and world-to-camera poses."""
    timestamps, poses, skipped = [], [], 0
    for parts in parse_tum_rows(path, 8, strict):
        try:
            vals = [float(x) for x in parts]
            pose = pose_from_tum_fields(vals[1:])
        except ValueError as e:
            if strict:
                raise FormatError(f"{path}: unparseable row {' '.join(parts)!r}: {e}") from e
            skipped += 1
            continue
        timestamps.append(vals[0])
        poses.append(pose)
    if skipped:
        log.warning("%s: skipped %d unparseable rows", path, skipped)
    return timestamps, poses
