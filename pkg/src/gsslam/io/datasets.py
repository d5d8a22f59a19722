"""Sequence sources: TUM-RGBD directories and the simple numbered-PNG layout."""
from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..core import CameraIntrinsics, CameraPose, RgbdFrame
from .files import (read_color_png, read_depth_raw, write_color_png, write_depth_png,
                    write_text_atomic)
from .trajectory import FormatError, export_trajectory_tum, load_trajectory_tum, parse_tum_rows

log = logging.getLogger(__name__)

TUM_DEPTH_SCALE = 5000.0
ASSOCIATION_WINDOW = 0.02

# published factory calibrations, keyed by a substring of the sequence name
TUM_INTRINSICS = {
    "freiburg1": (517.3, 516.5, 318.6, 255.3),
    "freiburg2": (520.9, 521.0, 325.1, 249.7),
    "freiburg3": (535.4, 539.2, 320.1, 247.6),
}


class LazyFrames(Sequence):
    """Frames decoded on access; nothing is cached."""

    def __init__(self, loaders: list[Callable[[], RgbdFrame]]):
        self._loaders = loaders

    def __len__(self) -> int:
        return len(self._loaders)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return LazyFrames(self._loaders[i])
        return self._loaders[i]()


class SequenceSource(Sequence):
    def __init__(self, frames: Sequence[RgbdFrame], ground_truth: Optional[list[CameraPose]] = None,
                 name: str = "", timestamps: Optional[list[float]] = None):
        if ground_truth is not None and len(ground_truth) != len(frames):
            raise ValueError(f"{len(ground_truth)} ground-truth poses for {len(frames)} frames")
        self.frames = frames
        self.ground_truth = ground_truth
        self.name = name
        self._timestamps = timestamps

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def timestamps(self) -> list[float]:
        if self._timestamps is None:
            self._timestamps = [f.timestamp for f in self.frames]
        return self._timestamps

    def limit(self, n: int) -> "SequenceSource":
        gt = self.ground_truth[:n] if self.ground_truth is not None else None
        ts = self._timestamps[:n] if self._timestamps is not None else None
        return SequenceSource(self.frames[:n], gt, self.name, ts)


def associate(a: Sequence[float], b: Sequence[float], window: float = ASSOCIATION_WINDOW) -> list[tuple[int, int]]:
    """Greedy one-to-one timestamp matching by increasing time difference.

    Returns index pairs ``(i, j)`` sorted by ``i``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cands = []
    for i, ta in enumerate(a):
        lo, hi = np.searchsorted(b, [ta - window, ta + window], side="left")
        for j in range(max(0, lo - 1), min(len(b), hi + 1)):
            diff = abs(ta - b[j])
            if diff <= window:
                cands.append((diff, i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    return sorted(pairs)


def nearest(a: Sequence[float], b: Sequence[float], window: float = ASSOCIATION_WINDOW) -> list[Optional[int]]:
    """For each ``a`` timestamp, the nearest ``b`` index within ``window`` (or None)."""
    b = np.asarray(b, dtype=np.float64)
    out: list[Optional[int]] = []
    for ta in a:
        j = int(np.searchsorted(b, ta))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(b) and abs(b[k] - ta) <= window and (best is None or abs(b[k] - ta) < abs(b[best] - ta)):
                best = k
        out.append(best)
    return out


def decode_depth(raw: np.ndarray, scale: float, max_depth: float) -> tuple[np.ndarray, np.ndarray]:
    depth = raw / scale
    valid = (raw > 0) & (depth <= max_depth)
    return np.where(valid, depth, 0.0), valid


def _make_frame(color_path: Path, depth_path: Path, intr: CameraIntrinsics, ts: float,
                scale: float, max_depth: float, stride: int) -> RgbdFrame:
    color = read_color_png(color_path)[::stride, ::stride]
    depth, valid = decode_depth(read_depth_raw(depth_path)[::stride, ::stride], scale, max_depth)
    return RgbdFrame(color, depth, valid, intr, ts)


def _tum_intrinsics(root: Path, width: int, height: int) -> CameraIntrinsics:
    path = root / "intrinsics.json"
    if path.exists():
        return CameraIntrinsics.from_dict(json.loads(path.read_text()))
    for key, (fx, fy, cx, cy) in TUM_INTRINSICS.items():
        if key in root.name:
            return CameraIntrinsics(fx, fy, cx, cy, width, height)
    log.warning("%s: no intrinsics.json and unknown sequence family; assuming freiburg1", root)
    fx, fy, cx, cy = TUM_INTRINSICS["freiburg1"]
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


def _strided(intr: CameraIntrinsics, stride: int) -> CameraIntrinsics:
    if stride == 1:
        return intr
    return CameraIntrinsics(intr.fx / stride, intr.fy / stride, intr.cx / stride, intr.cy / stride,
                            (intr.width + stride - 1) // stride, (intr.height + stride - 1) // stride)


def load_tum(dir_path, max_depth: float = 10.0, strict: bool = True, stride: int = 1) -> SequenceSource:
    """Load a TUM-RGBD sequence directory.

    rgb/depth are associated one-to-one within 20 ms; when ``groundtruth.txt``
    exists, frames without a ground-truth pose within 20 ms are dropped.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise FormatError(f"not a directory: {root}")

    def index(name):
        rows = parse_tum_rows(root / name, 2, strict)
        out = []
        for parts in rows:
            try:
                out.append((float(parts[0]), parts[1]))
            except ValueError as e:
                if strict:
                    raise FormatError(f"{root / name}: bad timestamp {parts[0]!r}") from e
        out.sort()
        return out

    rgb = index("rgb.txt")
    depth = index("depth.txt")
    pairs = associate([t for t, _ in rgb], [t for t, _ in depth])
    gt_poses = None
    if (root / "groundtruth.txt").exists():
        gt_ts, gt_all = load_trajectory_tum(root / "groundtruth.txt", strict)
        order = np.argsort(gt_ts)
        gt_ts = [gt_ts[i] for i in order]
        gt_all = [gt_all[i] for i in order]
        match = nearest([rgb[i][0] for i, _ in pairs], gt_ts)
        kept = [(p, m) for p, m in zip(pairs, match) if m is not None]
        pairs = [p for p, _ in kept]
        gt_poses = [gt_all[m] for _, m in kept]
    if not pairs:
        raise FormatError(f"{root}: no associated rgb/depth{'/groundtruth' if gt_poses is not None else ''} frames")

    first = read_color_png(root / rgb[pairs[0][0]][1])
    intr = _strided(_tum_intrinsics(root, first.shape[1], first.shape[0]), stride)
    loaders = []
    timestamps = []
    for i, j in pairs:
        ts = rgb[i][0]
        timestamps.append(ts)
        loaders.append(lambda c=root / rgb[i][1], d=root / depth[j][1], ts=ts:
                       _make_frame(c, d, intr, ts, TUM_DEPTH_SCALE, max_depth, stride))
    return SequenceSource(LazyFrames(loaders), gt_poses, root.name, timestamps)


def load_simple(dir_path, max_depth: float = 100.0, strict: bool = True, stride: int = 1) -> SequenceSource:
    """Load ``color/%06d.png``, ``depth/%06d.png``, ``intrinsics.json`` (+ optional ``groundtruth.txt``)."""
    root = Path(dir_path)
    meta_path = root / "intrinsics.json"
    if not meta_path.exists():
        raise FormatError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        intr = _strided(CameraIntrinsics.from_dict(meta), stride)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{meta_path}: invalid intrinsics: {e}") from e
    scale = float(meta.get("depth_scale", TUM_DEPTH_SCALE))
    fps = float(meta.get("fps", 30.0))
    colors = sorted((root / "color").glob("*.png"))
    if not colors:
        raise FormatError(f"{root / 'color'}: no frames")
    for c in colors:
        if not (root / "depth" / c.name).exists():
            raise FormatError(f"missing depth image for {c.name}")
    gt = None
    timestamps = [k / fps for k in range(len(colors))]
    if (root / "groundtruth.txt").exists():
        ts, gt = load_trajectory_tum(root / "groundtruth.txt", strict)
        if len(gt) != len(colors):
            raise FormatError(f"groundtruth.txt has {len(gt)} poses for {len(colors)} frames")
        timestamps = ts
    loaders = [lambda c=c, ts=ts: _make_frame(c, root / "depth" / c.name, intr, ts, scale, max_depth, stride)
               for c, ts in zip(colors, timestamps)]
    return SequenceSource(LazyFrames(loaders), gt, root.name, list(timestamps))


def write_simple(source: SequenceSource, out_dir, depth_scale: float = TUM_DEPTH_SCALE, fps: float = 30.0) -> None:
    out = Path(out_dir)
    (out / "color").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    intr = None
    for k, fr in enumerate(source):
        intr = fr.intrinsics
        write_color_png(out / "color" / f"{k:06d}.png", fr.color)
        write_depth_png(out / "depth" / f"{k:06d}.png", np.where(fr.depth_valid, fr.depth, 0.0), depth_scale)
    meta = dict(intr.to_dict(), depth_scale=depth_scale, fps=fps)
    write_text_atomic(out / "intrinsics.json", json.dumps(meta, indent=2) + "\n")
    if source.ground_truth is not None:
        export_trajectory_tum(source.ground_truth, source.timestamps, out / "groundtruth.txt")
