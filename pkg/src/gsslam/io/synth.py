"""Deterministic synthetic scenes rendered with the same forward model the SLAM uses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import CameraIntrinsics, CameraPose, GaussianMap, RgbdFrame, axis_angle_to_quat
from ..renderer import render
from .datasets import SequenceSource


class SynthError(RuntimeError):
    pass


DEFAULT_INTRINSICS = CameraIntrinsics(fx=50.0, fy=50.0, cx=31.5, cy=23.5, width=64, height=48)


@dataclass(frozen=True)
class Motion:
    translation_step: float = 0.01  # camera-center displacement per frame, meters
    rotation_step: float = 1.0  # degrees per frame


@dataclass(eq=False)
class SyntheticScene:
    gaussians: GaussianMap
    trajectory: list[CameraPose]
    intrinsics: CameraIntrinsics
    seed: int
    timestamps: list[float] = field(default_factory=list)


def _visible_fraction(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics) -> float:
    X = pose.transform(gmap.centers)
    z = X[:, 2]
    ok = z > 0.1
    u = intr.fx * X[ok, 0] / z[ok] + intr.cx
    v = intr.fy * X[ok, 1] / z[ok] + intr.cy
    inside = (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    return np.count_nonzero(inside) / len(gmap)


def synth_generate(n_gaussians: int = 300, n_frames: int = 20, motion: Motion = Motion(), seed: int = 7,
                   intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS, radius_range=(0.1, 0.25),
                   max_retries: int = 50, fps: float = 30.0) -> SyntheticScene:
    """Random Gaussians in a 2 m cube in front of a constant-velocity camera path.

    Translation direction and rotation axis are drawn from the seed; the path is
    re-drawn until every frame sees at least half of the Gaussian centers.
    """
    if n_gaussians < 1 or n_frames < 2:
        raise SynthError("need n_gaussians >= 1 and n_frames >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.uniform([-1.0, -1.0, 1.5], [1.0, 1.0, 3.5], size=(n_gaussians, 3))
    colors = rng.uniform(0.0, 1.0, size=(n_gaussians, 3))
    radii = rng.uniform(*radius_range, size=n_gaussians)
    opacities = rng.uniform(0.7, 0.999, size=n_gaussians)
    gmap = GaussianMap(centers, colors, radii, opacities)

    angle = np.deg2rad(motion.rotation_step)
    for _ in range(max_retries):
        direction = rng.normal(size=3)
        direction[2] *= 0.3
        direction /= np.linalg.norm(direction)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        traj = [
            CameraPose.from_center(axis_angle_to_quat(axis, k * angle), k * motion.translation_step * direction)
            for k in range(n_frames)
        ]
        if all(_visible_fraction(gmap, p, intrinsics) >= 0.5 for p in traj):
            return SyntheticScene(gmap, traj, intrinsics, seed, [k / fps for k in range(n_frames)])
    raise SynthError(f"no trajectory kept >= 50% of gaussians visible after {max_retries} tries")


def render_frame(scene: SyntheticScene, index: int) -> RgbdFrame:
    out = render(scene.gaussians, scene.trajectory[index], scene.intrinsics)
    valid = out.silhouette >= 0.5
    ts = scene.timestamps[index] if scene.timestamps else float(index)
    return RgbdFrame(np.clip(out.color, 0.0, 1.0), np.where(valid, out.depth, 0.0), valid,
                     scene.intrinsics, ts)


def synth_render_sequence(scene: SyntheticScene) -> SequenceSource:
    frames = [render_frame(scene, i) for i in range(len(scene.trajectory))]
    return SequenceSource(frames, list(scene.trajectory), f"synth-seed{scene.seed}")


def add_depth_holes(source: SequenceSource, fraction: float = 0.2, hole_size: int = 6,
                    seed: int = 0) -> SequenceSource:
    """Knock out square depth patches until about ``fraction`` of pixels are invalid."""
    rng = np.random.default_rng(seed)
    frames = []
    for fr in source:
        h, w = fr.shape
        valid = fr.depth_valid.copy()
        target = int(fraction * h * w)
        removed = np.zeros((h, w), dtype=bool)
        while np.count_nonzero(removed) < target:
            y = rng.integers(0, max(1, h - hole_size + 1))
            x = rng.integers(0, max(1, w - hole_size + 1))
            removed[y:y + hole_size, x:x + hole_size] = True
        valid &= ~removed
        frames.append(RgbdFrame(fr.color, np.where(valid, fr.depth, 0.0), valid, fr.intrinsics, fr.timestamp))
    return SequenceSource(frames, source.ground_truth, source.name + "-holes")
