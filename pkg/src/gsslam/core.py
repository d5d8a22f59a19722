"""Domain types, configuration and small geometry helpers.

Quaternions are stored as ``(w, x, y, z)`` and use the Hamilton convention.
Poses are world-to-camera: ``x_cam = R @ x_world + t``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration entries."""


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = quat_normalize(q)
    return q if q[0] >= 0 else -q


def axis_angle_to_quat(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle in radians between two unit quaternions."""
    d = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * float(np.arccos(min(1.0, d)))


# ---------------------------------------------------------------------------
# map representation


@dataclass(frozen=True)
class Gaussian:
    center: np.ndarray
    color: np.ndarray
    radius: float
    opacity: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must lie in [0, 1], got {self.opacity}")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError(f"color channels must lie in [0, 1], got {self.color}")


def _frozen(a, shape_tail: tuple[int, ...]) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr = arr.reshape((-1,) + shape_tail)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianMap:
    """Struct-of-arrays collection of isotropic Gaussians.

    Arrays are read-only; edits produce a new map via :meth:`replace`,
    :meth:`append` or :meth:`select`. Structural edits bump ``generation``.
    """

    centers: np.ndarray
    colors: np.ndarray
    radii: np.ndarray
    opacities: np.ndarray
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen(self.centers, (3,)))
        object.__setattr__(self, "colors", _frozen(self.colors, (3,)))
        object.__setattr__(self, "radii", _frozen(self.radii, ()))
        object.__setattr__(self, "opacities", _frozen(self.opacities, ()))
        n = len(self.centers)
        if not (len(self.colors) == len(self.radii) == len(self.opacities) == n):
            raise ValueError("GaussianMap arrays must have matching lengths")
        if n:
            if not np.all(self.radii > 0):
                raise ValueError("all radii must be positive")
            if np.any(self.opacities < 0) or np.any(self.opacities > 1):
                raise ValueError("opacities must lie in [0, 1]")
            if np.any(self.colors < 0) or np.any(self.colors > 1):
                raise ValueError("colors must lie in [0, 1]")

    @classmethod
    def empty(cls) -> "GaussianMap":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian], generation: int = 0) -> "GaussianMap":
        gs = list(gaussians)
        if not gs:
            return cls.empty()
        return cls(
            np.stack([g.center for g in gs]),
            np.stack([g.color for g in gs]),
            np.array([g.radius for g in gs]),
            np.array([g.opacity for g in gs]),
            generation=generation,
        )

    def __len__(self) -> int:
        return len(self.centers)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.centers[i], self.colors[i], float(self.radii[i]), float(self.opacities[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def gaussians(self) -> list[Gaussian]:
        return list(self)

    def replace(self, **arrays) -> "GaussianMap":
        """Same structure, new parameter values (generation unchanged)."""
        return dataclasses.replace(self, **arrays)

    def append(self, other: "GaussianMap") -> "GaussianMap":
        return GaussianMap(
            np.concatenate([self.centers, other.centers]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.radii, other.radii]),
            np.concatenate([self.opacities, other.opacities]),
            generation=self.generation + 1,
        )

    def select(self, keep: np.ndarray) -> "GaussianMap":
        keep = np.asarray(keep)
        return GaussianMap(
            self.centers[keep], self.colors[keep], self.radii[keep], self.opacities[keep],
            generation=self.generation + 1,
        )

    def allclose(self, other: "GaussianMap", atol: float = 0.0) -> bool:
        return len(self) == len(other) and all(
            np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in [(self.centers, other.centers), (self.colors, other.colors),
                         (self.radii, other.radii), (self.opacities, other.opacities)]
        )


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def focal(self) -> float:
        """Scalar focal length used for radius projection."""
        return 0.5 * (self.fx + self.fy)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by ``factor`` (e.g. 0.5)."""
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
            max(1, int(round(self.width * factor))), max(1, int(round(self.height * factor))),
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform as unit quaternion + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        t = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "CameraPose":
        T = np.asarray(T, dtype=np.float64)
        return cls(rotmat_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_center(cls, rotation: np.ndarray, center: np.ndarray) -> "CameraPose":
        """Pose with world-to-camera ``rotation`` whose optical center is ``center``."""
        R = quat_to_rotmat(quat_normalize(rotation))
        return cls(rotation, -R @ np.asarray(center, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-Rᵀ t``."""
        return -self.R.T @ self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "CameraPose":
        return pose_inverse(self)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return CameraPose(q, t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to an ``(..., 3)`` array of points."""
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.translation

    def almost_equal(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return (np.allclose(self.R, other.R, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __repr__(self) -> str:
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"CameraPose(rotation={q}, translation={t})"


def world_to_camera(pose: CameraPose, point: np.ndarray) -> np.ndarray:
    return pose.R @ np.asarray(point, dtype=np.float64) + pose.translation


def pose_inverse(pose: CameraPose) -> CameraPose:
    q_inv = quat_conjugate(pose.rotation)
    return CameraPose(q_inv, -quat_to_rotmat(q_inv) @ pose.translation)


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    color: np.ndarray
    depth: np.ndarray
    depth_valid: np.ndarray
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.depth_valid, dtype=bool)
        h, w = self.intrinsics.shape
        if color.shape != (h, w, 3) or depth.shape != (h, w) or valid.shape != (h, w):
            raise ValueError(
                f"frame buffers {color.shape}/{depth.shape}/{valid.shape} "
                f"do not match intrinsics {h}x{w}")
        if np.any(depth[valid] <= 0) or not np.all(np.isfinite(depth[valid])):
            raise ValueError("depth must be positive and finite wherever depth_valid is set")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", np.where(valid, depth, 0.0))
        object.__setattr__(self, "depth_valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.shape


# ---------------------------------------------------------------------------
# configuration


@dataclass
class LearningRates:
    pose_translation: float = 2e-3
    pose_rotation: float = 2e-3
    center: float = 1e-3
    color: float = 1e-2
    opacity_logit: float = 1e-1
    log_radius: float = 1e-2


@dataclass
class SlamConfig:
    tracking_iters: int = 40
    mapping_iters: int = 60
    keyframe_every: int = 5
    window_size: int = 10
    sil_thresh_tracking: float = 0.99
    sil_thresh_densify: float = 0.5
    color_weight: float = 0.5
    mde_factor: float = 50.0
    ssim_weight: float = 0.2
    prune_opacity_min: float = 0.005
    prune_radius_max_px: float = 60.0
    initial_opacity: float = 0.5
    # tracking lr is annealed geometrically down to this fraction over the iterations
    tracking_lr_final_fraction: float = 0.3
    low_overlap_fraction: float = 0.005
    mde_min_pixels: int = 100
    overlap_stride: int = 8
    # ablation switches
    use_silhouette_mask: bool = True
    use_velocity_propagation: bool = True
    tracking_use_color: bool = True
    tracking_use_depth: bool = True
    mapping_use_color: bool = True
    mapping_use_depth: bool = True
    learning_rates: LearningRates = field(default_factory=LearningRates)

    def __post_init__(self):
        if isinstance(self.learning_rates, dict):
            self.learning_rates = _dataclass_from_dict(LearningRates, self.learning_rates, "learning_rates")
        self.validate()

    def validate(self) -> None:
        for name in ("tracking_iters", "mapping_iters", "keyframe_every", "overlap_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.window_size < 2:
            raise ConfigError("window_size must be >= 2 (current frame + latest keyframe)")
        for name in ("sil_thresh_tracking", "sil_thresh_densify", "prune_opacity_min",
                     "initial_opacity", "low_overlap_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.tracking_lr_final_fraction <= 1.0:
            raise ConfigError("tracking_lr_final_fraction must lie in (0, 1]")
        for name in ("color_weight", "mde_factor", "ssim_weight", "prune_radius_max_px"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for f in dataclasses.fields(LearningRates):
            if getattr(self.learning_rates, f.name) < 0:
                raise ConfigError(f"learning_rates.{f.name} must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SlamConfig":
        return _dataclass_from_dict(cls, d, "")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "SlamConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SlamConfig":
        return cls.from_json(Path(path).read_text())


def _dataclass_from_dict(cls, d: dict[str, Any], prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        where = f" in {prefix}" if prefix else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = getattr(cls(), name) if name != "learning_rates" else None
        if name == "learning_rates":
            if not isinstance(value, dict):
                raise ConfigError("learning_rates must be an object")
            kwargs[name] = _dataclass_from_dict(LearningRates, value, "learning_rates")
            continue
        kwargs[name] = _coerce(value, type(default), f"{prefix + '.' if prefix else ''}{name}")
    return cls(**kwargs)


def _coerce(value, typ, name):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    return value
