"""Analytic gradients of rendered images w.r.t. Gaussian parameters and camera pose.

The backward pass computes the gradient of the linear functional

    L = Σ_p dL_dC(p)·C(p) + dL_dD(p)·D(p) + dL_dS(p)·S(p)

so any loss is handled by first forming its image-space gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .core import CameraIntrinsics, CameraPose, GaussianMap, quat_normalize
from .renderer import RenderOutput, TILE, render


@dataclass
class MapGradients:
    d_center: np.ndarray
    d_color: np.ndarray
    d_radius: np.ndarray
    d_opacity: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "MapGradients":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros(n), np.zeros(n))

    def d_opacity_logit(self, gmap: GaussianMap) -> np.ndarray:
        """Gradient w.r.t. ``logit(opacity)``."""
        o = gmap.opacities
        return self.d_opacity * o * (1.0 - o)

    def d_log_radius(self, gmap: GaussianMap) -> np.ndarray:
        """Gradient w.r.t. ``log(radius)``."""
        return self.d_radius * gmap.radii

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_center.ravel(), self.d_color.ravel(),
                               self.d_radius.ravel(), self.d_opacity.ravel()])


@dataclass
class PoseGradient:
    d_quaternion: np.ndarray
    d_translation: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_quaternion, self.d_translation])


def rotation_jacobian(q: np.ndarray) -> np.ndarray:
    """``∂R/∂q`` as a (3, 3, 4) array for the quadratic-form rotation matrix."""
    w, x, y, z = q
    J = np.zeros((3, 3, 4))
    J[0, 0] = [0, 0, -4 * y, -4 * z]
    J[0, 1] = [-2 * z, 2 * y, 2 * x, -2 * w]
    J[0, 2] = [2 * y, 2 * z, 2 * w, 2 * x]
    J[1, 0] = [2 * z, 2 * y, 2 * x, 2 * w]
    J[1, 1] = [0, -4 * x, 0, -4 * z]
    J[1, 2] = [-2 * x, -2 * w, 2 * z, 2 * y]
    J[2, 0] = [-2 * y, 2 * z, -2 * w, 2 * x]
    J[2, 1] = [2 * x, 2 * w, 2 * z, 2 * y]
    J[2, 2] = [0, -4 * x, -4 * y, 0]
    return J


def backward(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics, render_out: RenderOutput,
             dL_dC: np.ndarray, dL_dD: np.ndarray, dL_dS: np.ndarray,
             threads: int = 1) -> tuple[MapGradients, PoseGradient]:
    h, w = intr.shape
    if dL_dC.shape != (h, w, 3) or dL_dD.shape != (h, w) or dL_dS.shape != (h, w):
        raise ValueError("upstream gradient shapes do not match the render")
    if render_out.color.shape != (h, w, 3):
        raise ValueError("render output does not match intrinsics")

    n = len(gmap)
    grads = MapGradients.zeros(n)
    pose_grad = PoseGradient(np.zeros(4), np.zeros(3))
    pb = render_out.projected
    if len(pb) == 0:
        return grads, pose_grad

    raw = _kernels.backward(
        np.ascontiguousarray(pb.center2d[:, 0]), np.ascontiguousarray(pb.center2d[:, 1]),
        pb.radius2d, pb.depth, pb.opacity, np.ascontiguousarray(pb.color),
        render_out.tile_offsets, render_out.tile_ids, w, h, TILE,
        render_out.n_scanned, render_out.transmittance,
        np.ascontiguousarray(dL_dC, dtype=np.float64), np.ascontiguousarray(dL_dD, dtype=np.float64),
        np.ascontiguousarray(dL_dS, dtype=np.float64), threads=threads)

    d_col, d_depth, d_u, d_v, d_r2d, d_opac = raw[:, :3], raw[:, 3], raw[:, 4], raw[:, 5], raw[:, 6], raw[:, 7]
    X = pb.cam_points
    d = X[:, 2]
    src = pb.source_index
    radii = gmap.radii[src]
    F = intr.focal

    gX = np.empty_like(X)
    gX[:, 0] = d_u * intr.fx / d
    gX[:, 1] = d_v * intr.fy / d
    gX[:, 2] = (d_depth
                - d_u * intr.fx * X[:, 0] / d ** 2
                - d_v * intr.fy * X[:, 1] / d ** 2
                - d_r2d * F * radii / d ** 2)

    R = pose.R
    grads.d_center[src] = gX @ R
    grads.d_color[src] = d_col
    grads.d_radius[src] = d_r2d * F / d
    grads.d_opacity[src] = d_opac

    # pose: X = R μ + t, R built from the normalized quaternion
    dR = gX.T @ gmap.centers[src]
    dq_hat = np.einsum("ij,ijk->k", dR, rotation_jacobian(pose.rotation))
    q = pose.rotation
    pose_grad.d_quaternion = dq_hat - q * np.dot(q, dq_hat)
    pose_grad.d_translation = gX.sum(axis=0)
    return grads, pose_grad


# ---------------------------------------------------------------------------
# finite-difference oracle


def _perturbed_map(gmap: GaussianMap, field: str, index, delta: float) -> GaussianMap:
    arr = np.array(getattr(gmap, field))
    arr[index] += delta
    # bypass range validation: the oracle may step slightly outside [0, 1]
    out = object.__new__(GaussianMap)
    for name in ("centers", "colors", "radii", "opacities", "generation"):
        object.__setattr__(out, name, getattr(gmap, name))
    object.__setattr__(out, field, arr)
    return out


def finite_diff_grad(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics,
                     loss_fn: Callable[[RenderOutput], float], step: float = 1e-5,
                     include_map: bool = True) -> tuple[MapGradients, PoseGradient]:
    """Central differences of ``loss_fn(render(...))`` for every scalar parameter.

    Quaternion components are perturbed raw and renormalized before rendering.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    def loss_map(m):
        return float(loss_fn(render(m, pose, intr)))

    grads = MapGradients.zeros(len(gmap))
    if include_map:
        for field, target in (("centers", grads.d_center), ("colors", grads.d_color),
                              ("radii", grads.d_radius), ("opacities", grads.d_opacity)):
            for index in np.ndindex(target.shape):
                lp = loss_map(_perturbed_map(gmap, field, index, step))
                lm = loss_map(_perturbed_map(gmap, field, index, -step))
                target[index] = (lp - lm) / (2 * step)

    def loss_pose(q, t):
        return float(loss_fn(render(gmap, CameraPose(quat_normalize(q), t), intr)))

    dq = np.zeros(4)
    dt = np.zeros(3)
    for k in range(4):
        e = np.zeros(4)
        e[k] = step
        dq[k] = (loss_pose(pose.rotation + e, pose.translation)
                 - loss_pose(pose.rotation - e, pose.translation)) / (2 * step)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        dt[k] = (loss_pose(pose.rotation, pose.translation + e)
                 - loss_pose(pose.rotation, pose.translation - e)) / (2 * step)
    return grads, PoseGradient(dq, dt)


def smooth_pixel_mask(render_out: RenderOutput, margin: float = 0.02) -> np.ndarray:
    """Pixels where the render is locally smooth in every parameter.

    Excludes pixels within ``margin`` (relative) of a Gaussian's cutoff radius,
    of the weight clamp, or of the early-termination threshold, where small
    perturbations flip a discrete branch. Brute force; meant for gradient checks.
    """
    from ._kernels import CUTOFF_SIGMA, MAX_WEIGHT, T_MIN

    h, w = render_out.intrinsics.shape
    pb = render_out.projected
    ys, xs = np.mgrid[0:h, 0:w]
    ok = np.ones((h, w), dtype=bool)
    T = np.ones((h, w))
    for i in range(len(pb)):
        dist = np.hypot(xs - pb.center2d[i, 0], ys - pb.center2d[i, 1]) / pb.radius2d[i]
        ok &= np.abs(dist - CUTOFF_SIGMA) > margin * CUTOFF_SIGMA
        raw = pb.opacity[i] * np.exp(-0.5 * dist ** 2)
        ok &= np.abs(raw - MAX_WEIGHT) > margin * (1 - MAX_WEIGHT)
        f = np.where(dist <= CUTOFF_SIGMA, np.minimum(raw, MAX_WEIGHT), 0.0)
        T = T * (1 - f)
        ok &= np.abs(np.log(np.maximum(T, 1e-300)) - np.log(T_MIN)) > margin
    return ok


def linear_loss(dL_dC: np.ndarray, dL_dD: np.ndarray, dL_dS: np.ndarray) -> Callable[[RenderOutput], float]:
    """The functional whose gradient :func:`backward` computes for these upstream weights."""

    def loss(out: RenderOutput) -> float:
        return float(np.sum(dL_dC * out.color) + np.sum(dL_dD * out.depth) + np.sum(dL_dS * out.silhouette))

    return loss
