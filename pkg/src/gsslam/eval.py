"""Trajectory and rendering metrics: ATE RMSE, PSNR, SSIM, depth L1."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from .core import CameraPose

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class AteReport:
    rmse: float
    per_frame_errors: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def to_json(self) -> dict:
        return {"rmse_m": float(self.rmse), "n_poses": int(len(self.per_frame_errors))}


@dataclass
class RenderReport:
    psnr: float
    ssim: float
    depth_l1: float
    pixel_count_evaluated: int

    def to_json(self) -> dict:
        return {"psnr_db": json_float(self.psnr), "ssim": float(self.ssim),
                "depth_l1_cm": float(self.depth_l1), "n_pixels": int(self.pixel_count_evaluated)}


def json_float(x: float):
    """JSON-safe float: infinities become the strings ``"+inf"`` / ``"-inf"``."""
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return float(x)


# ---------------------------------------------------------------------------
# trajectory


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Least-squares ``(s, R, t)`` with ``dst ≈ s R src + t``.

    Falls back to a translation-only solution when either point set has no spread.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = np.mean(np.sum(xs ** 2, axis=1))
    if var_s < 1e-20 or np.mean(np.sum(xd ** 2, axis=1)) < 1e-20:
        return 1.0, np.eye(3), mu_d - mu_s
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def trajectory_centers(traj: Sequence[CameraPose]) -> np.ndarray:
    return np.array([p.center for p in traj])


def ate_rmse(estimated: Sequence[CameraPose], ground_truth: Sequence[CameraPose],
             alignment: str = "se3") -> AteReport:
    """ATE over camera centers after aligning ``estimated`` onto ``ground_truth``.

    ``alignment`` is ``"se3"`` (default), ``"sim3"`` (diagnostic) or ``"none"``.
    """
    if len(estimated) != len(ground_truth):
        raise ValueError(f"trajectory lengths differ: {len(estimated)} vs {len(ground_truth)}")
    if len(estimated) < 2:
        raise ValueError("need at least two poses")
    est = trajectory_centers(estimated)
    gt = trajectory_centers(ground_truth)
    if alignment == "none":
        s, R, t = 1.0, np.eye(3), np.zeros(3)
    elif alignment in ("se3", "sim3"):
        s, R, t = umeyama_alignment(est, gt, with_scale=alignment == "sim3")
    else:
        raise ValueError(f"unknown alignment {alignment!r}")
    aligned = s * est @ R.T + t
    errs = np.linalg.norm(aligned - gt, axis=1)
    return AteReport(float(np.sqrt(np.mean(errs ** 2))), errs, R, t, s)


def path_length(traj: Sequence[CameraPose]) -> float:
    c = trajectory_centers(traj)
    return float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))


# ---------------------------------------------------------------------------
# images


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _ssim_terms(x, y, win):
    filt = lambda a: convolve2d(a, win, mode="valid")  # noqa: E731  (symmetric window)
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return mx, my, a1, a2, b1, b2


def ssim(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Mean SSIM over valid-window positions, averaged over channels."""
    return ssim_with_grad(img_a, img_b, need_grad=False)[0]


def ssim_with_grad(img_a: np.ndarray, img_b: np.ndarray, need_grad: bool = True):
    """SSIM and its gradient with respect to ``img_a``."""
    a = _as_channels(img_a)
    b = _as_channels(img_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    h, w, nc = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images of size {h}x{w} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()
    total = 0.0
    grad = np.zeros_like(a) if need_grad else None
    for ch in range(nc):
        x, y = a[..., ch], b[..., ch]
        mx, my, a1, a2, b1, b2 = _ssim_terms(x, y, win)
        smap = a1 * a2 / (b1 * b2)
        total += smap.mean()
        if need_grad:
            scale = 1.0 / (smap.size * nc)
            g_mx = smap * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2) * scale
            g_xy = smap * 2 / a2 * scale
            g_xx = -smap / b2 * scale
            adj = lambda m: convolve2d(m, win, mode="full")  # noqa: E731
            grad[..., ch] = adj(g_mx) + 2 * x * adj(g_xx) + y * adj(g_xy)
    value = total / nc
    if need_grad and np.asarray(img_a).ndim == 2:
        grad = grad[..., 0]
    return value, grad


def depth_l1(rendered: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> float:
    """Mean absolute depth error over valid pixels, in centimeters."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not (rendered.shape == gt.shape == valid.shape):
        raise ValueError("depth shapes do not match")
    if not valid.any():
        raise ValueError("no valid depth pixels")
    return 100.0 * float(np.mean(np.abs(rendered[valid] - gt[valid])))


def render_report(color, gt_color, depth, gt_depth, valid) -> RenderReport:
    return RenderReport(psnr(color, gt_color), ssim(color, gt_color),
                        depth_l1(depth, gt_depth, valid), int(np.count_nonzero(valid)))
