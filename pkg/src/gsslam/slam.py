"""Per-frame tracking, densification and map updating over a Gaussian map."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .core import (CameraIntrinsics, CameraPose, GaussianMap, RgbdFrame, SlamConfig,
                   quat_conjugate, quat_multiply, quat_normalize)
from .diff import backward
from .eval import ssim_with_grad
from .optim import Adam
from .renderer import RenderOutput, project_batch, render

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


@dataclass
class Keyframe:
    frame: RgbdFrame
    pose: CameraPose
    frame_index: int


@dataclass
class DensifyMask:
    mask: np.ndarray
    added_count: int


@dataclass
class TrackResult:
    pose: CameraPose
    losses: list[float]
    low_overlap: bool = False
    best_iter: int = 0


@dataclass
class FrameStatus:
    frame_index: int
    tracking_losses: list[float]
    mapping_losses: list[float]
    gaussian_count: int
    added_count: int
    low_overlap: bool
    seconds: float

    def to_json(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "tracking_losses": [float(x) for x in self.tracking_losses],
            "mapping_losses": [float(x) for x in self.mapping_losses],
            "gaussian_count": self.gaussian_count,
            "added_count": self.added_count,
            "low_overlap": self.low_overlap,
            "seconds": round(self.seconds, 4),
        }


@dataclass
class SlamState:
    map: GaussianMap
    keyframes: list[Keyframe]
    trajectory: list[CameraPose]
    config: SlamConfig
    optimizer_state: Optional[Adam] = None
    optimizer_generation: int = -1
    status: list[FrameStatus] = field(default_factory=list)
    threads: int = 1

    @property
    def prev_poses(self) -> list[CameraPose]:
        return self.trajectory[-2:]


# ---------------------------------------------------------------------------
# geometry helpers


def unproject(frame: RgbdFrame, pose: CameraPose, mask: Optional[np.ndarray] = None):
    """World points for valid-depth pixels (optionally restricted by ``mask``).

    Returns ``(points, pixel_rows, pixel_cols)``.
    """
    sel = frame.depth_valid if mask is None else (frame.depth_valid & mask)
    ys, xs = np.nonzero(sel)
    k = frame.intrinsics
    d = frame.depth[ys, xs]
    cam = np.stack([(xs - k.cx) * d / k.fx, (ys - k.cy) * d / k.fy, d], axis=1)
    world = (cam - pose.translation) @ pose.R
    return world, ys, xs


def gaussians_from_pixels(frame: RgbdFrame, pose: CameraPose, mask: Optional[np.ndarray],
                          opacity: float) -> GaussianMap:
    """One Gaussian per selected valid-depth pixel, with a one-pixel projected radius."""
    pts, ys, xs = unproject(frame, pose, mask)
    d = frame.depth[ys, xs]
    return GaussianMap(
        centers=pts,
        colors=np.clip(frame.color[ys, xs], 0.0, 1.0),
        radii=d / frame.intrinsics.focal,
        opacities=np.full(len(d), opacity),
    )


# ---------------------------------------------------------------------------
# pipeline steps


def initialize(first: RgbdFrame, config: SlamConfig, threads: int = 1) -> SlamState:
    if not first.depth_valid.any():
        raise InitializationError("first frame has no valid depth pixels")
    pose = CameraPose.identity()
    gmap = gaussians_from_pixels(first, pose, None, config.initial_opacity)
    return SlamState(map=gmap, keyframes=[Keyframe(first, pose, 0)], trajectory=[pose],
                     config=config, threads=threads)


def propagate_pose(state: SlamState) -> CameraPose:
    """Constant-velocity prediction in camera-center + quaternion space."""
    prev = state.prev_poses
    if not prev:
        raise ValueError("no previous pose to propagate")
    if len(prev) == 1:
        return prev[-1]
    p0, p1 = prev
    dq = quat_multiply(p1.rotation, quat_conjugate(p0.rotation))
    q = quat_normalize(quat_multiply(dq, p1.rotation))
    center = 2.0 * p1.center - p0.center
    return CameraPose.from_center(q, center)


def tracking_loss(out: RenderOutput, frame: RgbdFrame, config: SlamConfig):
    """Silhouette-gated L1 depth + weighted L1 color; returns ``(loss, dL_dC, dL_dD, mask)``."""
    if config.use_silhouette_mask:
        mask = out.silhouette > config.sil_thresh_tracking
    else:
        mask = np.ones(frame.shape, dtype=bool)
    loss = 0.0
    g_d = np.zeros(frame.shape)
    g_c = np.zeros(frame.shape + (3,))
    if config.tracking_use_depth:
        dm = mask & frame.depth_valid
        diff = out.depth - frame.depth
        loss += float(np.abs(diff[dm]).sum())
        g_d = np.where(dm, np.sign(diff), 0.0)
    if config.tracking_use_color:
        diff = out.color - frame.color
        loss += config.color_weight * float(np.abs(diff[mask]).sum())
        g_c = config.color_weight * np.sign(diff) * mask[..., None]
    return loss, g_c, g_d, mask


def track(state: SlamState, frame: RgbdFrame) -> TrackResult:
    """Optimize the pose of ``frame`` against the frozen map; returns the best iterate."""
    cfg = state.config
    if len(state.map) == 0:
        raise ValueError("cannot track against an empty map")
    start = propagate_pose(state) if cfg.use_velocity_propagation else state.trajectory[-1]
    intr = frame.intrinsics
    lrs = cfg.learning_rates
    opt = Adam({"q": lrs.pose_rotation, "t": lrs.pose_translation})
    params = {"q": np.array(start.rotation), "t": np.array(start.translation)}
    zeros_s = np.zeros(frame.shape)

    best_pose, best_loss, best_iter = start, np.inf, 0
    losses = []
    n = cfg.tracking_iters
    for it in range(n + 1):
        pose = CameraPose(params["q"], params["t"])
        out = render(state.map, pose, intr, threads=state.threads)
        loss, g_c, g_d, mask = tracking_loss(out, frame, cfg)
        if it == 0 and mask.mean() < cfg.low_overlap_fraction:
            log.warning("low overlap: %.4f of pixels pass the silhouette gate", mask.mean())
            return TrackResult(start, [loss], low_overlap=True)
        losses.append(loss)
        if loss < best_loss:
            best_pose, best_loss, best_iter = pose, loss, it
        if it == n:
            break
        _, pg = backward(state.map, pose, intr, out, g_c, g_d, zeros_s, threads=state.threads)
        scale = cfg.tracking_lr_final_fraction ** (it / max(1, n - 1))
        params = opt.step(params, {"q": pg.d_quaternion, "t": pg.d_translation}, lr_scale=scale)
        params["q"] = quat_normalize(params["q"])
    return TrackResult(best_pose, losses, best_iter=best_iter)


def median_depth_error(out: RenderOutput, frame: RgbdFrame, config: SlamConfig) -> Optional[float]:
    sel = frame.depth_valid & (out.silhouette >= config.sil_thresh_densify)
    if np.count_nonzero(sel) < config.mde_min_pixels:
        return None
    return float(np.median(np.abs(out.depth[sel] - frame.depth[sel])))


def densification_mask(out: RenderOutput, frame: RgbdFrame, config: SlamConfig) -> np.ndarray:
    mask = out.silhouette < config.sil_thresh_densify
    mde = median_depth_error(out, frame, config)
    if mde is not None:
        err = np.abs(out.depth - frame.depth)
        mask |= frame.depth_valid & (frame.depth < out.depth) & (err > config.mde_factor * mde)
    return mask


def densify(state: SlamState, frame: RgbdFrame, tracked_pose: CameraPose) -> DensifyMask:
    out = render(state.map, tracked_pose, frame.intrinsics, threads=state.threads)
    mask = densification_mask(out, frame, state.config)
    new = gaussians_from_pixels(frame, tracked_pose, mask, state.config.initial_opacity)
    if len(new):
        state.map = state.map.append(new)
    return DensifyMask(mask, len(new))


def keyframe_overlap(points: np.ndarray, kf: Keyframe) -> int:
    """Number of world points projecting inside ``kf``'s image with positive depth."""
    if len(points) == 0:
        return 0
    k = kf.frame.intrinsics
    X = kf.pose.transform(points)
    z = X[:, 2]
    front = z > 0
    u = k.fx * X[front, 0] / z[front] + k.cx
    v = k.fy * X[front, 1] / z[front] + k.cy
    # pixel (x, y) covers [x - 0.5, x + 0.5): the full image area, not just the centre lattice
    inside = (u >= -0.5) & (u < k.width - 0.5) & (v >= -0.5) & (v < k.height - 0.5)
    return int(np.count_nonzero(inside))


def current_frame_points(frame: RgbdFrame, pose: CameraPose, stride: int) -> np.ndarray:
    sub = np.zeros(frame.shape, dtype=bool)
    sub[::stride, ::stride] = True
    return unproject(frame, pose, sub)[0]


def select_keyframes(state: SlamState, frame: RgbdFrame, tracked_pose: CameraPose) -> list[Keyframe]:
    """Current frame, the latest keyframe, and up to ``k - 2`` best-overlapping older ones."""
    if not state.keyframes:
        raise ValueError("no keyframes stored")
    current = Keyframe(frame, tracked_pose, len(state.trajectory))
    latest = state.keyframes[-1]
    pts = current_frame_points(frame, tracked_pose, state.config.overlap_stride)
    candidates = []
    for i, kf in enumerate(state.keyframes[:-1]):
        ov = keyframe_overlap(pts, kf)
        if ov > 0:
            candidates.append((ov, i, kf))
    # most overlap first, ties to the more recent keyframe
    candidates.sort(key=lambda c: (-c[0], -c[1]))
    chosen = [c[2] for c in candidates[: state.config.window_size - 2]]
    return [current, latest] + chosen


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


def mapping_loss(out: RenderOutput, frame: RgbdFrame, config: SlamConfig):
    """Per-pixel mean L1 depth + weighted L1 color, plus the SSIM term; no silhouette gate."""
    npx = float(frame.depth.size)
    loss = 0.0
    g_d = np.zeros(frame.shape)
    g_c = np.zeros(frame.shape + (3,))
    if config.mapping_use_depth:
        diff = out.depth - frame.depth
        loss += float(np.abs(diff[frame.depth_valid]).sum()) / npx
        g_d = np.where(frame.depth_valid, np.sign(diff), 0.0) / npx
    if config.mapping_use_color:
        diff = out.color - frame.color
        loss += config.color_weight * float(np.abs(diff).sum()) / npx
        g_c = config.color_weight * np.sign(diff) / npx
        if config.ssim_weight > 0 and min(frame.shape) >= 11:
            s, gs = ssim_with_grad(out.color, frame.color)
            loss += config.ssim_weight * (1.0 - s)
            g_c = g_c - config.ssim_weight * gs
    return loss, g_c, g_d


def prune_mask(gmap: GaussianMap, view_pose: CameraPose, intr: CameraIntrinsics, config: SlamConfig) -> np.ndarray:
    """Boolean keep-mask dropping near-transparent and on-screen oversized Gaussians."""
    keep = gmap.opacities >= config.prune_opacity_min
    pb = project_batch(gmap, view_pose, intr)
    big = pb.source_index[pb.radius2d > config.prune_radius_max_px]
    keep[big] = False
    return keep


def update_map(state: SlamState, selected: list[Keyframe],
               current_pose: Optional[CameraPose] = None) -> tuple[GaussianMap, list[float]]:
    """Optimize Gaussian parameters over ``selected`` (round-robin), then prune.

    Poses are held fixed; pruning uses ``current_pose`` (default: first selected keyframe).
    """
    if not selected:
        raise ValueError("no keyframes selected for mapping")
    cfg = state.config
    lrs = cfg.learning_rates
    gmap = state.map
    if state.optimizer_state is None or state.optimizer_generation != gmap.generation:
        state.optimizer_state = Adam({"centers": lrs.center, "colors": lrs.color,
                                      "log_radius": lrs.log_radius, "opacity_logit": lrs.opacity_logit})
        state.optimizer_generation = gmap.generation
    opt = state.optimizer_state
    params = {
        "centers": np.array(gmap.centers),
        "colors": np.array(gmap.colors),
        "log_radius": np.log(gmap.radii),
        "opacity_logit": _logit(gmap.opacities),
    }
    zeros_s = np.zeros(selected[0].frame.shape)
    losses = []
    for it in range(cfg.mapping_iters):
        kf = selected[it % len(selected)]
        out = render(gmap, kf.pose, kf.frame.intrinsics, threads=state.threads)
        loss, g_c, g_d = mapping_loss(out, kf.frame, cfg)
        losses.append(loss)
        mg, _ = backward(gmap, kf.pose, kf.frame.intrinsics, out, g_c, g_d, zeros_s, threads=state.threads)
        grads = {
            "centers": mg.d_center,
            "colors": mg.d_color,
            "log_radius": mg.d_log_radius(gmap),
            "opacity_logit": mg.d_opacity_logit(gmap),
        }
        params = opt.step(params, grads)
        params["colors"] = np.clip(params["colors"], 0.0, 1.0)
        gmap = gmap.replace(
            centers=params["centers"],
            colors=params["colors"],
            radii=np.exp(params["log_radius"]),
            opacities=_sigmoid(params["opacity_logit"]),
        )
    view = current_pose if current_pose is not None else selected[0].pose
    keep = prune_mask(gmap, view, selected[0].frame.intrinsics, cfg)
    if not keep.all():
        gmap = gmap.select(keep)
    return gmap, losses


def bootstrap(first: RgbdFrame, config: SlamConfig, threads: int = 1) -> SlamState:
    """Initialize from the first frame and run the first map update."""
    t0 = time.perf_counter()
    state = initialize(first, config, threads=threads)
    added = len(state.map)
    state.map, mlosses = update_map(state, [state.keyframes[0]], state.trajectory[0])
    state.status.append(FrameStatus(0, [], mlosses, len(state.map), added, False,
                                    time.perf_counter() - t0))
    return state


def process_frame(state: SlamState, frame: RgbdFrame) -> SlamState:
    t0 = time.perf_counter()
    index = len(state.trajectory)
    tr = track(state, frame)
    dm = densify(state, frame, tr.pose)
    selected = select_keyframes(state, frame, tr.pose)
    state.map, mlosses = update_map(state, selected, tr.pose)
    state.trajectory.append(tr.pose)
    if index % state.config.keyframe_every == 0:
        state.keyframes.append(Keyframe(frame, tr.pose, index))
    state.status.append(FrameStatus(index, tr.losses, mlosses, len(state.map), dm.added_count,
                                    tr.low_overlap, time.perf_counter() - t0))
    log.info("frame %d: %d gaussians (+%d), track loss %.4g -> %.4g",
             index, len(state.map), dm.added_count, tr.losses[0], min(tr.losses))
    return state


def run_slam(frames: Iterable[RgbdFrame], config: SlamConfig, threads: int = 1,
             on_frame: Optional[Callable[[SlamState], None]] = None) -> SlamState:
    state = None
    for frame in frames:
        state = bootstrap(frame, config, threads) if state is None else process_frame(state, frame)
        if on_frame is not None:
            on_frame(state)
    if state is None:
        raise InitializationError("sequence contains no frames")
    return state
