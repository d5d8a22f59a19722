"""Differentiable splatting of isotropic Gaussians into color, depth and silhouette.

Gaussians are projected with a pinhole model, sorted front to back and
alpha-composited per pixel. Pixel ``(x, y)`` sits at integer image
coordinates, so the principal point pixel maps to the optical axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._kernels import CUTOFF_SIGMA, MAX_WEIGHT, T_MIN, TILE
from .core import CameraIntrinsics, CameraPose, GaussianMap

NEAR_CLIP = 1e-4


@dataclass(frozen=True)
class ProjectedGaussian:
    center2d: np.ndarray
    radius2d: float
    depth: float
    opacity: float
    color: np.ndarray
    source_index: int


@dataclass(frozen=True, eq=False)
class ProjectedBatch:
    """Depth-sorted projection of every Gaussian in front of the near plane."""

    source_index: np.ndarray  # (M,) int64, into the GaussianMap
    cam_points: np.ndarray  # (M, 3) camera-frame centers
    center2d: np.ndarray  # (M, 2)
    radius2d: np.ndarray  # (M,)
    depth: np.ndarray  # (M,)
    opacity: np.ndarray  # (M,)
    color: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return len(self.source_index)

    def to_list(self) -> list[ProjectedGaussian]:
        return [
            ProjectedGaussian(self.center2d[i].copy(), float(self.radius2d[i]), float(self.depth[i]),
                              float(self.opacity[i]), self.color[i].copy(), int(self.source_index[i]))
            for i in range(len(self))
        ]


def project_batch(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics) -> ProjectedBatch:
    X = gmap.centers @ pose.R.T + pose.translation
    front = np.flatnonzero(X[:, 2] > NEAR_CLIP)
    d = X[front, 2]
    # stable sort on depth keeps ascending source index for ties
    order = front[np.argsort(d, kind="stable")]
    X = X[order]
    d = X[:, 2]
    u = intr.fx * X[:, 0] / d + intr.cx
    v = intr.fy * X[:, 1] / d + intr.cy
    return ProjectedBatch(
        source_index=order.astype(np.int64),
        cam_points=X,
        center2d=np.stack([u, v], axis=1),
        radius2d=intr.focal * gmap.radii[order] / d,
        depth=d,
        opacity=gmap.opacities[order].copy(),
        color=gmap.colors[order].copy(),
    )


def project(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics) -> list[ProjectedGaussian]:
    return project_batch(gmap, pose, intr).to_list()


def pixel_weight(g: ProjectedGaussian, p) -> float:
    """Clamped Gaussian weight of ``g`` at pixel ``p``; zero beyond the 3-sigma cutoff."""
    dx = p[0] - g.center2d[0]
    dy = p[1] - g.center2d[1]
    dist2 = dx * dx + dy * dy
    r2 = g.radius2d * g.radius2d
    if dist2 > CUTOFF_SIGMA * CUTOFF_SIGMA * r2:
        return 0.0
    return min(g.opacity * float(np.exp(-0.5 * dist2 / r2)), MAX_WEIGHT)


class Contribution(NamedTuple):
    source_index: int
    weight: float
    transmittance: float


@dataclass(frozen=True, eq=False)
class RenderOutput:
    color: np.ndarray
    depth: np.ndarray
    silhouette: np.ndarray
    projected: ProjectedBatch
    tile_offsets: np.ndarray
    tile_ids: np.ndarray
    n_scanned: np.ndarray
    transmittance: np.ndarray
    intrinsics: CameraIntrinsics

    def contributions(self, x: int, y: int) -> list[Contribution]:
        """Ordered compositing records used at pixel ``(x, y)``."""
        w = self.intrinsics.width
        tiles_x = (w + TILE - 1) // TILE
        t = (y // TILE) * tiles_x + (x // TILE)
        start = self.tile_offsets[t]
        pb = self.projected
        out = []
        T = 1.0
        for k in range(start, start + self.n_scanned[y, x]):
            g = self.tile_ids[k]
            dx = x - pb.center2d[g, 0]
            dy = y - pb.center2d[g, 1]
            dist2 = dx * dx + dy * dy
            r2 = pb.radius2d[g] ** 2
            if dist2 > CUTOFF_SIGMA ** 2 * r2:
                continue
            f = min(pb.opacity[g] * np.exp(-0.5 * dist2 / r2), MAX_WEIGHT)
            out.append(Contribution(int(pb.source_index[g]), float(f), float(T)))
            T *= 1.0 - f
        return out

    @property
    def contrib_lists(self) -> list[list[list[Contribution]]]:
        """All per-pixel records, indexed ``[y][x]``. Slow; meant for inspection."""
        h, w = self.intrinsics.shape
        return [[self.contributions(x, y) for x in range(w)] for y in range(h)]


def render(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics, threads: int = 1) -> RenderOutput:
    pb = project_batch(gmap, pose, intr)
    u = np.ascontiguousarray(pb.center2d[:, 0])
    v = np.ascontiguousarray(pb.center2d[:, 1])
    offsets, ids = _kernels.bin_gaussians(u, v, pb.radius2d, intr.width, intr.height, TILE)
    color, depth, sil, trans, n_scan = _kernels.forward(
        u, v, pb.radius2d, pb.depth, pb.opacity, np.ascontiguousarray(pb.color),
        offsets, ids, intr.width, intr.height, TILE, threads=threads)
    return RenderOutput(color, depth, sil, pb, offsets, ids, n_scan, trans, intr)


def render_reference(gmap: GaussianMap, pose: CameraPose, intr: CameraIntrinsics):
    """Brute-force compositing over all Gaussians for every pixel; no tiling.

    Returns ``(color, depth, silhouette)``. Used as a test oracle.
    """
    h, w = intr.shape
    pb = project_batch(gmap, pose, intr)
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs.ravel().astype(np.float64)
    py = ys.ravel().astype(np.float64)
    C = np.zeros((px.size, 3))
    D = np.zeros(px.size)
    S = np.zeros(px.size)
    T = np.ones(px.size)
    for i in range(len(pb)):
        dist2 = (px - pb.center2d[i, 0]) ** 2 + (py - pb.center2d[i, 1]) ** 2
        r2 = pb.radius2d[i] ** 2
        f = np.minimum(pb.opacity[i] * np.exp(-0.5 * dist2 / r2), MAX_WEIGHT)
        f[dist2 > CUTOFF_SIGMA ** 2 * r2] = 0.0
        f[T < T_MIN] = 0.0
        wgt = f * T
        C += wgt[:, None] * pb.color[i]
        D += wgt * pb.depth[i]
        S += wgt
        T = T * (1.0 - f)
    return C.reshape(h, w, 3), D.reshape(h, w), S.reshape(h, w)
