"""Numba kernels for tile binning, forward compositing and backward replay.

All kernels work on depth-sorted projected Gaussians given as flat arrays.
Per-pixel state kept for the backward pass is the number of tile-list
entries scanned and the final transmittance; contributions are replayed in
reverse, recovering each transmittance by division.
"""
import numba
import numpy as np

TILE = 16
MAX_WEIGHT = 0.9999
CUTOFF_SIGMA = 3.0
T_MIN = 1e-4


def _bin_gaussians(u, v, rad, width, height, tile):
    n = u.shape[0]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    ntiles = tiles_x * tiles_y
    counts = np.zeros(ntiles, dtype=np.int64)
    bounds = np.empty((n, 4), dtype=np.int64)
    for g in range(n):
        ext = CUTOFF_SIGMA * rad[g]
        x0 = max(0, int(np.ceil(u[g] - ext)))
        x1 = min(width - 1, int(np.floor(u[g] + ext)))
        y0 = max(0, int(np.ceil(v[g] - ext)))
        y1 = min(height - 1, int(np.floor(v[g] + ext)))
        if x0 > x1 or y0 > y1:
            bounds[g, 0] = 1
            bounds[g, 1] = 0
            bounds[g, 2] = 1
            bounds[g, 3] = 0
            continue
        bounds[g, 0] = x0 // tile
        bounds[g, 1] = x1 // tile
        bounds[g, 2] = y0 // tile
        bounds[g, 3] = y1 // tile
        for ty in range(bounds[g, 2], bounds[g, 3] + 1):
            for tx in range(bounds[g, 0], bounds[g, 1] + 1):
                counts[ty * tiles_x + tx] += 1
    offsets = np.zeros(ntiles + 1, dtype=np.int64)
    for t in range(ntiles):
        offsets[t + 1] = offsets[t] + counts[t]
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[ntiles], dtype=np.int64)
    for g in range(n):
        for ty in range(bounds[g, 2], bounds[g, 3] + 1):
            for tx in range(bounds[g, 0], bounds[g, 1] + 1):
                t = ty * tiles_x + tx
                ids[fill[t]] = g
                fill[t] += 1
    return offsets, ids


def _forward(u, v, rad, depth, opac, col, offsets, ids, width, height, tile):
    tiles_x = (width + tile - 1) // tile
    ntiles = offsets.shape[0] - 1
    out_c = np.zeros((height, width, 3))
    out_d = np.zeros((height, width))
    out_s = np.zeros((height, width))
    out_t = np.ones((height, width))
    n_scan = np.zeros((height, width), dtype=np.int64)
    for t in numba.prange(ntiles):
        tx = t % tiles_x
        ty = t // tiles_x
        start = offsets[t]
        end = offsets[t + 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                dd = 0.0
                ss = 0.0
                last = start
                for k in range(start, end):
                    if T < T_MIN:
                        break
                    g = ids[k]
                    dx = px - u[g]
                    dy = py - v[g]
                    dist2 = dx * dx + dy * dy
                    r2 = rad[g] * rad[g]
                    if dist2 > CUTOFF_SIGMA * CUTOFF_SIGMA * r2:
                        continue
                    f = opac[g] * np.exp(-0.5 * dist2 / r2)
                    if f > MAX_WEIGHT:
                        f = MAX_WEIGHT
                    w = f * T
                    c0 += col[g, 0] * w
                    c1 += col[g, 1] * w
                    c2 += col[g, 2] * w
                    dd += depth[g] * w
                    ss += w
                    T *= 1.0 - f
                    last = k + 1
                out_c[py, px, 0] = c0
                out_c[py, px, 1] = c1
                out_c[py, px, 2] = c2
                out_d[py, px] = dd
                out_s[py, px] = ss
                out_t[py, px] = T
                n_scan[py, px] = last - start
    return out_c, out_d, out_s, out_t, n_scan


def _backward(u, v, rad, depth, opac, col, offsets, ids, width, height, tile,
              n_scan, t_final, g_c, g_d, g_s, nchunks):
    """Per projected Gaussian: [dc0, dc1, dc2, d_depth, d_u, d_v, d_rad2d, d_opacity]."""
    tiles_x = (width + tile - 1) // tile
    ntiles = offsets.shape[0] - 1
    m = u.shape[0]
    buf = np.zeros((nchunks, m, 8))
    for c in numba.prange(nchunks):
        t_lo = (ntiles * c) // nchunks
        t_hi = (ntiles * (c + 1)) // nchunks
        for t in range(t_lo, t_hi):
            tx = t % tiles_x
            ty = t // tiles_x
            start = offsets[t]
            for py in range(ty * tile, min(height, (ty + 1) * tile)):
                for px in range(tx * tile, min(width, (tx + 1) * tile)):
                    n = n_scan[py, px]
                    if n == 0:
                        continue
                    gc0 = g_c[py, px, 0]
                    gc1 = g_c[py, px, 1]
                    gc2 = g_c[py, px, 2]
                    gd = g_d[py, px]
                    gs = g_s[py, px]
                    if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and gd == 0.0 and gs == 0.0:
                        continue
                    T = t_final[py, px]
                    a0 = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    ad = 0.0
                    a_s = 0.0
                    for k in range(start + n - 1, start - 1, -1):
                        g = ids[k]
                        dx = px - u[g]
                        dy = py - v[g]
                        dist2 = dx * dx + dy * dy
                        r2 = rad[g] * rad[g]
                        if dist2 > CUTOFF_SIGMA * CUTOFF_SIGMA * r2:
                            continue
                        gauss = np.exp(-0.5 * dist2 / r2)
                        raw = opac[g] * gauss
                        f = raw
                        if f > MAX_WEIGHT:
                            f = MAX_WEIGHT
                        T = T / (1.0 - f)
                        w = f * T
                        buf[c, g, 0] += gc0 * w
                        buf[c, g, 1] += gc1 * w
                        buf[c, g, 2] += gc2 * w
                        buf[c, g, 3] += gd * w
                        dldf = T * (gc0 * (col[g, 0] - a0) + gc1 * (col[g, 1] - a1)
                                    + gc2 * (col[g, 2] - a2) + gd * (depth[g] - ad)
                                    + gs * (1.0 - a_s))
                        a0 = f * col[g, 0] + (1.0 - f) * a0
                        a1 = f * col[g, 1] + (1.0 - f) * a1
                        a2 = f * col[g, 2] + (1.0 - f) * a2
                        ad = f * depth[g] + (1.0 - f) * ad
                        a_s = f + (1.0 - f) * a_s
                        if raw < MAX_WEIGHT:
                            dfq = dldf * f / r2
                            buf[c, g, 4] += dfq * dx
                            buf[c, g, 5] += dfq * dy
                            buf[c, g, 6] += dfq * dist2 / rad[g]
                            buf[c, g, 7] += dldf * gauss
    out = np.zeros((m, 8))
    for c in range(nchunks):
        out += buf[c]
    return out


bin_gaussians = numba.njit(cache=True)(_bin_gaussians)
forward_serial = numba.njit(cache=True)(_forward)
backward_serial = numba.njit(cache=True)(_backward)

_parallel: dict = {}


def forward(*args, threads: int = 1):
    if threads <= 1:
        return forward_serial(*args)
    if "forward" not in _parallel:
        _parallel["forward"] = numba.njit(parallel=True, cache=True)(_forward)
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return _parallel["forward"](*args)


def backward(*args, threads: int = 1):
    if threads <= 1:
        return backward_serial(*args, 1)
    if "backward" not in _parallel:
        _parallel["backward"] = numba.njit(parallel=True, cache=True)(_backward)
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return _parallel["backward"](*args, threads)
