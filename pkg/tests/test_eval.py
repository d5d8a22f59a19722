import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import orthogonal_procrustes

from gsslam.core import CameraPose, axis_angle_to_quat, quat_multiply
from gsslam.eval import (AteReport, RenderReport, ate_rmse, depth_l1, gaussian_window, json_float,
                         path_length, psnr, render_report, ssim, ssim_with_grad, umeyama_alignment)


def line_trajectory(n=5, step=0.1):
    return [CameraPose.from_center(axis_angle_to_quat([0, 1, 0], 0.05 * k), [step * k, 0.02 * k * k, 0.0])
            for k in range(n)]


def moved(traj, q, t):
    """Apply a rigid world transform x -> R x + t to every camera."""
    out = []
    for p in traj:
        rot = quat_multiply(p.rotation, [q[0], -q[1], -q[2], -q[3]])
        out.append(CameraPose.from_center(rot, CameraPose(q).R @ p.center + t))
    return out


def test_ate_identical_is_zero():
    traj = line_trajectory()
    rep = ate_rmse(traj, traj)
    assert rep.rmse == pytest.approx(0.0, abs=1e-12)


def test_ate_rigid_offset_is_absorbed():
    gt = line_trajectory(8)
    q = axis_angle_to_quat([0.2, 1.0, -0.4], 0.7)
    est = moved(gt, q, np.array([1.0, -2.0, 0.5]))
    assert ate_rmse(est, gt).rmse < 1e-9
    assert ate_rmse(est, gt, alignment="none").rmse > 0.1


def test_ate_five_pose_fixture():
    gt = line_trajectory(5)
    est = list(gt)
    c = gt[2].center + np.array([0.01, 0.0, 0.0])
    est[2] = CameraPose.from_center(gt[2].rotation, c)
    rep = ate_rmse(est, gt, alignment="none")
    assert rep.rmse == pytest.approx(0.01 / math.sqrt(5), abs=1e-12)
    assert rep.rmse == pytest.approx(0.00447, abs=1e-5)
    assert rep.rmse == pytest.approx(math.sqrt(np.mean(rep.per_frame_errors ** 2)), abs=1e-12)
    # with alignment the optimum can only be lower
    assert ate_rmse(est, gt).rmse <= rep.rmse


def test_umeyama_matches_independent_procrustes(rng):
    src = rng.normal(size=(30, 3))
    q = axis_angle_to_quat(rng.normal(size=3), 1.1)
    dst = src @ CameraPose(q).R.T + [0.3, 0.1, -2] + rng.normal(scale=0.01, size=(30, 3))
    _, R, t = umeyama_alignment(src, dst)
    # scipy solves min ||A W - B|| with W orthogonal; here A = src_c, B = dst_c, so W = R^T
    W, _ = orthogonal_procrustes(src - src.mean(0), dst - dst.mean(0))
    np.testing.assert_allclose(R, W.T, atol=1e-10)
    np.testing.assert_allclose(t, dst.mean(0) - R @ src.mean(0), atol=1e-10)


def test_umeyama_scale_recovered(rng):
    src = rng.normal(size=(20, 3))
    s, R, t = umeyama_alignment(src, 2.5 * src + 1.0, with_scale=True)
    assert s == pytest.approx(2.5)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-10)


def test_ate_degenerate_falls_back_to_translation():
    gt = [CameraPose.from_center([1, 0, 0, 0], [1.0, 2.0, 3.0])] * 3
    est = [CameraPose.identity()] * 3
    rep = ate_rmse(est, gt)
    assert rep.rmse == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(rep.rotation, np.eye(3))


def test_ate_errors():
    with pytest.raises(ValueError):
        ate_rmse(line_trajectory(3), line_trajectory(4))
    with pytest.raises(ValueError):
        ate_rmse(line_trajectory(1), line_trajectory(1))
    with pytest.raises(ValueError):
        ate_rmse(line_trajectory(3), line_trajectory(3), alignment="affine")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-3, 3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, 1000))
def test_ate_rigid_invariance_property(axis, angle, t, seed):
    if np.linalg.norm(axis) < 1e-3:
        axis = [0, 0, 1]
    rng = np.random.default_rng(seed)
    gt = line_trajectory(6)
    est = [CameraPose.from_center(p.rotation, p.center + rng.normal(scale=0.01, size=3)) for p in gt]
    base = ate_rmse(est, gt).rmse
    est2 = moved(est, axis_angle_to_quat(axis, angle), np.asarray(t))
    assert ate_rmse(est2, gt).rmse == pytest.approx(base, abs=1e-9)


def test_path_length():
    traj = [CameraPose.from_center([1, 0, 0, 0], [0.1 * k, 0, 0]) for k in range(5)]
    assert path_length(traj) == pytest.approx(0.4)


def test_psnr_cases(rng):
    a = rng.uniform(size=(8, 8, 3))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)
    b = rng.uniform(size=(8, 8, 3))
    mse = ((a - b) ** 2).mean()
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, b[:4])


def test_json_float_sentinel():
    assert json_float(math.inf) == "+inf"
    assert json_float(-math.inf) == "-inf"
    assert json_float(2.5) == 2.5
    rep = RenderReport(math.inf, 1.0, 0.0, 10)
    assert json.loads(json.dumps(rep.to_json()))["psnr_db"] == "+inf"
    assert set(rep.to_json()) == {"psnr_db", "ssim", "depth_l1_cm", "n_pixels"}
    assert set(AteReport(0.1, np.zeros(3)).to_json()) >= {"rmse_m"}


def direct_ssim_channel(x, y):
    """SSIM by explicit windowed sums, one window position at a time."""
    win = gaussian_window()
    k = win.shape[0]
    h, w = x.shape
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            px, py = x[i:i + k, j:j + k], y[i:i + k, j:j + k]
            mx, my = (win * px).sum(), (win * py).sum()
            vx = (win * (px - mx) ** 2).sum()
            vy = (win * (py - my) ** 2).sum()
            cxy = (win * (px - mx) * (py - my)).sum()
            c1, c2 = 0.01 ** 2, 0.03 ** 2
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return np.mean(vals)


def test_ssim_matches_direct_oracle(rng):
    a = rng.uniform(size=(16, 20, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    expected = np.mean([direct_ssim_channel(a[..., c], b[..., c]) for c in range(3)])
    assert ssim(a, b) == pytest.approx(expected, abs=1e-6)


def test_ssim_properties(rng):
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, 0.5 * a) < 1.0
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_gradient_matches_fd(rng):
    a = rng.uniform(size=(13, 14, 2))
    b = rng.uniform(size=(13, 14, 2))
    _, g = ssim_with_grad(a, b)
    h = 1e-6
    for idx in [(0, 0, 0), (6, 7, 1), (12, 13, 0), (3, 10, 1), (11, 2, 0)]:
        e = np.zeros_like(a)
        e[idx] = h
        fd = (ssim(a + e, b) - ssim(a - e, b)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    _, g2 = ssim_with_grad(a[..., 0], b[..., 0])
    assert g2.shape == (13, 14)


def test_depth_l1_cases(rng):
    d = rng.uniform(1, 3, size=(6, 6))
    valid = np.ones((6, 6), dtype=bool)
    assert depth_l1(d, d, valid) == 0.0
    assert depth_l1(d + 0.02, d, valid) == pytest.approx(2.0)
    half = valid.copy()
    half[:, :3] = False
    garbage = d.copy()
    garbage[:, :3] = 1e6
    assert depth_l1(garbage + 0.01, d, half) == pytest.approx(depth_l1(d + 0.01, d, half))
    assert depth_l1(d + 0.01, d, half) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        depth_l1(d, d, np.zeros((6, 6), dtype=bool))


def test_render_report_counts_valid_pixels(rng):
    c = rng.uniform(size=(12, 12, 3))
    d = rng.uniform(1, 2, size=(12, 12))
    valid = rng.uniform(size=(12, 12)) > 0.3
    rep = render_report(c, c, d, d, valid)
    assert rep.pixel_count_evaluated == np.count_nonzero(valid)
    assert rep.psnr == math.inf and rep.depth_l1 == 0.0
