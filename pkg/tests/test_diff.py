import numpy as np
import pytest

from gsslam.core import CameraIntrinsics, CameraPose, GaussianMap, axis_angle_to_quat
from gsslam.diff import backward, finite_diff_grad, linear_loss, rotation_jacobian, smooth_pixel_mask
from gsslam.renderer import render

from conftest import random_map, random_pose


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def masked_upstream(rng, out):
    keep = smooth_pixel_mask(out)
    h, w = keep.shape
    gC = rng.normal(size=(h, w, 3)) * keep[..., None]
    gD = rng.normal(size=(h, w)) * keep
    gS = rng.normal(size=(h, w)) * keep
    return gC, gD, gS


def test_matches_finite_differences(rng, small_intr):
    m = random_map(rng, 12, opacity=(0.2, 0.9))
    pose = random_pose(rng)
    out = render(m, pose, small_intr)
    gC, gD, gS = masked_upstream(rng, out)
    g, gp = backward(m, pose, small_intr, out, gC, gD, gS)
    fg, fgp = finite_diff_grad(m, pose, small_intr, linear_loss(gC, gD, gS))
    assert rel_err(g.d_center, fg.d_center) < 1e-4
    assert rel_err(g.d_color, fg.d_color) < 1e-4
    assert rel_err(g.d_radius, fg.d_radius) < 1e-4
    assert rel_err(g.d_opacity, fg.d_opacity) < 1e-4
    assert rel_err(gp.d_translation, fgp.d_translation) < 1e-4
    assert rel_err(gp.d_quaternion, fgp.d_quaternion) < 1e-4


def test_smooth_mask_drops_cutoff_ring():
    intr = CameraIntrinsics(10.0, 10.0, 8.0, 8.0, 17, 17)
    m = GaussianMap([[0, 0, 1]], [[1, 1, 1]], [0.2], [0.5])
    out = render(m, CameraPose.identity(), intr)
    keep = smooth_pixel_mask(out, margin=0.02)
    # radius2d = 2 px, cutoff at 6 px: (8 +- 6, 8) lies exactly on the ring
    assert not keep[8, 14] and not keep[8, 2]
    assert keep[8, 8] and keep[8, 12]


def test_empty_map_has_zero_gradient(small_intr):
    m = GaussianMap.empty()
    out = render(m, CameraPose.identity(), small_intr)
    h, w = small_intr.shape
    g, gp = backward(m, CameraPose.identity(), small_intr, out,
                     np.ones((h, w, 3)), np.ones((h, w)), np.ones((h, w)))
    assert g.flat().size == 0
    assert not gp.flat().any()


def test_single_gaussian_color_gradient_is_weight():
    intr = CameraIntrinsics(30.0, 30.0, 2.0, 2.0, 5, 5)
    m = GaussianMap([[0, 0, 2]], [[0.3, 0.6, 0.9]], [0.05], [0.7])
    out = render(m, CameraPose.identity(), intr)
    gC = np.zeros((5, 5, 3))
    gC[2, 3] = 1.0
    g, _ = backward(m, CameraPose.identity(), intr, out, gC, np.zeros((5, 5)), np.zeros((5, 5)))
    f = out.silhouette[2, 3]
    assert f > 0
    np.testing.assert_allclose(g.d_color[0], [f, f, f], rtol=1e-12)


def test_zero_upstream_gives_zero(rng, small_intr):
    m = random_map(rng, 20)
    out = render(m, CameraPose.identity(), small_intr)
    h, w = small_intr.shape
    g, gp = backward(m, CameraPose.identity(), small_intr, out,
                     np.zeros((h, w, 3)), np.zeros((h, w)), np.zeros((h, w)))
    assert not g.flat().any() and not gp.flat().any()


def test_linear_in_upstream(rng, small_intr):
    m = random_map(rng, 20)
    pose = random_pose(rng)
    out = render(m, pose, small_intr)
    a = [rng.normal(size=s) for s in [(32, 32, 3), (32, 32), (32, 32)]]
    b = [rng.normal(size=s) for s in [(32, 32, 3), (32, 32), (32, 32)]]
    ga, pa = backward(m, pose, small_intr, out, *a)
    gb, pb = backward(m, pose, small_intr, out, *b)
    gab, pab = backward(m, pose, small_intr, out, *[2 * x - 3 * y for x, y in zip(a, b)])
    np.testing.assert_allclose(gab.flat(), 2 * ga.flat() - 3 * gb.flat(), atol=1e-9)
    np.testing.assert_allclose(pab.flat(), 2 * pa.flat() - 3 * pb.flat(), atol=1e-9)


def test_quaternion_gradient_is_tangent(rng, small_intr):
    m = random_map(rng, 20)
    pose = random_pose(rng, rot=0.3)
    out = render(m, pose, small_intr)
    gC, gD, gS = masked_upstream(rng, out)
    _, gp = backward(m, pose, small_intr, out, gC, gD, gS)
    # scaling the quaternion leaves the render unchanged
    assert abs(np.dot(gp.d_quaternion, pose.rotation)) < 1e-10 * max(1.0, np.abs(gp.d_quaternion).max())


def test_pose_gradient_equals_rigid_world_motion(rng, small_intr):
    # moving the camera by dt is the same as moving every Gaussian by -R^T dt
    m = random_map(rng, 15)
    pose = random_pose(rng)
    out = render(m, pose, small_intr)
    gC, gD, gS = masked_upstream(rng, out)
    g, gp = backward(m, pose, small_intr, out, gC, gD, gS)
    np.testing.assert_allclose(gp.d_translation, (g.d_center @ pose.R.T).sum(axis=0), atol=1e-8)


def test_constant_loss_has_zero_fd(rng, small_intr):
    m = random_map(rng, 5)
    fg, fgp = finite_diff_grad(m, CameraPose.identity(), small_intr, lambda out: 3.0)
    assert not fg.flat().any() and not fgp.flat().any()
    with pytest.raises(ValueError):
        finite_diff_grad(m, CameraPose.identity(), small_intr, lambda out: 0.0, step=0.0)


def test_opacity_gradient_closed_form():
    # one pixel, two gaussians at their centres: S = o1 + (1 - o1) o2
    intr = CameraIntrinsics(100.0, 100.0, 0.0, 0.0, 1, 1)
    m = GaussianMap([[0, 0, 1], [0, 0, 2]], [[1, 0, 0], [0, 1, 0]], [0.01, 0.01], [0.3, 0.6])
    out = render(m, CameraPose.identity(), intr)
    assert out.silhouette[0, 0] == pytest.approx(0.3 + 0.7 * 0.6)
    g, _ = backward(m, CameraPose.identity(), intr, out,
                    np.zeros((1, 1, 3)), np.zeros((1, 1)), np.ones((1, 1)))
    np.testing.assert_allclose(g.d_opacity, [1 - 0.6, 1 - 0.3], rtol=1e-12)
    # depth D = o1 d1 + (1 - o1) o2 d2
    g, _ = backward(m, CameraPose.identity(), intr, out,
                    np.zeros((1, 1, 3)), np.ones((1, 1)), np.zeros((1, 1)))
    np.testing.assert_allclose(g.d_opacity, [1 - 0.6 * 2, 0.7 * 2], rtol=1e-12)


def test_reparametrized_gradients(rng, small_intr):
    m = random_map(rng, 6)
    out = render(m, CameraPose.identity(), small_intr)
    gC, gD, gS = masked_upstream(rng, out)
    g, _ = backward(m, CameraPose.identity(), small_intr, out, gC, gD, gS)
    np.testing.assert_allclose(g.d_opacity_logit(m), g.d_opacity * m.opacities * (1 - m.opacities))
    np.testing.assert_allclose(g.d_log_radius(m), g.d_radius * m.radii)


def test_rotation_jacobian_matches_fd():
    from gsslam.core import quat_to_rotmat

    q = axis_angle_to_quat([0.3, -0.2, 0.9], 0.8)
    J = rotation_jacobian(q)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        # the quadratic form without normalization is what the jacobian describes
        fd = (_raw_rotmat(q + e) - _raw_rotmat(q - e)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, atol=1e-8)
    np.testing.assert_allclose(_raw_rotmat(q), quat_to_rotmat(q), atol=1e-12)


def _raw_rotmat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def test_backward_rejects_bad_shapes(rng, small_intr):
    m = random_map(rng, 3)
    out = render(m, CameraPose.identity(), small_intr)
    with pytest.raises(ValueError):
        backward(m, CameraPose.identity(), small_intr, out, np.zeros((2, 2, 3)), np.zeros((2, 2)), np.zeros((2, 2)))
