import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsslam.core import CameraIntrinsics, CameraPose, GaussianMap, axis_angle_to_quat, quat_normalize
from gsslam.io import (FormatError, Motion, SynthError, add_depth_holes, associate, export_map_ply,
                       export_trajectory_tum, import_map_ply, load_simple, load_trajectory_tum, load_tum,
                       synth_generate, synth_render_sequence, write_simple)
from gsslam.io.datasets import decode_depth
from gsslam.io.files import read_depth_raw, write_color_png, write_depth_png
from gsslam.io.ply import map_from_ply_bytes, map_to_ply_bytes
from gsslam.io.trajectory import format_trajectory_tum
from gsslam.renderer import render

from conftest import random_map

SMALL = CameraIntrinsics(20.0, 20.0, 7.5, 5.5, 16, 12)


# ---------------------------------------------------------------------------
# trajectories

def test_identity_pose_line():
    assert format_trajectory_tum([CameraPose.identity()], [0.0]) == "0.000000000 0 0 0 0 0 0 1\n"


def test_trajectory_round_trip(tmp_path, rng):
    poses = [CameraPose(quat_normalize(rng.normal(size=4)), rng.normal(size=3)) for _ in range(25)]
    ts = list(np.cumsum(rng.uniform(0.01, 0.05, size=25)))
    path = tmp_path / "traj.txt"
    export_trajectory_tum(poses, ts, path)
    ts2, poses2 = load_trajectory_tum(path)
    np.testing.assert_allclose(ts2, ts, atol=1e-9)
    for a, b in zip(poses, poses2):
        np.testing.assert_allclose(b.matrix(), a.matrix(), atol=1e-8)


def test_trajectory_is_camera_to_world(tmp_path):
    pose = CameraPose.from_center(axis_angle_to_quat([0, 0, 1], 0.3), [1.0, 2.0, 3.0])
    path = tmp_path / "t.txt"
    export_trajectory_tum([pose], [1.5], path)
    fields = [float(x) for x in path.read_text().split()]
    np.testing.assert_allclose(fields[1:4], [1, 2, 3], atol=1e-8)
    assert fields[7] >= 0


def test_trajectory_errors(tmp_path):
    with pytest.raises(ValueError):
        format_trajectory_tum([CameraPose.identity()], [0.0, 1.0])
    bad = tmp_path / "bad.txt"
    bad.write_text("# comment\n0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n")
    with pytest.raises(FormatError, match=":3"):
        load_trajectory_tum(bad)
    ts, poses = load_trajectory_tum(bad, strict=False)
    assert ts == [0.0] and len(poses) == 1
    nan = tmp_path / "nan.txt"
    nan.write_text("0 0 0 0 x 0 0 1\n")
    with pytest.raises(FormatError):
        load_trajectory_tum(nan)
    with pytest.raises(FormatError, match="missing"):
        load_trajectory_tum(tmp_path / "nope.txt")


# ---------------------------------------------------------------------------
# PLY

def test_ply_round_trip_1000(tmp_path):
    m = random_map(np.random.default_rng(3), 1000)
    path = tmp_path / "map.ply"
    export_map_ply(m, path)
    back = import_map_ply(path)
    assert len(back) == 1000
    np.testing.assert_array_equal(back.centers, m.centers)
    np.testing.assert_array_equal(back.radii, m.radii)
    np.testing.assert_array_equal(back.colors, m.colors.astype(np.float32))
    np.testing.assert_array_equal(back.opacities, m.opacities.astype(np.float32))
    # a second trip is exact
    assert map_to_ply_bytes(back) == map_to_ply_bytes(import_map_ply(path))


def test_ply_empty_map(tmp_path):
    raw = map_to_ply_bytes(GaussianMap.empty())
    assert b"element vertex 0" in raw
    assert len(map_from_ply_bytes(raw)) == 0


def test_ply_header_is_standard():
    header = map_to_ply_bytes(random_map(np.random.default_rng(0), 2)).split(b"end_header\n")[0].decode()
    lines = header.splitlines()
    assert lines[0] == "ply" and lines[1] == "format binary_little_endian 1.0"
    props = [ln.split()[1:] for ln in lines if ln.startswith("property")]
    assert props == [["double", "x"], ["double", "y"], ["double", "z"], ["float", "red"], ["float", "green"],
                     ["float", "blue"], ["double", "radius"], ["float", "opacity"]]


def test_ply_errors():
    raw = map_to_ply_bytes(random_map(np.random.default_rng(0), 5))
    with pytest.raises(FormatError):
        map_from_ply_bytes(b"plx" + raw[3:])
    with pytest.raises(FormatError):
        map_from_ply_bytes(raw[:-3])
    with pytest.raises(FormatError):
        map_from_ply_bytes(raw.replace(b"property float opacity", b"property float alpha"))
    with pytest.raises(FormatError):
        map_from_ply_bytes(raw.replace(b"binary_little_endian", b"ascii"))
    with pytest.raises(FormatError):
        map_from_ply_bytes(raw[:40])


# ---------------------------------------------------------------------------
# TUM

def test_depth_scale_fixture(tmp_path):
    raw = np.array([[5000, 0], [10000, 65535]], dtype=np.uint16)
    depth, valid = decode_depth(raw.astype(np.float64), 5000.0, 10.0)
    assert depth[0, 0] == 1.0 and depth[1, 0] == 2.0
    assert not valid[0, 1] and not valid[1, 1]
    path = tmp_path / "d.png"
    write_depth_png(path, np.array([[1.0, 0.0], [2.0, 0.5]]))
    np.testing.assert_array_equal(read_depth_raw(path), [[5000, 0], [10000, 2500]])


def test_association_hand_fixture():
    rgb = [0.000, 0.033, 0.066, 0.100]
    depth = [0.010, 0.030, 0.045, 0.140]
    # nearest within 20 ms, one-to-one: 0.033-0.030 (3 ms) wins depth 1 before 0.000-0.010 (10 ms)
    # 0.066-0.045 is 21 ms and 0.100-0.140 is 40 ms: both unmatched
    assert associate(rgb, depth) == [(0, 0), (1, 1)]
    # a single depth stamp claimed by two rgb stamps goes to the closer one
    assert associate([0.0, 0.015], [0.01]) == [(1, 0)]


def make_tum_dir(root, gt=True):
    root.mkdir()
    (root / "rgb").mkdir()
    (root / "depth").mkdir()
    rgb_ts = [1.000, 1.033, 1.066]
    depth_ts = [1.004, 1.030, 1.090]
    rng = np.random.default_rng(0)
    lines_r, lines_d = ["# rgb"], ["# depth"]
    for k, (tr, td) in enumerate(zip(rgb_ts, depth_ts)):
        write_color_png(root / "rgb" / f"{tr:.6f}.png", rng.uniform(size=(480, 640, 3)))
        d = np.full((480, 640), 1.0 + k)
        d[0, 0] = 0.0
        d[1, 1] = 12.0
        write_depth_png(root / "depth" / f"{td:.6f}.png", d)
        lines_r.append(f"{tr:.6f} rgb/{tr:.6f}.png")
        lines_d.append(f"{td:.6f} depth/{td:.6f}.png")
    (root / "rgb.txt").write_text("\n".join(lines_r) + "\n")
    (root / "depth.txt").write_text("\n".join(lines_d) + "\n")
    if gt:
        (root / "groundtruth.txt").write_text(
            "# gt\n1.001 0.1 0 0 0 0 0 1\n1.034 0.2 0 0 0 0 0 1\n1.070 0.3 0 0 0 0 0 1\n")
    return root


def test_load_tum_fixture(tmp_path):
    src = load_tum(make_tum_dir(tmp_path / "rgbd_dataset_freiburg1_xyz"))
    # third rgb frame at 1.066 has no depth within 20 ms (1.090 is 24 ms away)
    assert len(src) == 2
    assert src.timestamps == [1.0, 1.033]
    fr = src[1]
    assert fr.intrinsics.fx == 517.3 and fr.shape == (480, 640)
    assert fr.depth[2, 2] == pytest.approx(2.0)
    assert not fr.depth_valid[0, 0] and not fr.depth_valid[1, 1]
    np.testing.assert_allclose([p.center[0] for p in src.ground_truth], [0.1, 0.2])


def test_load_tum_errors(tmp_path):
    root = make_tum_dir(tmp_path / "seq")
    (root / "depth.txt").write_text("1.0 depth/x.png extra\n")
    with pytest.raises(FormatError):
        load_tum(root)
    (root / "depth.txt").write_text("5.0 depth/x.png\n")
    with pytest.raises(FormatError, match="no associated"):
        load_tum(root)
    (root / "rgb.txt").unlink()
    with pytest.raises(FormatError, match="rgb.txt"):
        load_tum(root)


def test_load_tum_stride(tmp_path):
    src = load_tum(make_tum_dir(tmp_path / "freiburg2_x", gt=False), stride=2)
    assert src.ground_truth is None
    assert src[0].shape == (240, 320) and src[0].intrinsics.fx == pytest.approx(520.9 / 2)


# ---------------------------------------------------------------------------
# synthetic + simple format

def test_synth_deterministic():
    a = synth_generate(n_gaussians=50, n_frames=3, seed=7)
    b = synth_generate(n_gaussians=50, n_frames=3, seed=7)
    assert a.gaussians.allclose(b.gaussians, atol=0)
    assert all(p.almost_equal(q, atol=0) for p, q in zip(a.trajectory, b.trajectory))
    fa, fb = synth_render_sequence(a), synth_render_sequence(b)
    assert all(x.color.tobytes() == y.color.tobytes() and x.depth.tobytes() == y.depth.tobytes()
               for x, y in zip(fa, fb))


def test_synth_zero_motion():
    sc = synth_generate(n_gaussians=30, n_frames=2, motion=Motion(0.0, 0.0), seed=1)
    assert sc.trajectory[0].almost_equal(sc.trajectory[1], atol=0)


def test_synth_steps_match_motion():
    sc = synth_generate(n_gaussians=50, n_frames=4, seed=2)
    from gsslam.core import quat_angle
    for p, q in zip(sc.trajectory, sc.trajectory[1:]):
        assert np.linalg.norm(q.center - p.center) == pytest.approx(0.01)
        assert np.degrees(quat_angle(p.rotation, q.rotation)) == pytest.approx(1.0)


def test_synth_first_frame_is_render():
    sc = synth_generate(n_gaussians=100, n_frames=2, seed=7)
    src = synth_render_sequence(sc)
    out = render(sc.gaussians, sc.trajectory[0], sc.intrinsics)
    np.testing.assert_array_equal(src[0].color, np.clip(out.color, 0, 1))
    valid = out.silhouette >= 0.5
    np.testing.assert_array_equal(src[0].depth_valid, valid)
    np.testing.assert_array_equal(src[0].depth[valid], out.depth[valid])
    assert len(src.ground_truth) == 2
    assert (src[0].depth[valid] > 0).all() and valid.mean() >= 0.5


def test_synth_unsatisfiable():
    with pytest.raises(SynthError):
        synth_generate(n_gaussians=40, n_frames=40, motion=Motion(0.5, 20.0), max_retries=3)
    with pytest.raises(SynthError):
        synth_generate(n_gaussians=0)


def test_depth_holes():
    src = synth_render_sequence(synth_generate(n_gaussians=100, n_frames=2, seed=7))
    holed = add_depth_holes(src, 0.2, seed=3)
    for a, b in zip(src, holed):
        lost = a.depth_valid & ~b.depth_valid
        assert not (b.depth_valid & ~a.depth_valid).any()
        assert lost.sum() > 0 and (b.depth[~b.depth_valid] == 0).all()
        np.testing.assert_array_equal(a.color, b.color)


def test_simple_round_trip(tmp_path):
    sc = synth_generate(n_gaussians=80, n_frames=3, seed=5)
    src = synth_render_sequence(sc)
    write_simple(src, tmp_path / "seq")
    back = load_simple(tmp_path / "seq")
    assert len(back) == 3 and back[0].intrinsics == sc.intrinsics
    for a, b in zip(src, back):
        np.testing.assert_allclose(b.color, a.color, atol=0.5 / 255 + 1e-12)
        np.testing.assert_array_equal(b.depth_valid, a.depth_valid & (np.round(a.depth * 5000) > 0))
        np.testing.assert_allclose(b.depth[b.depth_valid], a.depth[b.depth_valid], atol=0.5 / 5000 + 1e-12)
    for p, q in zip(src.ground_truth, back.ground_truth):
        np.testing.assert_allclose(p.matrix(), q.matrix(), atol=1e-8)


def test_simple_errors(tmp_path):
    with pytest.raises(FormatError, match="intrinsics.json"):
        load_simple(tmp_path)
    (tmp_path / "intrinsics.json").write_text("{\"fx\": 1}")
    with pytest.raises(FormatError, match="invalid intrinsics"):
        load_simple(tmp_path)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12), st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12))
def test_association_is_one_to_one(a, b):
    a, b = sorted(a), sorted(b)
    pairs = associate(a, b)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    assert all(abs(a[i] - b[j]) <= 0.02 for i, j in pairs)
