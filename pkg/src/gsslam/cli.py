"""Command-line driver: ``gsslam {run,synth,render,eval}``.

Every command returns a process exit code: 0 on success, 2 for missing or
invalid inputs (config, dataset, map, poses), 1 for anything else.  Errors are
reported on stderr as one JSON object with ``error`` and ``message`` keys.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import CameraIntrinsics, ConfigError, SlamConfig
from .eval import ate_rmse, depth_l1, json_float, path_length, psnr, render_report, ssim
from .io import (FormatError, SynthError, export_map_ply, export_trajectory_tum, import_map_ply,
                 load_simple, load_trajectory_tum, load_tum, synth_generate, synth_render_sequence,
                 write_simple)
from .io.files import (read_color_png, read_depth_raw, write_color_png, write_depth_png,
                       write_gray_png, write_text_atomic)
from .renderer import render
from .slam import InitializationError, SlamState, bootstrap, process_frame

log = logging.getLogger("gsslam")

LOG_ENV = "SPLATAM_LOG"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEPTH_SCALE = 5000.0


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2, path: Optional[str] = None):
        super().__init__(message)
        self.kind, self.code, self.path = kind, code, path


def _setup_logging() -> None:
    name = os.environ.get(LOG_ENV, "warn").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level is None:
        log.warning("%s=%r not one of %s; using warn", LOG_ENV, name, "|".join(LOG_LEVELS))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# run


def _load_config(path: Optional[str]) -> SlamConfig:
    if path is None:
        return SlamConfig()
    p = Path(path)
    if not p.is_file():
        raise CliError("config_not_found", f"config file not found: {p}", path=str(p))
    try:
        return SlamConfig.load(p)
    except ConfigError as e:
        raise CliError("invalid_config", f"{p}: {e}", path=str(p)) from e


def _load_dataset(kind: str, data: str, stride: int, strict: bool):
    root = Path(data)
    if not root.is_dir():
        raise CliError("dataset_not_found", f"dataset directory not found: {root}", path=str(root))
    try:
        if kind == "tum":
            return load_tum(root, strict=strict, stride=stride)
        return load_simple(root, strict=strict, stride=stride)
    except (FormatError, OSError, ValueError) as e:
        raise CliError("dataset_load_failed", str(e), path=str(root)) from e


def train_view_metrics(state: SlamState, frames, every: int) -> dict:
    """Render the final map at every ``every``-th tracked pose (and the last) against its input frame."""
    n = len(state.trajectory)
    indices = sorted(set(range(0, n, every)) | {n - 1})
    per = []
    for k in indices:
        fr = frames[k]
        out = render(state.map, state.trajectory[k], fr.intrinsics, threads=state.threads)
        if fr.depth_valid.any():
            rep = render_report(out.color, fr.color, out.depth, fr.depth, fr.depth_valid)
            entry = dict(rep.to_json(), frame_index=k)
        else:
            entry = {"frame_index": k, "psnr_db": json_float(psnr(out.color, fr.color)),
                     "ssim": ssim(out.color, fr.color), "depth_l1_cm": None, "n_pixels": 0}
        per.append(entry)
    psnrs = [math.inf if e["psnr_db"] == "+inf" else e["psnr_db"] for e in per]
    depths = [e["depth_l1_cm"] for e in per if e["depth_l1_cm"] is not None]
    return {
        "every": every,
        "frames": per,
        "mean_psnr_db": json_float(float(np.mean(psnrs))),
        "mean_ssim": float(np.mean([e["ssim"] for e in per])),
        "mean_depth_l1_cm": float(np.mean(depths)) if depths else None,
        "final": per[-1],
    }


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    seq = _load_dataset(args.dataset, args.data, args.stride, not args.lenient)
    if args.max_frames is not None:
        seq = seq.limit(args.max_frames)
    if len(seq) == 0:
        raise CliError("empty_dataset", f"{args.data}: no frames", path=args.data)
    out = Path(args.out)
    if args.dry_run:
        first = seq[0]
        size = [first.intrinsics.width, first.intrinsics.height]
        print(_dump({"dry_run": True, "n_frames": len(seq), "image_size": size,
                     "has_ground_truth": seq.ground_truth is not None, "config": cfg.to_dict()}), end="")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    status_file = None
    if args.status_jsonl:
        status_file = open(out / "status.jsonl", "w")
    t0 = time.perf_counter()
    state: Optional[SlamState] = None
    try:
        for k in range(len(seq)):
            fr = seq[k]
            state = bootstrap(fr, cfg, args.threads) if state is None else process_frame(state, fr)
            st = state.status[-1]
            if st.low_overlap:
                log.warning("frame %d: low overlap with the map, tracking may be unreliable", k)
            if status_file is not None:
                status_file.write(json.dumps(st.to_json()) + "\n")
                status_file.flush()
    finally:
        if status_file is not None:
            status_file.close()
    elapsed = time.perf_counter() - t0
    timestamps = seq.timestamps[:len(state.trajectory)]
    export_trajectory_tum(state.trajectory, timestamps, out / "trajectory.txt")
    export_map_ply(state.map, out / "map.ply")
    write_text_atomic(out / "intrinsics.json", _dump(seq[0].intrinsics.to_dict()))
    metrics = {"n_frames": len(state.trajectory), "n_gaussians": len(state.map), "seconds": round(elapsed, 3),
               "low_overlap_frames": [s.frame_index for s in state.status if s.low_overlap],
               "path_length_m": path_length(state.trajectory) if len(state.trajectory) > 1 else 0.0}
    if seq.ground_truth is not None and len(state.trajectory) >= 2:
        gt = seq.ground_truth[:len(state.trajectory)]
        ate = ate_rmse(state.trajectory, gt)
        gt_len = path_length(gt)
        metrics.update(ate.to_json())
        metrics["gt_path_length_m"] = gt_len
        metrics["ate_percent_of_path"] = 100.0 * ate.rmse / gt_len if gt_len > 0 else None
    metrics["train_view"] = train_view_metrics(state, seq, args.eval_every)
    write_text_atomic(out / "metrics.json", _dump(metrics))
    print(_dump({k: metrics[k] for k in ("n_frames", "n_gaussians", "rmse_m") if k in metrics}), end="")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    try:
        scene = synth_generate(n_gaussians=args.gaussians, n_frames=args.frames, seed=args.seed)
    except (SynthError, ValueError) as e:
        raise CliError("synth_failed", str(e), code=1) from e
    write_simple(synth_render_sequence(scene), args.out)
    export_map_ply(scene.gaussians, Path(args.out) / "scene.ply")
    return 0


# ---------------------------------------------------------------------------
# render


def _read_intrinsics(path: Path) -> CameraIntrinsics:
    if not path.is_file():
        raise CliError("intrinsics_not_found", f"intrinsics file not found: {path}", path=str(path))
    try:
        return CameraIntrinsics.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CliError("invalid_intrinsics", f"{path}: {e}", path=str(path)) from e


def cmd_render(args) -> int:
    map_path = Path(args.map)
    if not map_path.is_file():
        raise CliError("map_not_found", f"map file not found: {map_path}", path=str(map_path))
    try:
        gmap = import_map_ply(map_path)
    except (FormatError, ValueError) as e:
        raise CliError("invalid_map", str(e), path=str(map_path)) from e
    intr = _read_intrinsics(Path(args.intrinsics) if args.intrinsics else map_path.parent / "intrinsics.json")
    poses_path = Path(args.poses)
    if not poses_path.is_file():
        raise CliError("poses_not_found", f"pose file not found: {poses_path}", path=str(poses_path))
    try:
        _, poses = load_trajectory_tum(poses_path)
    except FormatError as e:
        raise CliError("invalid_poses", str(e), path=str(poses_path)) from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, pose in enumerate(poses):
        r = render(gmap, pose, intr, threads=args.threads)
        write_color_png(out / f"color_{k:06d}.png", r.color)
        write_depth_png(out / f"depth_{k:06d}.png", r.depth, DEPTH_SCALE)
        write_gray_png(out / f"silhouette_{k:06d}.png", r.silhouette)
    log.info("rendered %d views of %d gaussians", len(poses), len(gmap))
    return 0


# ---------------------------------------------------------------------------
# eval


def _image_pairs(root: Path, kind: str) -> dict[str, Path]:
    """Images of ``kind`` ("color"/"depth") in either the render or the simple layout."""
    if (root / kind).is_dir():
        return {p.stem: p for p in sorted((root / kind).glob("*.png"))}
    return {p.stem[len(kind) + 1:]: p for p in sorted(root.glob(f"{kind}_*.png"))}


def eval_image_dirs(a: Path, b: Path) -> dict:
    for d in (a, b):
        if not d.is_dir():
            raise CliError("dir_not_found", f"directory not found: {d}", path=str(d))
    ca, cb = _image_pairs(a, "color"), _image_pairs(b, "color")
    keys = sorted(set(ca) & set(cb))
    if not keys:
        raise CliError("no_images", f"no matching color images in {a} and {b}")
    if set(ca) != set(cb):
        raise CliError("image_mismatch", f"{a} has {len(ca)} color images, {b} has {len(cb)}")
    da, db = _image_pairs(a, "depth"), _image_pairs(b, "depth")
    mses, ssims, dl1 = [], [], []
    for key in keys:
        x, y = read_color_png(ca[key]), read_color_png(cb[key])
        if x.shape != y.shape:
            raise CliError("image_mismatch", f"{ca[key].name}: shape {x.shape} vs {y.shape}")
        mses.append(float(np.mean((x - y) ** 2)))
        ssims.append(ssim(x, y))
        if key in da and key in db:
            ga = read_depth_raw(da[key]) / DEPTH_SCALE
            gb = read_depth_raw(db[key]) / DEPTH_SCALE
            valid = gb > 0
            if valid.any():
                dl1.append(depth_l1(ga, gb, valid))
    per_psnr = [math.inf if m == 0 else 10 * math.log10(1 / m) for m in mses]
    return {"n_images": len(keys), "psnr_db": json_float(float(np.mean(per_psnr))),
            "ssim": float(np.mean(ssims)), "depth_l1_cm": float(np.mean(dl1)) if dl1 else None}


def eval_trajectories(est_path: Path, gt_path: Path, alignment: str) -> dict:
    trajs = []
    for p in (est_path, gt_path):
        if not p.is_file():
            raise CliError("trajectory_not_found", f"trajectory file not found: {p}", path=str(p))
        try:
            trajs.append(load_trajectory_tum(p)[1])
        except FormatError as e:
            raise CliError("invalid_trajectory", str(e), path=str(p)) from e
    est, gt = trajs
    try:
        rep = ate_rmse(est, gt, alignment=alignment)
    except ValueError as e:
        raise CliError("trajectory_mismatch", str(e)) from e
    out = rep.to_json()
    out["alignment"] = alignment
    out["gt_path_length_m"] = path_length(gt)
    return out


def cmd_eval(args) -> int:
    if args.est or args.gt:
        if not (args.est and args.gt):
            raise CliError("usage", "--est and --gt must be given together")
        result = eval_trajectories(Path(args.est), Path(args.gt), args.alignment)
    elif args.render_dir or args.gt_dir:
        if not (args.render_dir and args.gt_dir):
            raise CliError("usage", "--render-dir and --gt-dir must be given together")
        result = eval_image_dirs(Path(args.render_dir), Path(args.gt_dir))
    else:
        raise CliError("usage", "give either --est/--gt or --render-dir/--gt-dir")
    print(_dump(result), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsslam", description="Dense RGB-D SLAM with isotropic 3D Gaussians.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run SLAM over a sequence")
    r.add_argument("--dataset", choices=["tum", "simple", "synth-dir"], required=True)
    r.add_argument("--data", required=True, help="sequence directory")
    r.add_argument("--config", help="JSON config (defaults used when omitted)")
    r.add_argument("--out", required=True)
    r.add_argument("--eval-every", type=int, default=5, help="train-view metrics on every M-th frame")
    r.add_argument("--dry-run", action="store_true", help="validate inputs, process no frames")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--status-jsonl", action="store_true", help="stream per-frame status to status.jsonl")
    r.add_argument("--max-frames", type=int, help="process only the first N frames")
    r.add_argument("--stride", type=int, default=1, help="spatial subsampling of the input images")
    r.add_argument("--lenient", action="store_true", help="skip malformed records instead of failing")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="write a synthetic sequence in the simple format")
    s.add_argument("--gaussians", type=int, default=300)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("render", help="render a saved map at TUM-format poses")
    d.add_argument("--map", required=True)
    d.add_argument("--poses", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--intrinsics", help="intrinsics.json (default: next to the map)")
    d.add_argument("--threads", type=int, default=1)
    d.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="print trajectory or image metrics as JSON")
    e.add_argument("--est")
    e.add_argument("--gt")
    e.add_argument("--alignment", choices=["se3", "sim3", "none"], default="se3")
    e.add_argument("--render-dir")
    e.add_argument("--gt-dir")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    for name in ("threads", "eval_every", "max_frames", "stride", "gaussians", "frames"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            return _fail(CliError("usage", f"--{name.replace('_', '-')} must be >= 1"))
    try:
        return args.func(args)
    except CliError as e:
        return _fail(e)
    except (InitializationError, ConfigError, FormatError, OSError) as e:
        return _fail(CliError(type(e).__name__, str(e), code=1))


def _fail(e: CliError) -> int:
    msg = {"error": e.kind, "message": str(e)}
    if e.path is not None:
        msg["path"] = e.path
    print(json.dumps(msg), file=sys.stderr)
    return e.code


if __name__ == "__main__":
    sys.exit(main())
