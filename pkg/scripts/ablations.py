"""Run the synthetic sequence under each tracking ablation and print an ATE table.

    python3 scripts/ablations.py [--frames 20] [--seed 7] [--holes 0.2] [--only NAME ...]
"""
import argparse
import json
import time

from gsslam.core import SlamConfig
from gsslam.eval import ate_rmse, path_length
from gsslam.io.synth import add_depth_holes, synth_generate, synth_render_sequence
from gsslam.slam import run_slam

VARIANTS = {
    "full": {},
    "no_silhouette": {"use_silhouette_mask": False},
    "no_propagation": {"use_velocity_propagation": False},
    "depth_only": {"tracking_use_color": False},
    "holes_sil_0.99": {"sil_thresh_tracking": 0.99},
    "holes_sil_0.5": {"sil_thresh_tracking": 0.5},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--holes", type=float, default=0.2)
    ap.add_argument("--only", nargs="*")
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args()

    src = synth_render_sequence(synth_generate(n_frames=args.frames, seed=args.seed))
    holed = add_depth_holes(src, args.holes)
    length = path_length(src.ground_truth)
    results = {}
    for name, overrides in VARIANTS.items():
        if args.only and name not in args.only:
            continue
        seq = holed if name.startswith("holes") else src
        t0 = time.perf_counter()
        state = run_slam(seq, SlamConfig(**overrides))
        rep = ate_rmse(state.trajectory, seq.ground_truth)
        results[name] = {"ate_m": rep.rmse, "ate_pct_path": 100 * rep.rmse / length,
                         "seconds": time.perf_counter() - t0}
        print(f"{name:16s} ATE {rep.rmse * 1e3:8.3f} mm  {100 * rep.rmse / length:6.2f}% of path  "
              f"{results[name]['seconds']:.0f}s", flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
