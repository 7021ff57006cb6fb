"""Command-line entry points: make-scene, train, render, eval, export-traj.

Every command is deterministic under a fixed seed and exits nonzero on
error. Train options may come from a JSON config file (--config), with
explicit flags taking precedence. BLAS thread count is controlled by the
standard OPENBLAS_NUM_THREADS / OMP_NUM_THREADS environment variables;
no other environment is read.
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .evaluate import (evaluate_dataset, export_trajectories, render_image_at,
                       write_image)
from .fieldnet import ModelConfig
from .renderer import Camera
from .scenegen import export_dataset, load_dataset, make_preset, make_scene
from .trainer import (TrainConfig, load_checkpoint, run_training, split_frames)

log = logging.getLogger(__name__)


def _cmd_make_scene(args):
    spec = make_preset(args.preset, T=args.frames)
    ds = make_scene(spec, seed=args.seed)
    export_dataset(ds, args.out)
    print(json.dumps({
        "preset": ds.preset, "T": ds.T, "width": ds.width, "height": ds.height,
        "near": ds.near, "far": ds.far,
        "mask_pixels": [int(m.sum()) for m in ds.masks],
        "probes": len(ds.probes), "out": args.out,
    }, indent=1))
    return 0


def _train_config(args):
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    cfg = TrainConfig.from_dict(base) if base else TrainConfig()
    overrides = {
        "epochs": args.epochs, "seed": args.seed, "n_samples": args.n_samples,
        "steps_per_epoch": args.steps_per_epoch, "lr": args.lr,
        "batch_uniform": args.batch_uniform, "batch_mask": args.batch_mask,
        "holdout_every": args.holdout_every, "shard_rays": args.shard_rays,
        "checkpoint_every": args.checkpoint_every,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.freeze_phi:
        cfg.freeze_phi = True
    return cfg


def _cmd_train(args):
    ds = load_dataset(args.data)
    cfg = _train_config(args)
    model_cfg = None
    if not args.resume:
        mk = {"T": ds.T, "init_seed": cfg.seed}
        if args.k is not None:
            mk["K"] = args.k
        else:
            mk["K"] = ds.T - 1 if ds.T <= 32 else 16
        for name, val in (("trunk_width", args.width), ("trunk_depth", args.depth),
                          ("embed_dim", args.embed_dim),
                          ("color_width", args.color_width)):
            if val is not None:
                mk[name] = val
        model_cfg = ModelConfig(**mk)
    os.makedirs(args.out, exist_ok=True)
    log_file = os.path.join(args.out, "train_log.ndjson")
    net, _, steps = run_training(ds, cfg, model_cfg=model_cfg, out_dir=args.out,
                                 resume=args.resume, log_file=log_file)
    print(json.dumps({"out": args.out, "steps": steps,
                      "checkpoint": os.path.join(args.out, "final.ckpt")}))
    return 0


def _interp_pose(poses, idx, alpha):
    """Pose at fractional index: lerp translation, re-orthonormalized lerp
    of the rotation (adequate for the small rotations in these scenes)."""
    if alpha == 0.0 or idx + 1 >= len(poses):
        return poses[idx]
    a, b = poses[idx], poses[idx + 1]
    r = (1 - alpha) * a[:, :3] + alpha * b[:, :3]
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    t = (1 - alpha) * a[:, 3] + alpha * b[:, 3]
    return np.hstack([r, t[:, None]])


def _cmd_render(args):
    net, _, tcfg, _, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if args.pose_json:
        pose = np.asarray(json.loads(args.pose_json), dtype=np.float64).reshape(3, 4)
    else:
        pose = _interp_pose(ds.poses, args.pose_index, args.pose_interp)
    it = ds.intrinsics
    cam = Camera(fx=it["fx"], fy=it["fy"], cx=it["cx"], cy=it["cy"],
                 width=ds.width, height=ds.height, pose=pose,
                 near=ds.near, far=ds.far)
    T = net.cfg.T
    if not args.extrapolate and not (0 <= args.time <= T - 1):
        raise ValueError(
            f"render time {args.time} outside [0, {T - 1}]; use --extrapolate")
    img = render_image_at(net, cam, args.time, ds.ndc(),
                          n_samples=args.n_samples or tcfg.n_samples,
                          t_query=args.t_query, extrapolate=args.extrapolate)
    write_image(args.out, img)
    print(json.dumps({"out": args.out, "time": args.time,
                      "t_query": args.t_query if args.t_query is not None
                      else args.time}))
    return 0


def _cmd_eval(args):
    net, _, tcfg, _, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if args.frames == "holdout":
        _, frames = split_frames(ds.T, tcfg.holdout_every or 4)
    elif args.frames == "all":
        frames = list(range(ds.T))
    else:
        frames = [int(x) for x in args.frames.split(",")]
    report = evaluate_dataset(net, ds, frames=frames,
                              n_samples=args.n_samples or tcfg.n_samples)
    text = json.dumps(report, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text)
    return 0


def _cmd_export_traj(args):
    net, _, tcfg, _, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    doc = export_trajectories(net, ds, t0=args.t0, grid=args.grid,
                              mask_only=args.mask_only,
                              n_samples=args.n_samples or tcfg.n_samples)
    with open(args.out, "w") as f:
        json.dump(doc, f)
    print(json.dumps({"out": args.out, "points": len(doc["points"])}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="trajfield")
    sub = p.add_subparsers(dest="command", required=True)

    ms = sub.add_parser("make-scene", help="generate a synthetic dataset")
    ms.add_argument("--preset", required=True)
    ms.add_argument("--frames", type=int, default=24)
    ms.add_argument("--seed", type=int, default=0)
    ms.add_argument("--out", required=True)
    ms.set_defaults(fn=_cmd_make_scene)

    tr = sub.add_parser("train", help="train a field on a dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="JSON file of TrainConfig fields")
    tr.add_argument("--resume", help="checkpoint to resume from")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--k", type=int)
    tr.add_argument("--n-samples", type=int)
    tr.add_argument("--width", type=int, help="trunk width")
    tr.add_argument("--depth", type=int, help="trunk depth")
    tr.add_argument("--embed-dim", type=int)
    tr.add_argument("--color-width", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--steps-per-epoch", type=int)
    tr.add_argument("--batch-uniform", type=int)
    tr.add_argument("--batch-mask", type=int)
    tr.add_argument("--holdout-every", type=int)
    tr.add_argument("--shard-rays", type=int)
    tr.add_argument("--checkpoint-every", type=int)
    tr.add_argument("--freeze-phi", action="store_true")
    tr.set_defaults(fn=_cmd_train)

    rd = sub.add_parser("render", help="render one frame from a checkpoint")
    rd.add_argument("--checkpoint", required=True)
    rd.add_argument("--data", required=True)
    rd.add_argument("--time", type=float, required=True)
    rd.add_argument("--t-query", type=float,
                    help="radiance time; defaults to --time")
    rd.add_argument("--pose-index", type=int, default=0)
    rd.add_argument("--pose-interp", type=float, default=0.0)
    rd.add_argument("--pose-json", help="explicit 3x4 pose, 12 JSON numbers")
    rd.add_argument("--n-samples", type=int)
    rd.add_argument("--extrapolate", action="store_true")
    rd.add_argument("--out", required=True)
    rd.set_defaults(fn=_cmd_render)

    ev = sub.add_parser("eval", help="PSNR/SSIM report on dataset frames")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--frames", default="holdout",
                    help="'holdout', 'all', or comma-separated indices")
    ev.add_argument("--n-samples", type=int)
    ev.add_argument("--out")
    ev.set_defaults(fn=_cmd_eval)

    ex = sub.add_parser("export-traj", help="export per-pixel trajectories")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--t0", type=int, default=0)
    ex.add_argument("--grid", type=int, default=8)
    ex.add_argument("--mask-only", action="store_true")
    ex.add_argument("--n-samples", type=int)
    ex.add_argument("--out", required=True)
    ex.set_defaults(fn=_cmd_export_traj)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # CLI contract: nonzero status, message on stderr
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
