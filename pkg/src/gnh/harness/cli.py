"""Command line entry point: ``gnh synth|train|render|eval|bench``.

Every command accepts ``--seed`` (default: $GNH_SEED, else 0) and ``--threads``
(BLAS thread cap; ``--threads 1`` gives bit-reproducible runs).
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from ..numerics.checkpoint import CheckpointError, load_checkpoint
from ..numerics.functional import ConfigError
from ..numerics.tensor import no_grad
from ..fusion_render.renderer import to_image
from ..training.model import GNH, PlanCache
from ..training.trainer import TrainConfig, format_config, load_config, select_sources, train
from .bench import STAGES, bench
from .metrics import compute_metrics
from .scene import SceneError, generate_synthetic_scene, load_scene, save_image, save_scene

CONFIG_NAME = "config.txt"


class CLIError(RuntimeError):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GNH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CLIError(f"GNH_SEED must be an integer, got {env!r}")


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _config(args, seed: int) -> TrainConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "checkpoint", None) and (Path(args.checkpoint).parent / CONFIG_NAME).exists():
        cfg = load_config(Path(args.checkpoint).parent / CONFIG_NAME)
    else:
        cfg = TrainConfig()
    cfg.seed = seed
    if getattr(args, "n_sources", None):
        cfg.n_sources = args.n_sources
    return cfg


def _load_net(args, cfg: TrainConfig) -> GNH:
    net = GNH(cfg.model_config(), np.random.default_rng(cfg.seed))
    if args.checkpoint is None:
        return net
    path = Path(args.checkpoint)
    if not path.exists():
        raise CLIError(f"checkpoint not found: {path}")
    try:
        net.load_state_dict(load_checkpoint(path))
    except (KeyError, ValueError, CheckpointError) as exc:
        raise CLIError(f"checkpoint {path} does not match the model config: {exc}")
    return net


def _scene(args):
    if not args.scene:
        raise CLIError("--scene is required")
    return load_scene(args.scene)


def _targets(scene, split):
    if split == "heldout":
        return [("heldout", i, f) for i, f in enumerate(scene.heldout)]
    if split == "train":
        return [("frame", i, f) for i, f in enumerate(scene.frames)]
    raise CLIError(f"unknown split '{split}'")


def _render_split(net, scene, cfg, split, n_sources):
    """Yield (kind, index, prediction, frame), sources picked by nearest pose."""
    subject = scene.with_heldout()
    cache = PlanCache(subject, net.cfg)
    train_ids = list(range(len(scene.frames)))
    for kind, i, fr in _targets(scene, split):
        idx = i if kind == "frame" else len(scene.frames) + i
        pool = [j for j in train_ids if j != idx]
        sources = select_sources(fr.pose, pool, n_sources, subject)
        with no_grad():
            out = net(cache.source_images(sources), cache.plans(sources, idx))
        yield kind, i, to_image(out), fr


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    seed = _seed(args)
    scene = generate_synthetic_scene(seed, args.frames)
    out = Path(args.out or f"scene-{seed}")
    save_scene(scene, out)
    print(f"wrote {len(scene.frames)} frames + {len(scene.heldout)} held-out to {out}")


def cmd_train(args):
    seed = _seed(args)
    cfg = _config(args, seed)
    if args.steps is not None:
        cfg.steps = args.steps
    scene = _scene(args)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(format_config(cfg))

    def log(row):
        if not args.quiet and (row["step"] % 50 == 0):
            print(f"step {row['step']:5d}  color {row['color']:.4f}  total {row['total']:.4f}", flush=True)

    train(scene.to_subject(), cfg, out, log=log)
    print(f"checkpoint: {out / 'model.ckpt'}\nloss trace: {out / 'loss.csv'}")


def cmd_render(args):
    seed = _seed(args)
    cfg = _config(args, seed)
    net = _load_net(args, cfg)
    scene = _scene(args)
    out = Path(args.out or "renders")
    out.mkdir(parents=True, exist_ok=True)
    for kind, i, img, _ in _render_split(net, scene, cfg, args.split, cfg.n_sources):
        path = out / f"{kind}{i:03d}.png"
        save_image(path, img)
        print(path)


def cmd_eval(args):
    seed = _seed(args)
    cfg = _config(args, seed)
    net = _load_net(args, cfg)
    scene = _scene(args)
    rows = []
    for kind, i, img, fr in _render_split(net, scene, cfg, args.split, cfg.n_sources):
        rep = compute_metrics(img, fr.image)
        rows.append({"frame": f"{kind}{i:03d}", **rep.as_dict()})
    if not rows:
        raise CLIError(f"split '{args.split}' is empty")
    keys = ("psnr", "ssim", "lpips", "average")
    mean = {"frame": "mean", **{k: float(np.mean([r[k] for r in rows])) for k in keys + ("mse",)}}
    rows.append(mean)
    print(f"{'frame':<12}{'PSNR':>9}{'SSIM':>9}{'LPIPS*':>10}{'avg*':>10}")
    for r in rows:
        print(f"{r['frame']:<12}{r['psnr']:9.3f}{r['ssim']:9.4f}{r['lpips']:10.2f}{r['average']:10.2f}")
    print("(* x 1e3; LPIPS is a random-feature proxy)")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["frame", *keys, "mse"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def cmd_bench(args):
    seed = _seed(args)
    cfg = _config(args, seed)
    net = _load_net(args, cfg)
    scene = _scene(args) if args.scene else generate_synthetic_scene(seed)
    n_list = [int(x) for x in args.n_list.split(",")]
    rows = bench(net, scene, n_list, args.repeats)
    cols = STAGES + ("total",)
    print("N  " + "".join(f"{c:>10}" for c in cols) + "   (median ms)")
    for r in rows:
        print(f"{r['n_sources']:<3}" + "".join(f"{1e3 * r[c]:10.2f}" for c in cols))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["n_sources", *cols], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $GNH_SEED or 0)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads; 1 = reproducible")
    common.add_argument("--config", default=None, help="key = value training/model config file")
    common.add_argument("--scene", default=None, help="scene directory (see gnh synth)")
    common.add_argument("--out", default=None, help="output directory or file")

    p = argparse.ArgumentParser(prog="gnh", description="Multi-frame neural human rendering, desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a procedural scene")
    s.add_argument("--frames", type=int, default=12, help="number of training frames")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train and write model.ckpt + loss.csv")
    s.add_argument("--n-sources", type=int, default=None, help="source frames per step")
    s.add_argument("--steps", type=int, default=None, help="override the number of steps")
    s.add_argument("--checkpoint", default=None, help=argparse.SUPPRESS)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("render", cmd_render, "render a split to PNG files"),
                                 ("eval", cmd_eval, "metrics table for a split (CSV with --out)")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint", required=True, help="model checkpoint")
        s.add_argument("--n-sources", type=int, default=None, help="source frames per target")
        s.add_argument("--split", default="heldout", choices=("heldout", "train"))
        s.set_defaults(func=func)

    s = sub.add_parser("bench", parents=[common], help="per-stage timing against the number of sources")
    s.add_argument("--checkpoint", default=None, help="model checkpoint (default: random init)")
    s.add_argument("--n-list", default="1,3,5,7", help="comma-separated source counts")
    s.add_argument("--repeats", type=int, default=5, help="timed runs per N (median reported)")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _threads(args.threads):
            args.func(args)
    except (CLIError, SceneError, ConfigError, FileNotFoundError) as exc:
        print(f"gnh {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
