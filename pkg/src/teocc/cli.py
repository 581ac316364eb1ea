"""Command-line entry point: ``teocc <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .container import read_tensor, write_tensor
from .gridcore import GridSpec


def _cmd_gen_data(args) -> int:
    from .harness.config import load_config
    from .scenesim import generate_dataset

    cfg = load_config(args.config)
    paths = generate_dataset(cfg.sim, args.out, args.episodes, args.seed)
    print(f"wrote {len(paths)} episodes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .harness.config import dump_config, load_config
    from .harness.train import run_training

    cfg = load_config(args.config)
    changes = {}
    if args.data:
        changes["dataset"] = args.data
    if args.val_data:
        changes["val_dataset"] = args.val_data
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = cfg.updated(**changes)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    dump_config(cfg, Path(args.out) / "config.yaml")
    _, report = run_training(cfg, args.out)
    line = f"trained {cfg.steps} steps -> {args.out}/checkpoint"
    if report.per_class_iou:
        line += f"; val mIoU {report.miou:.4f}"
    print(line)
    return 0


def _cmd_eval(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.data import EpisodeStore
    from .harness.train import evaluate

    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(ckpt, EpisodeStore.from_dir(args.data), ckpt.config, stride=args.stride)
    names = ckpt.config.class_names
    for name, v in zip(names, report.per_class_iou):
        print(f"{name:<12} {v:.4f}")
    print(f"{'mIoU':<12} {report.miou:.4f}  ({report.num_frames} frames)")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=1))
    return 0


def _cmd_ablate(args) -> int:
    from .harness.ablation import run_ablation
    from .harness.config import load_config

    cfg = load_config(args.config)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    report = run_ablation(cfg, variants, list(range(args.seeds)), data_root=args.data, out_dir=args.out,
                          progress=print)
    print(report.summary())
    return 0 if all(c["passed"] for c in report.checks.values()) else 1


def _cmd_infer(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.train import infer
    from .scenesim import load_episode

    ckpt = load_checkpoint(args.checkpoint)
    logits = infer(ckpt, load_episode(args.episode), args.frame)
    write_tensor(args.out, logits.numpy().astype(np.float32))
    sidecar = {"grid": ckpt.config.grid_spec().to_dict(), "class_names": list(ckpt.config.class_names),
               "frame": args.frame, "episode": str(args.episode)}
    Path(str(args.out) + ".json").write_text(json.dumps(sidecar, indent=1))
    labels = logits.argmax(0).numpy()
    counts = np.bincount(labels.ravel(), minlength=logits.shape[0])
    print(" ".join(f"{n}={c}" for n, c in zip(ckpt.config.class_names, counts)))
    return 0


def _cmd_export_viz(args) -> int:
    from .harness.export import export_voxels

    sidecar = Path(str(args.input) + ".json")
    if args.config:
        from .harness.config import load_config

        spec = load_config(args.config).grid_spec()
    elif sidecar.exists():
        spec = GridSpec.from_dict(json.loads(sidecar.read_text())["grid"])
    else:
        raise FileNotFoundError(f"no grid description: {sidecar} is missing and --config was not given")
    n = export_voxels(read_tensor(args.input), spec, args.out)
    print(f"wrote {n} voxels to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teocc", description="Radar-camera occupancy with temporal enhancement.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic episodes")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="training episodes (overrides config.dataset)")
    t.add_argument("--val-data", help="validation episodes (overrides config.val_dataset)")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--stride", type=int)
    e.add_argument("--json", help="also write the report as JSON")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("ablate", help="run the ablation variants")
    a.add_argument("--config", required=True)
    a.add_argument("--variants", default="baseline,long,long_short,full,fused,separate_head,radar")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--data", required=True, help="dataset root with train/ and val/ (generated if missing)")
    a.add_argument("--out")
    a.set_defaults(func=_cmd_ablate)

    i = sub.add_parser("infer", help="predict occupancy for one frame")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--episode", required=True)
    i.add_argument("--frame", type=int, required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=_cmd_infer)

    x = sub.add_parser("export-viz", help="export a prediction or label blob as an ASCII voxel cloud")
    x.add_argument("--in", dest="input", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--config", help="take the grid from this config instead of the sidecar")
    x.set_defaults(func=_cmd_export_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"teocc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
