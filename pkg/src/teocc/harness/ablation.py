"""Ablation runner: trains flag variants over several seeds and checks the
component-ordering claims."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..scenesim import generate_dataset, list_episodes
from .config import TrainConfig
from .data import EpisodeStore
from .train import run_training

log = logging.getLogger(__name__)

VARIANTS: dict[str, dict] = {
    "baseline": dict(use_long=False, use_short=False),
    "long": dict(use_long=True, use_short=False, random_mask=False),
    "long_short": dict(use_long=True, use_short=True, random_mask=False),
    "full": dict(use_long=True, use_short=True, random_mask=True),
    "fused": dict(use_long=True, use_short=True, random_mask=True, fuse_decoders=True),
    "separate_head": dict(use_long=True, use_short=True, random_mask=True, shared_head=False),
    "radar": dict(use_long=True, use_short=True, random_mask=True, use_radar=True),
}
DEFAULT_VARIANTS = tuple(VARIANTS)
NON_INFERIORITY = -0.005  # half a mIoU point on the [0, 1] scale


@dataclass
class VariantResult:
    name: str
    overrides: dict
    mious: list[float] = field(default_factory=list)
    per_class: list[list[float]] = field(default_factory=list)
    step_ms: list[float] = field(default_factory=list)
    train_mem: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.mious))

    @property
    def std(self) -> float:
        return float(np.std(self.mious, ddof=1)) if len(self.mious) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"overrides": self.overrides, "miou": self.mious, "mean": self.mean, "std": self.std,
                "per_class_iou": self.per_class, "train_step_ms": self.step_ms,
                "train_mem_bytes": self.train_mem, "seconds": self.seconds}


@dataclass
class AblationReport:
    variants: dict[str, VariantResult]
    checks: dict[str, dict] = field(default_factory=dict)
    overhead: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"variants": {k: v.to_dict() for k, v in self.variants.items()}, "checks": self.checks,
                "overhead": self.overhead}

    def summary(self) -> str:
        lines = [f"{'variant':<14} {'mIoU mean':>10} {'spread':>8}  per-seed"]
        for name, v in self.variants.items():
            seeds = " ".join(f"{m:.4f}" for m in v.mious)
            lines.append(f"{name:<14} {100 * v.mean:>10.2f} {100 * v.std:>8.2f}  {seeds}")
        for name, c in self.checks.items():
            lines.append(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['detail']}")
        for k, v in self.overhead.items():
            lines.append(f"{k}: {v:.3f}")
        return "\n".join(lines)


def prepare_datasets(config: TrainConfig, root) -> tuple[EpisodeStore, EpisodeStore]:
    """Load ``root/train`` and ``root/val``, generating them from the config when absent."""
    root = Path(root)
    for split, count, seed in (("train", config.train_episodes, config.data_seed),
                               ("val", config.val_episodes, config.data_seed + 1)):
        d = root / split
        if len(list_episodes(d)) if d.is_dir() else 0:
            continue
        log.info("generating %d %s episodes under %s", count, split, d)
        generate_dataset(config.sim, d, count, seed)
    train = EpisodeStore.from_dir(root / "train")
    val = EpisodeStore.from_dir(root / "val")
    return EpisodeStore(train.episodes[:config.train_episodes]), EpisodeStore(val.episodes[:config.val_episodes])


def evaluate_checks(results: dict[str, VariantResult]) -> dict[str, dict]:
    checks = {}

    def have(*names):
        return all(n in results and results[n].mious for n in names)

    if have("baseline", "long", "long_short", "full"):
        b, l, ls, f = (results[n] for n in ("baseline", "long", "long_short", "full"))
        spread = max(b.std, l.std)
        ok = b.mean < l.mean < ls.mean <= f.mean and (l.mean - b.mean) > spread
        checks["component_ordering"] = {
            "passed": bool(ok),
            "detail": (f"baseline {b.mean:.4f} < long {l.mean:.4f} < long+short {ls.mean:.4f} <= random {f.mean:.4f}; "
                       f"long-baseline {l.mean - b.mean:+.4f} vs spread {spread:.4f}"),
        }
    if have("full", "fused"):
        d = results["full"].mean - results["fused"].mean
        checks["independent_vs_fused"] = {"passed": bool(d > NON_INFERIORITY),
                                          "detail": f"independent - fused = {100 * d:+.2f} points"}
    if have("full", "separate_head"):
        d = results["full"].mean - results["separate_head"].mean
        checks["shared_vs_separate"] = {"passed": bool(d > NON_INFERIORITY),
                                        "detail": f"shared - separate = {100 * d:+.2f} points"}
    if have("full", "radar"):
        d = results["radar"].mean - results["full"].mean
        checks["radar_benefit"] = {"passed": bool(d > 0), "detail": f"radar on - off = {100 * d:+.2f} points"}
    return checks


def overhead_ratios(results: dict[str, VariantResult]) -> dict[str, float]:
    if not ("baseline" in results and "full" in results):
        return {}
    b, f = results["baseline"], results["full"]
    return {"train_memory_ratio": float(np.mean(f.train_mem) / np.mean(b.train_mem)),
            "train_time_ratio": float(np.mean(f.step_ms) / np.mean(b.step_ms))}


def run_ablation(base_config: TrainConfig, variants: Sequence[str] = DEFAULT_VARIANTS, seeds: Sequence[int] = (0, 1, 2),
                 train_store: EpisodeStore | None = None, val_store: EpisodeStore | None = None, data_root=None,
                 out_dir=None, progress: Callable[[str], None] | None = None) -> AblationReport:
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    if train_store is None or val_store is None:
        if data_root is None:
            raise ValueError("pass train/val stores or a data_root to generate them in")
        train_store, val_store = prepare_datasets(base_config, data_root)
    results = {}
    for name in variants:
        res = VariantResult(name, VARIANTS[name])
        for seed in seeds:
            cfg = base_config.updated(seed=int(seed), **VARIANTS[name])
            t0 = time.perf_counter()
            _, rep = run_training(cfg, None, train_store, val_store)
            res.seconds.append(time.perf_counter() - t0)
            res.mious.append(rep.miou)
            res.per_class.append(rep.per_class_iou)
            res.step_ms.append(rep.wall_ms["train_step_median"])
            res.train_mem.append(rep.peak_mem_bytes["train_total"])
            msg = f"{name} seed {seed}: mIoU {rep.miou:.4f} ({res.seconds[-1]:.0f} s)"
            log.info(msg)
            if progress is not None:
                progress(msg)
        results[name] = res
    report = AblationReport(results, evaluate_checks(results), overhead_ratios(results))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "ablation.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    return report
