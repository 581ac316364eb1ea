"""Training loop, evaluation and inference."""
from __future__ import annotations

import json
import logging
import math
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..gridcore import confusion_matrix, iou_from_confusion, miou_from_confusion
from ..model import TEOccModel
from ..scenesim import Episode
from ..tempenh import select_mask_index
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data import EpisodeStore, SampleRef, build_batch

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    per_class_iou: list[float]
    miou: float
    confusion: list[list[int]] = field(default_factory=list)
    loss_curve: list[dict] = field(default_factory=list)
    wall_ms: dict[str, float] = field(default_factory=dict)
    peak_mem_bytes: dict[str, int] = field(default_factory=dict)
    num_frames: int = 0

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "per_class_iou": self.per_class_iou,
            "confusion": self.confusion,
            "loss_curve": self.loss_curve,
            "wall_ms": self.wall_ms,
            "peak_mem_bytes": self.peak_mem_bytes,
            "num_frames": self.num_frames,
        }


class SavedTensorMeter:
    """Bytes held for backward during a forward pass (unique storages)."""

    def __init__(self):
        self.bytes = 0
        self._seen = set()

    def _pack(self, t: torch.Tensor):
        try:
            storage = t.untyped_storage()
            key = storage.data_ptr()
            if key not in self._seen:
                self._seen.add(key)
                self.bytes += storage.nbytes()
        except (RuntimeError, NotImplementedError):
            pass
        return t

    def __enter__(self):
        self._ctx = torch.autograd.graph.saved_tensors_hooks(self._pack, lambda t: t)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)


def build_model(config: TrainConfig, cameras) -> TEOccModel:
    torch.manual_seed(config.seed)
    return TEOccModel(config.model_spec(), cameras, config.grid_spec())


def make_optimizer(model: TEOccModel, config: TrainConfig):
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    if config.lr_schedule == "cosine" and config.steps > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.steps)
    else:
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda _: 1.0)
    return opt, sched


def sample_batch(store: EpisodeStore, config: TrainConfig, rng: np.random.Generator) -> dict:
    mask = select_mask_index(config.num_history, rng, config.random_mask) if config.te_enabled else None
    refs = []
    for _ in range(config.batch_size):
        e = int(rng.integers(len(store)))
        t = int(rng.integers(config.num_history, len(store.episodes[e])))
        fx, fy = (rng.random(2) < 0.5) if config.flip_aug else (False, False)
        refs.append(SampleRef(e, t, bool(fx), bool(fy)))
    return build_batch(store, refs, config.num_history, config.grid_spec(), mask=mask,
                       use_radar=config.use_radar, max_points=config.radar_max_points)


def _class_weights(config: TrainConfig):
    return None if config.class_weights is None else torch.tensor(config.class_weights, dtype=torch.float32)


def train_step(model: TEOccModel, batch: dict, optimizer, config: TrainConfig, meter: SavedTensorMeter | None = None) -> dict:
    """One gradient-descent update on the combined objective. Returns scalar losses."""
    if config.te_enabled and config.num_history < 2:
        raise ValueError("temporal enhancement needs num_history >= 2")
    model.train()
    optimizer.zero_grad(set_to_none=True)
    if meter is not None:
        with meter:
            out = model.forward_train(batch, config.loss_weights, _class_weights(config), config.depth_loss_weight)
    else:
        out = model.forward_train(batch, config.loss_weights, _class_weights(config), config.depth_loss_weight)
    out["total"].backward()
    optimizer.step()
    keys = ("main", "long", "short", "total") + (("depth",) if "depth" in out else ())
    return {k: float(out[k].detach()) for k in keys} | {"logits": out["logits"].detach()}


def _param_state_bytes(model: TEOccModel) -> int:
    # parameter + gradient + two Adam moments
    return 4 * sum(p.numel() * p.element_size() for p in model.parameters())


def run_training(config: TrainConfig, out_dir=None, train_store: EpisodeStore | None = None,
                 val_store: EpisodeStore | None = None) -> tuple[Checkpoint, MetricsReport]:
    if train_store is None:
        if not config.dataset:
            raise FileNotFoundError("config.dataset is not set")
        if not Path(config.dataset).is_dir():
            raise FileNotFoundError(f"dataset directory {config.dataset!r} does not exist")
        train_store = EpisodeStore.from_dir(config.dataset)
    if val_store is None and config.val_dataset:
        val_store = EpisodeStore.from_dir(config.val_dataset)
    model = build_model(config, train_store.cameras)
    opt, sched = make_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    metrics_file = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        metrics_file = open(Path(out_dir) / "metrics.ndjson", "w")
    curve, step_ms = [], []
    peak_saved = 0
    t_start = time.perf_counter()
    try:
        for step in range(1, config.steps + 1):
            t0 = time.perf_counter()
            batch = sample_batch(train_store, config, rng)
            meter = SavedTensorMeter()
            losses = train_step(model, batch, opt, config, meter)
            sched.step()
            step_ms.append(1000 * (time.perf_counter() - t0))
            peak_saved = max(peak_saved, meter.bytes)
            losses.pop("logits")
            curve.append({"step": step, **losses})
            if not all(math.isfinite(v) for v in losses.values()):
                raise FloatingPointError(f"non-finite loss at step {step}: {losses}")
            record = None
            if config.log_every and step % config.log_every == 0:
                record = {"step": step, "losses": losses, "wall_ms": float(np.sum(step_ms)),
                          "peak_mem_bytes": peak_saved + _param_state_bytes(model)}
            if val_store is not None and config.eval_every and step % config.eval_every == 0:
                rep = evaluate(model, val_store, config)
                record = (record or {"step": step, "losses": losses}) | {"miou": rep.miou, "per_class_iou": rep.per_class_iou}
                log.info("step %d val mIoU %.4f", step, rep.miou)
            if record is not None and metrics_file is not None:
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()
    finally:
        if metrics_file is not None:
            metrics_file.close()
    train_ms = 1000 * (time.perf_counter() - t_start)
    ckpt = Checkpoint(config, {k: v.detach().clone() for k, v in model.state_dict().items()},
                      config.steps, rng.bit_generator.state)
    if val_store is not None:
        report = evaluate(model, val_store, config)
    else:
        report = MetricsReport([], float("nan"))
    report.loss_curve = curve
    report.wall_ms = {"train_total": train_ms, "train_step_mean": float(np.mean(step_ms)) if step_ms else 0.0,
                      "train_step_median": float(np.median(step_ms)) if step_ms else 0.0}
    report.peak_mem_bytes = {"train_saved_tensors": peak_saved,
                             "train_model_state": _param_state_bytes(model),
                             "train_total": peak_saved + _param_state_bytes(model),
                             "process_rss_peak": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024}
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "checkpoint")
        with open(Path(out_dir) / "report.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    return ckpt, report


def _as_model(model_or_ckpt, cameras=None) -> TEOccModel:
    if isinstance(model_or_ckpt, TEOccModel):
        return model_or_ckpt
    return model_or_ckpt.build_model(cameras)


def evaluate(model_or_ckpt, store: EpisodeStore, config: TrainConfig | None = None, stride: int | None = None,
             batch_size: int = 4) -> MetricsReport:
    """Pooled (micro-averaged) confusion over every evaluated frame, then IoU."""
    if store is None or len(store) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model = _as_model(model_or_ckpt, store.cameras)
    config = config or model_or_ckpt.config
    stride = stride or config.eval_stride
    refs = [SampleRef(e, t) for e, t in store.valid_times(config.num_history, stride)]
    if not refs:
        raise ValueError("no episode is long enough to evaluate")
    k = len(config.class_names)
    cm = np.zeros((k, k), dtype=np.int64)
    was_training = model.training
    model.eval()
    for i in range(0, len(refs), batch_size):
        batch = build_batch(store, refs[i:i + batch_size], config.num_history, config.grid_spec(),
                            use_radar=config.use_radar, max_points=config.radar_max_points)
        pred = model.infer(batch).argmax(1).numpy()
        cm += confusion_matrix(pred, batch["gt_t"].numpy(), k)
    model.train(was_training)
    iou = iou_from_confusion(cm)
    return MetricsReport([float(v) for v in iou], miou_from_confusion(cm), cm.tolist(), num_frames=len(refs))


def infer(model_or_ckpt, episode: Episode, t: int, max_points: int | None = None) -> torch.Tensor:
    """Main-branch logits (K, X, Y, Z) for frame ``t`` of ``episode``."""
    if max_points is None:
        max_points = model_or_ckpt.config.radar_max_points if isinstance(model_or_ckpt, Checkpoint) else 8
    model = _as_model(model_or_ckpt, episode.cameras)
    n = model.spec.num_history
    if t < n or t >= len(episode):
        raise ValueError(f"frame {t} needs {n} preceding frames (episode has {len(episode)})")
    if [c.to_dict() for c in episode.cameras] != [c.to_dict() for c in model.cameras]:
        raise ValueError("episode camera rig differs from the model's")
    store = EpisodeStore([episode])
    model.eval()
    batch = build_batch(store, [SampleRef(0, t)], n, model.grid, use_radar=model.spec.use_radar,
                        max_points=max_points)
    return model.infer(batch)[0]
