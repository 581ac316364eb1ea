"""Checkpoints: a directory holding ``checkpoint.json`` and one TEOC blob per tensor."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..container import read_tensor, write_tensor

CHECKPOINT_VERSION = "teocc-checkpoint/1"


@dataclass
class Checkpoint:
    config: "TrainConfig"  # noqa: F821
    state: dict[str, torch.Tensor]
    step: int
    rng_state: dict

    def build_model(self, cameras=None):
        from ..model import TEOccModel

        cameras = cameras if cameras is not None else self.config.sim.cameras()
        model = TEOccModel(self.config.model_spec(), cameras, self.config.grid_spec())
        model.load_state_dict(self.state)
        model.eval()
        return model


def _blob_name(key: str) -> str:
    return key.replace("/", "_") + ".teoc"


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    index = {}
    for key, value in ckpt.state.items():
        arr = value.detach().cpu().numpy()
        if arr.dtype.kind == "f" and arr.dtype != np.float32:
            raise ValueError(f"{key}: only float32 parameters can be stored losslessly")
        name = _blob_name(key)
        write_tensor(d / "tensors" / name, arr)
        index[key] = {"file": name, "dtype": str(value.dtype).replace("torch.", "")}
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": ckpt.step,
        "config": ckpt.config.to_flat(),
        "rng_state": ckpt.rng_state,
        "tensors": index,
    }
    with open(d / "checkpoint.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return d


def load_checkpoint(directory) -> Checkpoint:
    from .config import config_from_flat

    d = Path(directory)
    path = d / "checkpoint.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    with open(path) as fh:
        meta = json.load(fh)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    state = {}
    for key, entry in meta["tensors"].items():
        arr = read_tensor(d / "tensors" / entry["file"])
        state[key] = torch.from_numpy(arr).to(getattr(torch, entry["dtype"]))
    return Checkpoint(config_from_flat(meta["config"]), state, int(meta["step"]), meta["rng_state"])
