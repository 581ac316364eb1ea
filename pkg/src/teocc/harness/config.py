"""Training configuration and the flat key-value config file format.

Config files are flat YAML mappings. Every key is either a :class:`TrainConfig`
field or a :class:`~teocc.scenesim.SimConfig` field; anything else is an error.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..gridcore import DEFAULT_CLASS_NAMES, GridSpec, make_grid_spec
from ..model import ModelSpec
from ..scenesim import SimConfig

_SIM_SKIP = {"grid", "class_names"}
SIM_KEYS = tuple(f.name for f in fields(SimConfig) if f.name not in _SIM_SKIP)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str | None = None
    val_dataset: str | None = None
    x_range: tuple[float, float] = (-10.0, 10.0)
    y_range: tuple[float, float] = (-10.0, 10.0)
    z_range: tuple[float, float] = (-0.8, 2.4)
    voxel_size: float = 0.4
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    num_history: int = 5
    img_channels: int = 32
    radar_channels: int = 16
    fused_channels: int = 64
    head_hidden: int = 64
    encoder_hidden: int = 16
    num_depth_bins: int = 16
    depth_range: tuple[float, float] = (1.0, 17.0)
    decoder_channels: tuple[int, int, int] = (32, 64, 128)
    decoder_blocks: int = 2
    radar_max_points: int = 8
    use_radar: bool = True
    use_long: bool = True
    use_short: bool = True
    random_mask: bool = True
    shared_head: bool = True
    fuse_decoders: bool = False
    flip_aug: bool = True
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    class_weights: tuple[float, ...] | None = None
    depth_loss_weight: float = 0.0
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    steps: int = 2000
    batch_size: int = 2
    seed: int = 0
    eval_every: int = 0
    eval_stride: int = 1
    log_every: int = 50
    train_episodes: int = 200
    val_episodes: int = 40
    data_seed: int = 1234
    sim: SimConfig = field(default_factory=SimConfig, repr=False)

    def __post_init__(self):
        self.sim = replace(self.sim, grid=self.grid_spec(), class_names=tuple(self.class_names))
        self.validate()

    def grid_spec(self) -> GridSpec:
        try:
            return make_grid_spec(self.x_range, self.y_range, self.z_range, self.voxel_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def te_enabled(self) -> bool:
        return self.use_long or self.use_short

    def validate(self) -> None:
        if self.te_enabled and self.num_history < 2:
            raise ConfigError("temporal enhancement needs num_history >= 2")
        if self.fuse_decoders and not (self.use_long and self.use_short):
            raise ConfigError("fuse_decoders needs use_long and use_short")
        if self.sim.num_frames < self.num_history + 1:
            raise ConfigError(f"episodes of {self.sim.num_frames} frames cannot supply {self.num_history + 1}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.class_weights is not None and len(self.class_weights) != len(self.class_names):
            raise ConfigError("class_weights needs one entry per class")
        if self.flip_aug:
            g = self.grid_spec()
            if g.x_range[0] != -g.x_range[1] or g.y_range[0] != -g.y_range[1]:
                raise ConfigError("flip augmentation needs a grid symmetric in x and y")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            num_classes=len(self.class_names),
            num_history=self.num_history,
            img_channels=self.img_channels,
            radar_channels=self.radar_channels,
            fused_channels=self.fused_channels,
            head_hidden=self.head_hidden,
            encoder_hidden=self.encoder_hidden,
            num_depth_bins=self.num_depth_bins,
            depth_range=tuple(self.depth_range),
            decoder_channels=tuple(self.decoder_channels),
            decoder_blocks=self.decoder_blocks,
            use_radar=self.use_radar,
            use_long=self.use_long,
            use_short=self.use_short,
            shared_head=self.shared_head,
            fuse_decoders=self.fuse_decoders,
        )

    def to_flat(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "sim"}
        for k in SIM_KEYS:
            d[k] = getattr(self.sim, k)
        return json.loads(json.dumps(d))

    def updated(self, **changes) -> "TrainConfig":
        return config_from_flat({**self.to_flat(), **changes})


def _coerce(name: str, value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"key {name!r} must be a boolean, got {value!r}")
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, list):
        return tuple(value)
    return value


def config_from_flat(d: dict) -> TrainConfig:
    train_names = {f.name: f for f in fields(TrainConfig) if f.name != "sim"}
    unknown = sorted(set(d) - set(train_names) - set(SIM_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base_train, base_sim = TrainConfig.__dataclass_fields__, SimConfig()
    train_kw, sim_kw = {}, {}
    for k, v in d.items():
        if isinstance(v, dict):
            raise ConfigError(f"key {k!r}: nested mappings are not allowed (config is flat)")
        if k in train_names:
            default = base_train[k].default
            train_kw[k] = _coerce(k, v, default if default is not None else v)
        else:
            sim_kw[k] = _coerce(k, v, getattr(base_sim, k))
    try:
        sim = replace(SimConfig(), **sim_kw)
        return TrainConfig(**train_kw, sim=sim)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat mapping of key: value")
    return config_from_flat(data)


def dump_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_flat(), sort_keys=False))
