"""Episode loading and batch assembly for training, evaluation and inference."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import torch

from ..gridcore import flip_spatial, relative_transform
from ..radarnet import voxelize_radar
from ..scenesim import Episode, ego_relative, list_episodes, load_episode
from ..tempenh import MaskChoice


@dataclass(frozen=True)
class SampleRef:
    episode: int
    t: int
    flip_x: bool = False
    flip_y: bool = False


class EpisodeStore:
    def __init__(self, episodes: list[Episode]):
        if not episodes:
            raise ValueError("dataset contains no episodes")
        self.episodes = episodes
        self._images = [np.stack([f.images for f in ep.frames]).astype(np.float32) for ep in episodes]

    @classmethod
    def from_dir(cls, root) -> "EpisodeStore":
        paths = list_episodes(root)
        if not paths:
            raise FileNotFoundError(f"no episodes found under {root}")
        return cls([load_episode(p) for p in paths])

    def __len__(self):
        return len(self.episodes)

    @property
    def cameras(self):
        return self.episodes[0].cameras

    def valid_times(self, num_history: int, stride: int = 1) -> list[tuple[int, int]]:
        return [(e, t) for e, ep in enumerate(self.episodes) for t in range(num_history, len(ep), stride)]


def _radar_seed(ep: Episode, frame: int) -> int:
    return zlib.crc32(f"{ep.seed}:{frame}".encode())


def radar_buffer(ep: Episode, frame: int, ref: int, spec, max_points: int, flip_x=False, flip_y=False):
    """Radar of ``frame`` voxelized in the ego frame of ``ref`` (optionally mirrored)."""
    pts = ep.frames[frame].radar.as_array().copy()
    if frame != ref:
        rel = ego_relative(ep.frames[frame].ego_pose, ep.frames[ref].ego_pose)
        pts[:, :3] = rel.apply(pts[:, :3].astype(np.float64))
    if flip_x:
        pts[:, 0] = -pts[:, 0]
    if flip_y:
        pts[:, 1] = -pts[:, 1]
    return voxelize_radar(pts, spec, max_points, np.random.default_rng(_radar_seed(ep, frame)))


def _flip_labels(labels: np.ndarray, ref: SampleRef) -> np.ndarray:
    if ref.flip_x:
        labels = flip_spatial(labels, "x")
    if ref.flip_y:
        labels = flip_spatial(labels, "y")
    return labels


def build_batch(store: EpisodeStore, refs: list[SampleRef], num_history: int, spec, *,
                mask: MaskChoice | None = None, use_radar: bool = True, max_points: int = 8) -> dict:
    images, transforms, gt_t, gt_tk, radar_t, radar_tk, flips = [], [], [], [], [], [], []
    for r in refs:
        ep = store.episodes[r.episode]
        if r.t < num_history or r.t >= len(ep):
            raise ValueError(f"frame {r.t} needs {num_history} history frames within an episode of {len(ep)}")
        frames = range(r.t - num_history, r.t + 1)
        images.append(store._images[r.episode][r.t - num_history:r.t + 1])
        cur = ep.frames[r.t].ego_pose
        transforms.append(np.stack([relative_transform(ep.frames[j].ego_pose, cur) for j in frames]))
        gt_t.append(_flip_labels(ep.frames[r.t].gt_occupancy.labels, r))
        flips.append((r.flip_x, r.flip_y))
        if use_radar:
            radar_t.append(radar_buffer(ep, r.t, r.t, spec, max_points, r.flip_x, r.flip_y))
        if mask is not None:
            gt_tk.append(_flip_labels(ep.occupancy_at(r.t - mask.k, r.t), r))
            if use_radar:
                radar_tk.append(radar_buffer(ep, r.t - mask.k, r.t, spec, max_points, r.flip_x, r.flip_y))
    batch = {
        "images": torch.from_numpy(np.stack(images)),
        "cur_to_src": torch.from_numpy(np.stack(transforms)).float(),
        "gt_t": torch.from_numpy(np.stack(gt_t).astype(np.int64)),
        "flips": torch.tensor(flips, dtype=torch.bool),
        "radar_t": radar_t if use_radar else None,
        "mask": mask,
    }
    if mask is not None:
        batch["gt_tk"] = torch.from_numpy(np.stack(gt_tk).astype(np.int64))
        batch["radar_tk"] = radar_tk if use_radar else None
    return batch
