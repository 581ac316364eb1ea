"""Temporal enhancement: random frame masking and the independent long-term
(ResNet-3D + FPN-3D) and short-term (two 3D convs) decoders."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .camnet import group_norm


@dataclass(frozen=True)
class MaskChoice:
    k: int
    index: int  # position of V_{t-k} in [V_{t-N}, ..., V_t]


def select_mask_index(num_history: int, rng: np.random.Generator, random_mask: bool = True) -> MaskChoice:
    """Draw k uniformly from {1, ..., N-1}; ``random_mask=False`` always masks t-1."""
    if num_history < 2:
        raise ValueError(f"masking needs at least 2 history frames, got N={num_history}")
    k = int(rng.integers(1, num_history)) if random_mask else 1
    return MaskChoice(k, num_history - k)


def conv3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv3d:
    return nn.Conv3d(in_ch, out_ch, 3, stride=stride, padding=1)


class BasicBlock3d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = conv3(in_channels, out_channels, stride)
        self.norm1 = group_norm(out_channels)
        self.conv2 = conv3(out_channels, out_channels)
        self.norm2 = group_norm(out_channels)
        self.project = None
        if stride != 1 or in_channels != out_channels:
            self.project = nn.Sequential(
                nn.Conv3d(in_channels, out_channels, 1, stride=stride), group_norm(out_channels)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"BasicBlock3d expects {self.in_channels} channels, got {x.shape[1]}")
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        skip = x if self.project is None else self.project(x)
        return F.relu(out + skip)


class ResNet3d(nn.Module):
    """Three stages of BasicBlocks with strides (1, 2, 2); returns every stage output."""

    def __init__(self, in_channels: int, channels: Sequence[int] = (32, 64, 128), blocks_per_stage: int = 2):
        super().__init__()
        if len(channels) != 3:
            raise ValueError("ResNet3d has exactly three stages")
        self.in_channels = in_channels
        stages = []
        prev = in_channels
        for ch, stride in zip(channels, (1, 2, 2)):
            blocks = [BasicBlock3d(prev, ch, stride)]
            blocks += [BasicBlock3d(ch, ch) for _ in range(blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            prev = ch
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"ResNet3d expects {self.in_channels} input channels, got {x.shape[1]}")
        if min(x.shape[-3:]) < 4:
            raise ValueError(f"spatial dims {tuple(x.shape[-3:])} too small for two halvings")
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


class FPN3d(nn.Module):
    """Trilinear upsample of all scales to full resolution, concat, conv + norm + ReLU."""

    def __init__(self, in_channels: Sequence[int], out_channels: int):
        super().__init__()
        self.in_channels = tuple(in_channels)
        self.conv = conv3(sum(in_channels), out_channels)
        self.norm = group_norm(out_channels)

    @staticmethod
    def upsample(x: torch.Tensor, size) -> torch.Tensor:
        if tuple(x.shape[-3:]) == tuple(size):
            return x
        return F.interpolate(x, size=tuple(size), mode="trilinear", align_corners=False)

    def forward(self, feats: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(feats) != len(self.in_channels):
            raise ValueError(f"expected {len(self.in_channels)} scales, got {len(feats)}")
        full = tuple(feats[0].shape[-3:])
        for i, f in enumerate(feats):
            expect = tuple(-(-n // 2**i) for n in full)
            if tuple(f.shape[-3:]) != expect or f.shape[1] != self.in_channels[i]:
                raise ValueError(f"scale {i} has shape {tuple(f.shape[1:])}, expected ({self.in_channels[i]}, {expect})")
        up = torch.cat([self.upsample(f, full) for f in feats], dim=1)
        return F.relu(self.norm(self.conv(up)))


def _check_same_grid(tensors: Sequence[torch.Tensor]) -> None:
    shape = tuple(tensors[0].shape[-3:])
    for t in tensors[1:]:
        if tuple(t.shape[-3:]) != shape:
            raise ValueError(f"grid mismatch: {tuple(t.shape[-3:])} vs {shape}")


class LongTermDecoder(nn.Module):
    """Pseudo feature for the masked frame from all remaining frames plus radar."""

    def __init__(self, num_frames: int, img_channels: int, radar_channels: int,
                 channels: Sequence[int] = (32, 64, 128), blocks_per_stage: int = 2):
        super().__init__()
        self.num_frames = num_frames
        self.img_channels = img_channels
        self.radar_channels = radar_channels
        self.backbone = ResNet3d(num_frames * img_channels + radar_channels, channels, blocks_per_stage)
        self.neck = FPN3d(channels, img_channels)

    def forward(self, frames: Sequence[torch.Tensor], radar: torch.Tensor | None) -> torch.Tensor:
        """``frames``: the remaining N grids in temporal order, each (B, C_img, X, Y, Z)."""
        if len(frames) != self.num_frames:
            raise ValueError(f"long-term decoder expects {self.num_frames} frames, got {len(frames)}")
        radar = _radar_or_zeros(radar, frames[0], self.radar_channels)
        _check_same_grid([*frames, radar])
        x = torch.cat([*frames, radar], dim=1)
        return self.neck(self.backbone(x))


class ShortTermDecoder(nn.Module):
    """conv3d -> ReLU -> conv3d over the two frames adjacent to the masked one plus radar."""

    def __init__(self, img_channels: int, radar_channels: int, hidden: int | None = None):
        super().__init__()
        self.img_channels = img_channels
        self.radar_channels = radar_channels
        hidden = hidden or img_channels
        self.conv1 = conv3(2 * img_channels + radar_channels, hidden)
        self.conv2 = conv3(hidden, img_channels)

    def forward(self, before: torch.Tensor, after: torch.Tensor, radar: torch.Tensor | None) -> torch.Tensor:
        radar = _radar_or_zeros(radar, before, self.radar_channels)
        _check_same_grid([before, after, radar])
        x = torch.cat([before, after, radar], dim=1)
        return self.conv2(F.relu(self.conv1(x)))


def _radar_or_zeros(radar, like: torch.Tensor, channels: int) -> torch.Tensor:
    if radar is None:
        return like.new_zeros(like.shape[0], channels, *like.shape[-3:])
    if radar.shape[1] != channels:
        raise ValueError(f"expected {channels} radar channels, got {radar.shape[1]}")
    return radar


def split_masked(sequence: Sequence[torch.Tensor], choice: MaskChoice):
    """(remaining frames in order, (V_{t-k-1}, V_{t-k+1}))."""
    i = choice.index
    if not 1 <= i < len(sequence) - 1:
        raise ValueError(f"mask index {i} has no neighbours in a sequence of {len(sequence)}")
    remaining = [v for j, v in enumerate(sequence) if j != i]
    return remaining, (sequence[i - 1], sequence[i + 1])
