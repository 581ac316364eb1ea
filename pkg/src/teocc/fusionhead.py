"""Radar-camera fusion layers, the shared per-voxel occupancy head and the losses."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .camnet import group_norm

BRANCHES = ("main", "long", "short")


class FusionLayer(nn.Module):
    """concat(image, radar) -> conv3d(3^3) -> norm -> ReLU."""

    def __init__(self, img_channels: int, radar_channels: int, out_channels: int):
        super().__init__()
        self.img_channels = img_channels
        self.radar_channels = radar_channels
        self.conv = nn.Conv3d(img_channels + radar_channels, out_channels, 3, padding=1)
        self.norm = group_norm(out_channels)

    def forward(self, img: torch.Tensor, radar: torch.Tensor | None) -> torch.Tensor:
        if img.shape[1] != self.img_channels:
            raise ValueError(f"fusion expects {self.img_channels} image channels, got {img.shape[1]}")
        if radar is None:
            radar = img.new_zeros(img.shape[0], self.radar_channels, *img.shape[-3:])
        if radar.shape[1] != self.radar_channels or radar.shape[-3:] != img.shape[-3:]:
            raise ValueError(f"radar grid {tuple(radar.shape[1:])} does not match image grid {tuple(img.shape[1:])}")
        return F.relu(self.norm(self.conv(torch.cat([img, radar], dim=1))))


def make_fusion_layers(img_channels: int, radar_channels: int, out_channels: int) -> nn.ModuleDict:
    return nn.ModuleDict({b: FusionLayer(img_channels, radar_channels, out_channels) for b in BRANCHES})


def fuse(img: torch.Tensor, radar: torch.Tensor | None, branch: str, layers: nn.ModuleDict) -> torch.Tensor:
    if branch not in BRANCHES:
        raise ValueError(f"unknown fusion branch {branch!r}")
    return layers[branch](img, radar)


class OccHead(nn.Module):
    """Per-voxel MLP: C_fused -> hidden -> num_classes (1x1x1 convs)."""

    def __init__(self, in_channels: int, num_classes: int, hidden: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.fc1 = nn.Conv3d(in_channels, hidden, 1)
        self.fc2 = nn.Conv3d(hidden, num_classes, 1)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.shape[1] != self.in_channels:
            raise ValueError(f"head expects {self.in_channels} channels, got {feat.shape[1]}")
        return self.fc2(F.relu(self.fc1(feat)))


def occ_loss(logits: torch.Tensor, labels: torch.Tensor, class_weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean per-voxel cross-entropy. logits (B, K, X, Y, Z) or (K, X, Y, Z)."""
    if logits.dim() == 4:
        logits, labels = logits.unsqueeze(0), labels.unsqueeze(0)
    if logits.shape[2:] != labels.shape[1:]:
        raise ValueError(f"logits grid {tuple(logits.shape[2:])} != label grid {tuple(labels.shape[1:])}")
    k = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    if class_weights is None:
        return F.cross_entropy(logits, labels.long())
    # Weighted mean over voxels (weights normalised by their sum, as in F.cross_entropy).
    return F.cross_entropy(logits, labels.long(), weight=class_weights.to(logits.dtype))


def total_loss(l_main, l_long, l_short, mode: str = "train", weights=(1.0, 1.0, 1.0)):
    if mode == "infer":
        return l_main
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    w_main, w_long, w_short = weights
    return w_main * l_main + w_long * l_long + w_short * l_short
