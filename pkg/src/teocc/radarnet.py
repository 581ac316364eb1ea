"""PointPillar-style radar encoder scattering per-cell features onto the 3D voxel grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .gridcore import GridSpec, voxel_indices

POINT_FEATURES = 5  # x, y, z, radial velocity, intensity
AUGMENTED_FEATURES = POINT_FEATURES + 3  # + offsets from the cell center


@dataclass
class PillarBuffer:
    indices: np.ndarray  # (K, 3) int64 cell indices, unique
    points: np.ndarray  # (K, P, AUGMENTED_FEATURES) float32, zero padded
    counts: np.ndarray  # (K,) int64

    def __len__(self):
        return len(self.indices)


def voxelize_radar(cloud, spec: GridSpec, max_points: int = 8, rng: np.random.Generator | int | None = 0) -> PillarBuffer:
    """Bin radar points into grid cells, keeping at most ``max_points`` per cell.

    ``cloud`` is a RadarPointCloud or an (M, 5) array. Points are shuffled with
    ``rng`` before first-come truncation; ``rng=None`` keeps input order.
    """
    arr = cloud.as_array() if hasattr(cloud, "as_array") else np.asarray(cloud, dtype=np.float32)
    arr = arr.reshape(-1, POINT_FEATURES)
    if rng is not None and len(arr):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        arr = arr[rng.permutation(len(arr))]
    idx, valid = voxel_indices(spec, arr[:, :3])
    arr, idx = arr[valid], idx[valid]
    nx, ny, nz = spec.dims
    flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
    cells, inverse = np.unique(flat, return_inverse=True)
    k = len(cells)
    points = np.zeros((k, max_points, AUGMENTED_FEATURES), dtype=np.float32)
    counts = np.zeros(k, dtype=np.int64)
    centers = spec.range_min + (idx + 0.5) * np.asarray(spec.voxel_size)
    for i, cell in enumerate(inverse):
        slot = counts[cell]
        if slot >= max_points:
            continue
        points[cell, slot, :POINT_FEATURES] = arr[i]
        points[cell, slot, POINT_FEATURES:] = arr[i, :3] - centers[i]
        counts[cell] += 1
    cell_idx = np.stack(np.unravel_index(cells, spec.dims), axis=1).astype(np.int64) if k else np.zeros((0, 3), np.int64)
    return PillarBuffer(cell_idx, points, counts)


def featurize_cells(points: torch.Tensor, counts: torch.Tensor, linear: nn.Linear) -> torch.Tensor:
    """Shared linear + ReLU per point, max-pool per cell. points (K, P, F) -> (K, C)."""
    h = torch.relu(linear(points))
    slots = torch.arange(points.shape[1], device=points.device)
    mask = (slots[None, :] < counts[:, None]).unsqueeze(-1)
    # ReLU outputs are >= 0, so zero-filled empty slots never win the max.
    h = torch.where(mask, h, torch.zeros_like(h))
    if h.shape[1] == 0:
        return h.new_zeros(h.shape[0], h.shape[2])
    return h.max(dim=1).values


def scatter_to_grid(cell_features: torch.Tensor, indices, spec: GridSpec, batch_index=None,
                    batch_size: int | None = None) -> torch.Tensor:
    """Dense (C, X, Y, Z) grid (or (B, C, X, Y, Z) with ``batch_index``) from per-cell vectors."""
    indices = torch.as_tensor(np.asarray(indices), dtype=torch.long).reshape(-1, 3)
    if len(indices) and ((indices < 0).any() or (indices >= torch.tensor(spec.dims)).any()):
        raise ValueError("cell index outside the grid")
    nx, ny, nz = spec.dims
    flat = (indices[:, 0] * ny + indices[:, 1]) * nz + indices[:, 2]
    c = cell_features.shape[1]
    if batch_index is None:
        if len(torch.unique(flat)) != len(flat):
            raise ValueError("duplicate cell indices")
        out = cell_features.new_zeros(c, spec.num_voxels)
        out = out.index_copy(1, flat, cell_features.t())
        return out.reshape(c, nx, ny, nz)
    batch_index = torch.as_tensor(np.asarray(batch_index), dtype=torch.long)
    flat = batch_index * spec.num_voxels + flat
    if len(torch.unique(flat)) != len(flat):
        raise ValueError("duplicate cell indices")
    out = cell_features.new_zeros(c, batch_size * spec.num_voxels)
    out = out.index_copy(1, flat, cell_features.t())
    return out.reshape(c, batch_size, nx, ny, nz).transpose(0, 1)


class RadarEncoder(nn.Module):
    def __init__(self, out_channels: int = 16, in_features: int = AUGMENTED_FEATURES):
        super().__init__()
        self.out_channels = out_channels
        self.linear = nn.Linear(in_features, out_channels)

    def forward(self, buffers: list[PillarBuffer], spec: GridSpec) -> torch.Tensor:
        """Batch of pillar buffers -> (B, C_r, X, Y, Z)."""
        dtype = self.linear.weight.dtype
        pts = [torch.from_numpy(b.points) for b in buffers]
        if not pts or sum(len(p) for p in pts) == 0:
            return self.linear.weight.new_zeros(len(buffers), self.out_channels, *spec.dims)
        points = torch.cat(pts).to(dtype)
        counts = torch.from_numpy(np.concatenate([b.counts for b in buffers]))
        indices = np.concatenate([b.indices for b in buffers])
        batch = np.concatenate([np.full(len(b), i) for i, b in enumerate(buffers)])
        feats = featurize_cells(points, counts, self.linear)
        return scatter_to_grid(feats, indices, spec, batch, len(buffers))
