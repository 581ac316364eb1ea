"""Camera branch: toy image encoder, depth-distribution lift-splat into voxels and
ego-motion alignment of historical voxel features."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .gridcore import EgoPose, GridSpec, relative_transform, voxel_indices
from .scenesim import CameraModel


def group_norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else (4 if channels % 4 == 0 else 1)
    return nn.GroupNorm(min(groups, channels), channels)


def depth_bins(num_bins: int = 16, near: float = 1.0, far: float = 17.0) -> torch.Tensor:
    """Centers of ``num_bins`` uniform bins spanning [near, far] meters."""
    width = (far - near) / num_bins
    return near + width * (torch.arange(num_bins, dtype=torch.float64) + 0.5)


class ImageEncoder(nn.Module):
    """Three strided conv blocks (strides 2, 1, 2) and a 1x1 depth head.

    Input images are (B, 2, H, W) with a semantic-id channel and a depth channel;
    output features are at 1/4 resolution.
    """

    stride = 4

    def __init__(self, in_channels=2, out_channels=32, hidden=16, num_bins=16, input_scale=(0.2, 1 / 17.0),
                 image_size: tuple[int, int] | None = None):
        super().__init__()
        self.image_size = tuple(image_size) if image_size is not None else None
        self.register_buffer("input_scale", torch.tensor(input_scale, dtype=torch.float32).view(1, -1, 1, 1))
        self.blocks = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, stride=2, padding=1), group_norm(hidden), nn.ReLU(inplace=True),
            nn.Conv2d(hidden, out_channels, 3, stride=1, padding=1), group_norm(out_channels), nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1), group_norm(out_channels), nn.ReLU(inplace=True),
        )
        self.depth_head = nn.Conv2d(out_channels, num_bins, 1)
        self.in_channels = in_channels

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if images.dim() != 4 or images.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, H, W) images, got {tuple(images.shape)}")
        if self.image_size is not None and tuple(images.shape[-2:]) != self.image_size:
            raise ValueError(f"image size {tuple(images.shape[-2:])} does not match camera model {self.image_size}")
        feat = self.blocks(images * self.input_scale.to(images.dtype))
        probs = self.depth_head(feat).softmax(dim=1)
        return feat, probs


def frustum_voxel_index(camera: CameraModel, feat_hw: tuple[int, int], bins, spec: GridSpec,
                        ego_pose: EgoPose | None = None) -> np.ndarray:
    """Flat voxel index for every (bin, row, col) of the frustum, -1 when outside the grid.

    ``ego_pose`` maps the camera's ego frame into the grid frame (identity if None).
    """
    h, w = feat_hw
    stride_y = camera.height / h
    stride_x = camera.width / w
    vv, uu = np.meshgrid((np.arange(h) + 0.5) * stride_y, (np.arange(w) + 0.5) * stride_x, indexing="ij")
    rays = camera.ray_directions(uu, vv)  # (h, w, 3)
    bins = np.asarray(bins, dtype=np.float64)
    pts = camera.origin + bins[:, None, None, None] * rays[None]  # (D, h, w, 3)
    if ego_pose is not None:
        pts = ego_pose.apply(pts)
    idx, valid = voxel_indices(spec, pts.reshape(-1, 3))
    nx, ny, nz = spec.dims
    flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
    return np.where(valid, flat, -1)


def splat(feat: torch.Tensor, probs: torch.Tensor, flat_index: torch.Tensor, num_voxels: int) -> torch.Tensor:
    """Accumulate probs[d, p] * feat[:, p] into voxels. feat (B, C, h, w), probs (B, D, h, w)."""
    b, c = feat.shape[:2]
    weighted = probs.unsqueeze(1) * feat.unsqueeze(2)  # (B, C, D, h, w)
    weighted = weighted.reshape(b, c, -1)
    keep = flat_index >= 0
    out = feat.new_zeros(b, c, num_voxels)
    return out.index_add(2, flat_index[keep], weighted[:, :, keep])


def lift_splat(feat: torch.Tensor, depth: torch.Tensor, camera: CameraModel, spec: GridSpec, bins,
               ego_pose: EgoPose | None = None) -> torch.Tensor:
    """Single-camera view transform. Accepts (C, h, w)/(D, h, w) or batched inputs;
    returns (C, nx, ny, nz) or (B, C, nx, ny, nz)."""
    unbatched = feat.dim() == 3
    if unbatched:
        feat, depth = feat.unsqueeze(0), depth.unsqueeze(0)
    if depth.shape[1] != len(bins) or feat.shape[-2:] != depth.shape[-2:]:
        raise ValueError("feature map and depth distribution shapes disagree")
    index = torch.from_numpy(frustum_voxel_index(camera, tuple(feat.shape[-2:]), bins, spec, ego_pose))
    out = splat(feat, depth, index, spec.num_voxels).reshape(feat.shape[0], feat.shape[1], *spec.dims)
    return out[0] if unbatched else out


def multi_view_lift(per_camera, spec: GridSpec, bins) -> torch.Tensor:
    """Sum of :func:`lift_splat` over ``(feat, depth, camera)`` triples."""
    if not per_camera:
        raise ValueError("need at least one camera")
    total = None
    for item in per_camera:
        feat, depth, camera = item[:3]
        grid_spec = item[3] if len(item) > 3 else spec
        if grid_spec != spec:
            raise ValueError("cameras were lifted onto different grids")
        v = lift_splat(feat, depth, camera, spec, bins)
        total = v if total is None else total + v
    return total


class ViewTransformer(nn.Module):
    """Precomputed multi-camera lift-splat for a fixed rig (cameras in the ego frame)."""

    def __init__(self, cameras: list[CameraModel], feat_hw: tuple[int, int], spec: GridSpec, bins):
        super().__init__()
        self.spec = spec
        self.num_cameras = len(cameras)
        index = np.stack([frustum_voxel_index(c, feat_hw, bins, spec) for c in cameras])
        self.register_buffer("index", torch.from_numpy(index), persistent=False)

    def forward(self, feat: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
        """feat (B, ncam, C, h, w), probs (B, ncam, D, h, w) -> (B, C, nx, ny, nz)."""
        b, ncam, c = feat.shape[:3]
        if ncam != self.num_cameras:
            raise ValueError(f"expected {self.num_cameras} cameras, got {ncam}")
        weighted = probs.unsqueeze(2) * feat.unsqueeze(3)  # (B, ncam, C, D, h, w)
        weighted = weighted.transpose(1, 2).reshape(b, c, -1)
        flat = self.index.reshape(-1)
        keep = flat >= 0
        out = feat.new_zeros(b, c, self.spec.num_voxels)
        out = out.index_add(2, flat[keep], weighted[:, :, keep])
        return out.reshape(b, c, *self.spec.dims)


def warp_grid(spec: GridSpec, cur_to_src: torch.Tensor) -> torch.Tensor:
    """Sampling grid for ``F.grid_sample`` (align_corners=False) from (B, 4, 4) transforms."""
    centers = torch.from_numpy(spec.voxel_centers()).to(cur_to_src.dtype)  # (X, Y, Z, 3)
    rot, trans = cur_to_src[:, :3, :3], cur_to_src[:, :3, 3]
    src = torch.einsum("bij,xyzj->bxyzi", rot, centers) + trans[:, None, None, None, :]
    lo = torch.as_tensor(spec.range_min, dtype=src.dtype)
    vs = torch.as_tensor(spec.voxel_size, dtype=src.dtype)
    dims = torch.as_tensor(spec.dims, dtype=src.dtype)
    idx = (src - lo) / vs - 0.5
    norm = (2 * idx + 1) / dims - 1
    # grid_sample expects (x, y, z) ordered as (W, H, D) = (z, y, x) of our layout.
    return norm.flip(-1)


def warp_features(v: torch.Tensor, cur_to_src: torch.Tensor, spec: GridSpec) -> torch.Tensor:
    """Trilinear resample of (B, C, X, Y, Z) source grids into the current frame, zero fill."""
    grid = warp_grid(spec, cur_to_src.to(v.dtype))
    return F.grid_sample(v, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def warp_to_current(v: torch.Tensor, pose_src: EgoPose, pose_cur: EgoPose, spec: GridSpec) -> torch.Tensor:
    """Resample a (C, X, Y, Z) or batched feature grid from ``pose_src``'s frame into ``pose_cur``'s."""
    same = np.array_equal(pose_src.rotation, pose_cur.rotation) and np.array_equal(pose_src.translation, pose_cur.translation)
    rel = relative_transform(pose_src, pose_cur)
    if same or np.array_equal(rel, np.eye(4)):
        return v.clone()
    unbatched = v.dim() == 4
    x = v.unsqueeze(0) if unbatched else v
    m = torch.from_numpy(rel).to(x.dtype).expand(x.shape[0], 4, 4)
    out = warp_features(x, m, spec)
    return out[0] if unbatched else out


def build_temporal_sequence(frames, encoder: ImageEncoder, view: ViewTransformer, spec: GridSpec) -> list[torch.Tensor]:
    """[V_{t-N}, ..., V_t] for ``frames`` (oldest first), each warped into the last frame."""
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    cur = frames[-1].ego_pose
    seq = []
    for fr in frames:
        images = torch.as_tensor(np.asarray(fr.images), dtype=torch.float32)
        feat, probs = encoder(images)
        v = view(feat.unsqueeze(0), probs.unsqueeze(0))[0]
        seq.append(warp_to_current(v, fr.ego_pose, cur, spec))
    return seq
