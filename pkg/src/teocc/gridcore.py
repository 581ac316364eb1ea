"""Voxel grid geometry, label sets, ego poses, the mIoU metric and voxel-space flips."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_CLASS_NAMES = ("free", "ground", "building", "barrier", "car", "pedestrian")
FREE = 0

_AXES = {"x": -3, "y": -2}


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    voxel_size: tuple[float, float, float]
    dims: tuple[int, int, int]

    @property
    def range_min(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]], dtype=np.float64)

    @property
    def range_max(self) -> np.ndarray:
        return np.array([self.x_range[1], self.y_range[1], self.z_range[1]], dtype=np.float64)

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_centers(self) -> np.ndarray:
        """Centers of every voxel, shape (nx, ny, nz, 3), in meters."""
        axes = [
            lo + (np.arange(n) + 0.5) * vs
            for lo, n, vs in zip(self.range_min, self.dims, self.voxel_size)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def downsample(self, factor: int) -> "GridSpec":
        """Same extent at ``factor`` times coarser resolution (ceil on dims)."""
        dims = tuple(-(-n // factor) for n in self.dims)
        vs = tuple(v * factor for v in self.voxel_size)
        return GridSpec(self.x_range, self.y_range, self.z_range, vs, dims)

    def to_dict(self) -> dict:
        return {
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "z_range": list(self.z_range),
            "voxel_size": list(self.voxel_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return make_grid_spec(d["x_range"], d["y_range"], d["z_range"], d["voxel_size"])


def make_grid_spec(x_range, y_range, z_range, voxel_size) -> GridSpec:
    """Build a GridSpec, rejecting extents that are not a whole number of voxels."""
    if np.ndim(voxel_size) == 0:
        voxel_size = (voxel_size,) * 3
    voxel_size = tuple(float(v) for v in voxel_size)
    ranges = [tuple(float(v) for v in r) for r in (x_range, y_range, z_range)]
    dims = []
    for name, (lo, hi), vs in zip("xyz", ranges, voxel_size):
        if vs <= 0:
            raise ValueError(f"voxel size along {name} must be positive, got {vs}")
        if not hi > lo:
            raise ValueError(f"{name}_range must be nonempty, got [{lo}, {hi}]")
        n = round((hi - lo) / vs)
        if n < 1 or abs(n * vs - (hi - lo)) > 1e-9:
            raise ValueError(
                f"{name} extent {hi - lo:g} m is not divisible by voxel size {vs:g} m"
            )
        dims.append(int(n))
    return GridSpec(ranges[0], ranges[1], ranges[2], voxel_size, tuple(dims))


def voxel_index(spec: GridSpec, point) -> tuple[int, int, int] | None:
    """Index of the voxel containing ``point``; None when outside (max faces excluded)."""
    idx = []
    for p, lo, vs, n in zip(point, spec.range_min, spec.voxel_size, spec.dims):
        i = math.floor((float(p) - lo) / vs)
        if i < 0 or i >= n:
            return None
        idx.append(i)
    return tuple(idx)


def voxel_indices(spec: GridSpec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`voxel_index`. Returns (indices (M, 3) int64, in-range mask (M,))."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((points - spec.range_min) / np.asarray(spec.voxel_size)).astype(np.int64)
    valid = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    return idx, valid


def voxel_center(spec: GridSpec, index) -> np.ndarray:
    return spec.range_min + (np.asarray(index, dtype=np.float64) + 0.5) * np.asarray(spec.voxel_size)


@dataclass(frozen=True)
class SemanticLabelSet:
    names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("a label set needs the free class plus at least one more")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"class names must be unique: {self.names}")
        if self.names[0] != "free":
            raise ValueError("class index 0 must be 'free'")

    @property
    def num_classes(self) -> int:
        return len(self.names)


@dataclass
class OccupancyLabelGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        if tuple(self.labels.shape) != self.spec.dims:
            raise ValueError(f"labels shape {self.labels.shape} != grid dims {self.spec.dims}")


@dataclass
class VoxelFeatureGrid:
    spec: GridSpec
    data: np.ndarray

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True, eq=False)
class EgoPose:
    """Rigid transform mapping points of this frame into the parent (world) frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: int = 0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0), timestamp: int = 0) -> "EgoPose":
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.asarray(translation, dtype=np.float64), timestamp)

    @classmethod
    def from_matrix(cls, m: np.ndarray, timestamp: int = 0) -> "EgoPose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3], timestamp)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, EgoPose):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.timestamp == other.timestamp
        )


def compose_pose(a: EgoPose, b: EgoPose) -> EgoPose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return EgoPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation, b.timestamp)


def invert_pose(a: EgoPose) -> EgoPose:
    rt = a.rotation.T
    return EgoPose(rt, -rt @ a.translation, a.timestamp)


def relative_transform(pose_src: EgoPose, pose_cur: EgoPose) -> np.ndarray:
    """4x4 matrix taking current-ego coordinates into source-ego coordinates."""
    return compose_pose(invert_pose(pose_src), pose_cur).matrix()


def flip_spatial(array, axis: str):
    """Reverse an array (numpy or torch) whose trailing three dims are (x, y, z)."""
    if axis not in _AXES:
        raise ValueError(f"flip axis must be 'x' or 'y', got {axis!r}")
    dim = _AXES[axis]
    if isinstance(array, np.ndarray):
        return np.flip(array, axis=dim).copy()
    return array.flip(dim)


def flip_grid(grid, axis: str):
    if isinstance(grid, OccupancyLabelGrid):
        return OccupancyLabelGrid(grid.spec, flip_spatial(grid.labels, axis))
    if isinstance(grid, VoxelFeatureGrid):
        return VoxelFeatureGrid(grid.spec, flip_spatial(grid.data, axis))
    return flip_spatial(grid, axis)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts indexed [gt, pred]."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt must have the same number of voxels")
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels outside [0, {num_classes})")
    counts = np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both pred and gt."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - tp
    out = np.full(len(tp), np.nan)
    present = union > 0
    out[present] = tp[present] / union[present]
    return out


def miou_from_confusion(cm: np.ndarray) -> float:
    iou = iou_from_confusion(cm)
    if np.all(np.isnan(iou)):
        return float("nan")
    return float(np.nanmean(iou))


def _unwrap(grid):
    return grid.labels if isinstance(grid, OccupancyLabelGrid) else np.asarray(grid)


def _check_pair(pred, gt):
    if isinstance(pred, OccupancyLabelGrid) and isinstance(gt, OccupancyLabelGrid):
        if pred.spec != gt.spec:
            raise ValueError("pred and gt live on different grids")
    p, g = _unwrap(pred), _unwrap(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def per_class_iou(pred, gt, num_classes: int) -> np.ndarray:
    p, g = _check_pair(pred, gt)
    return iou_from_confusion(confusion_matrix(p, g, num_classes))


def miou(pred, gt, num_classes: int) -> float:
    p, g = _check_pair(pred, gt)
    return miou_from_confusion(confusion_matrix(p, g, num_classes))


def mean_ignoring_absent(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.nanmean(arr)) if np.any(~np.isnan(arr)) else float("nan")
