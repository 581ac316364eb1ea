"""ASCII voxel point-cloud export: a ``teocc-voxels v1 count=<n>`` header, then
one ``x y z class_id r g b`` line per occupied voxel center."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import torch

from ..gridcore import FREE, GridSpec, OccupancyLabelGrid

HEADER = "teocc-voxels v1 count={}"
_HEADER_RE = re.compile(r"^teocc-voxels v1 count=(\d+)$")

# free, ground, building, barrier, car, pedestrian; extra classes cycle.
CLASS_COLORS = np.array(
    [[0, 0, 0], [128, 128, 128], [230, 150, 60], [255, 220, 0], [0, 120, 255], [220, 30, 60]], dtype=np.int64
)


def class_color(class_id: int) -> tuple[int, int, int]:
    if class_id < len(CLASS_COLORS):
        return tuple(int(c) for c in CLASS_COLORS[class_id])
    rng = np.random.default_rng(class_id)
    return tuple(int(c) for c in rng.integers(40, 256, size=3))


def as_labels(pred) -> np.ndarray:
    """Integer label grid from an OccupancyLabelGrid, labels, or (K, X, Y, Z) logits."""
    if isinstance(pred, OccupancyLabelGrid):
        return np.asarray(pred.labels)
    if isinstance(pred, torch.Tensor):
        pred = pred.detach().cpu().numpy()
    pred = np.asarray(pred)
    if pred.ndim == 4:
        return pred.argmax(0)
    if pred.ndim == 3 and pred.dtype.kind in "iu":
        return pred
    raise ValueError(f"expected labels (X, Y, Z) or logits (K, X, Y, Z), got array of shape {pred.shape}")


def export_voxels(pred, spec: GridSpec, path) -> int:
    """Write the occupied voxels of ``pred``; returns the number of records."""
    labels = as_labels(pred)
    if labels.shape != tuple(spec.dims):
        raise ValueError(f"label grid {labels.shape} does not match grid {spec.dims}")
    idx = np.argwhere(labels != FREE)
    lo, vs = np.asarray(spec.range_min), np.asarray(spec.voxel_size)
    centers = lo + (idx + 0.5) * vs
    lines = [HEADER.format(len(idx))]
    for (x, y, z), cell in zip(centers, idx):
        c = int(labels[tuple(cell)])
        r, g, b = class_color(c)
        lines.append(f"{x:.4f} {y:.4f} {z:.4f} {c} {r} {g} {b}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write voxel export to {path}: {exc.strerror}") from exc
    return len(idx)


def read_voxels(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(centers (n, 3), class ids (n,), colors (n, 3)) from an export file."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty voxel file")
    m = _HEADER_RE.match(lines[0].strip())
    if not m:
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    n = int(m.group(1))
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ValueError(f"{path}: header says {n} records, found {len(body)}")
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros((0, 3), np.int64)
    rows = [ln.split() for ln in body]
    if any(len(r) != 7 for r in rows):
        raise ValueError(f"{path}: every record needs 7 fields")
    centers = np.array([[float(v) for v in r[:3]] for r in rows])
    ids = np.array([int(r[3]) for r in rows], np.int64)
    colors = np.array([[int(v) for v in r[4:]] for r in rows], np.int64)
    return centers, ids, colors


def voxels_to_labels(centers: np.ndarray, ids: np.ndarray, spec: GridSpec) -> np.ndarray:
    labels = np.full(spec.dims, FREE, dtype=np.int64)
    lo, vs = np.asarray(spec.range_min), np.asarray(spec.voxel_size)
    idx = np.floor((centers - lo) / vs).astype(np.int64)
    labels[tuple(idx.T)] = ids
    return labels
