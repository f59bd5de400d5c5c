"""Voxel-level bundle evaluation: streamline voxelization and the
DICE / Overlap / Overreach set metrics between predicted and reference masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VoxelMask:
    dims: tuple
    voxel_size_mm: float
    origin: np.ndarray
    occupied: set = field(default_factory=set)

    def same_grid(self, other: "VoxelMask") -> bool:
        return (
            self.dims == other.dims
            and self.voxel_size_mm == other.voxel_size_mm
            and np.array_equal(self.origin, other.origin)
        )


def grid_covering(points: np.ndarray, voxel_size_mm: float, pad: int = 1):
    """(dims, origin) of a grid covering all points with a voxel of padding."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0) - pad * voxel_size_mm
    hi = points.max(axis=0) + pad * voxel_size_mm
    dims = tuple(int(np.ceil((hi[k] - lo[k]) / voxel_size_mm)) + 1 for k in range(3))
    return dims, lo


def _densify(points: np.ndarray, max_step: float) -> np.ndarray:
    """Linear resampling of a polyline so consecutive samples are within
    max_step of each other along the chords."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return points
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return points[:1]
    n = int(np.ceil(total / max_step)) + 1
    t = np.linspace(0.0, total, n)
    return np.stack([np.interp(t, cum, points[:, k]) for k in range(3)], axis=1)


def voxelize(streamlines, voxel_size_mm: float, dims, origin) -> VoxelMask:
    """Occupancy mask of streamlines after resampling to steps of at most
    half a voxel; each sample point is binned by floor((p - origin) / size)."""
    origin = np.asarray(origin, dtype=np.float64)
    occupied = set()
    for s in streamlines:
        dense = _densify(s, voxel_size_mm / 2.0)
        idx = np.floor((dense - origin) / voxel_size_mm).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
            raise ValueError("streamline point outside the voxel grid")
        occupied.update(map(tuple, idx))
    return VoxelMask(dims=tuple(dims), voxel_size_mm=voxel_size_mm,
                     origin=origin, occupied=occupied)


def dice_overlap_overreach(pred: VoxelMask, ref: VoxelMask):
    """(dice, overlap, overreach) between a predicted and a reference mask.

    dice = 2|P&G| / (|P| + |G|); overlap = |P&G| / |G|;
    overreach = |P\\G| / |G|. Both masks empty gives (1, 1, 0).
    """
    if not pred.same_grid(ref):
        raise ValueError("voxel grids differ")
    p, g = pred.occupied, ref.occupied
    if not g:
        if not p:
            return 1.0, 1.0, 0.0
        raise ValueError("undefined reference: empty reference mask")
    inter = len(p & g)
    dice = 2.0 * inter / (len(p) + len(g)) if (p or g) else 1.0
    overlap = inter / len(g)
    overreach = len(p - g) / len(g)
    return dice, overlap, overreach


def metrics_report(rows, delimiter="\t") -> str:
    """Per-class metric rows plus a mean +- std footer.

    rows: sequence of (class_name, dice, overlap, overreach).
    """
    lines = [delimiter.join(["class", "dice", "overlap", "overreach"])]
    for name, d, ov, orr in rows:
        lines.append(delimiter.join([str(name), f"{d:.4f}", f"{ov:.4f}", f"{orr:.4f}"]))
    if rows:
        arr = np.array([[d, ov, orr] for _, d, ov, orr in rows])
        mean, std = arr.mean(axis=0), arr.std(axis=0)
        footer = ["mean±std"] + [f"{m:.4f}±{s:.4f}" for m, s in zip(mean, std)]
        lines.append(delimiter.join(footer))
    return "\n".join(lines) + "\n"
