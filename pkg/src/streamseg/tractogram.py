"""Core streamline geometry: containers, arc-length resampling, MDF distance.

A streamline is an (n, 3) float64 array of world coordinates in millimeters,
n >= 2, all values finite. A tractogram is a list of streamlines with
optional per-streamline class labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


def as_streamline(points) -> np.ndarray:
    """Validate and return a streamline as an (n, 3) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"streamline must be (n, 3), got {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError("streamline needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("streamline contains non-finite coordinates")
    return pts


@dataclass
class Tractogram:
    """A collection of streamlines with optional per-streamline labels."""

    streamlines: list = field(default_factory=list)
    labels: list | None = None
    class_names: list | None = None

    def __post_init__(self):
        self.streamlines = [as_streamline(s) for s in self.streamlines]
        if self.labels is not None:
            if len(self.labels) != len(self.streamlines):
                raise ValueError(
                    f"{len(self.labels)} labels for "
                    f"{len(self.streamlines)} streamlines"
                )
            if self.class_names is not None:
                known = set(self.class_names)
                for i, lab in enumerate(self.labels):
                    if lab not in known:
                        raise ValueError(f"label {lab!r} at index {i} not in class_names")

    def __len__(self):
        return len(self.streamlines)


def arc_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative chord length at each point, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample(points: np.ndarray, m: int) -> np.ndarray:
    """Resample a streamline to m points uniform in normalized arc length.

    Uses a per-coordinate natural cubic spline over normalized cumulative
    chord length; falls back to piecewise-linear interpolation when the
    input has fewer than 4 points. Endpoints are preserved exactly.
    """
    pts = as_streamline(points)
    if m < 2:
        raise ValueError("m must be >= 2")
    cum = arc_lengths(pts)
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("zero arc length")
    u = cum / total
    # Collapse duplicate parameter values (repeated points) for the spline.
    keep = np.concatenate([[True], np.diff(u) > 0])
    u, pts = u[keep], pts[keep]
    t = np.linspace(0.0, 1.0, m)
    if pts.shape[0] < 4:
        out = np.stack([np.interp(t, u, pts[:, k]) for k in range(3)], axis=1)
    else:
        out = CubicSpline(u, pts, axis=0, bc_type="natural")(t)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def mdf(s: np.ndarray, t: np.ndarray) -> float:
    """Mean direct-flip distance between two equal-length streamlines.

    min over orientation flip of the mean pointwise Euclidean distance.
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"point counts differ: {s.shape} vs {t.shape}")
    n = len(s)
    # fsum keeps the means order-independent, so mdf(s, t) == mdf(t, s)
    # holds exactly (the flipped-term norms appear in reversed order there)
    direct = math.fsum(np.linalg.norm(s - t, axis=1)) / n
    flipped = math.fsum(np.linalg.norm(s - t[::-1], axis=1)) / n
    return float(min(direct, flipped))


def mdf_to_many(s: np.ndarray, others: np.ndarray) -> np.ndarray:
    """MDF from one (N, 3) streamline to a stacked (k, N, 3) array."""
    direct = np.linalg.norm(others - s, axis=2).mean(axis=1)
    flipped = np.linalg.norm(others - s[::-1], axis=2).mean(axis=1)
    return np.minimum(direct, flipped)
