"""Point-cloud tokenization: FPS centers, kNN patches, Morton sequence order.

A sample becomes P local patches (coordinates relative to their center),
P absolute center positions normalized to the unit cube, and a Morton
(Z-order curve) permutation giving the token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MORTON_BITS = 10
MORTON_SCALE = (1 << MORTON_BITS) - 1  # 1023


@dataclass(frozen=True)
class PatchConfig:
    n_patches: int = 64
    patch_size: int = 32

    def __post_init__(self):
        if self.n_patches < 1 or self.patch_size < 1:
            raise ValueError("n_patches and patch_size must be >= 1")


def default_patch_config(kind: str) -> PatchConfig:
    """P=64 everywhere; K=8 for streamline samples, K=32 otherwise."""
    return PatchConfig(n_patches=64, patch_size=8 if kind == "streamline" else 32)


@dataclass
class TokenizedSample:
    centers: np.ndarray       # (P, 3) in the unit cube
    patches: np.ndarray       # (P, K, 3) relative to own center
    order: np.ndarray         # Morton permutation of 0..P-1
    morton_codes: np.ndarray  # (P,) int64


def farthest_point_sample(points: np.ndarray, n_centers: int) -> np.ndarray:
    """Deterministic FPS: start at index 0, then repeatedly pick the point
    maximizing the minimum distance to the picks so far (ties: lowest index).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < n_centers:
        raise ValueError(f"cannot pick {n_centers} centers from {n} points")
    picks = np.empty(n_centers, dtype=np.int64)
    picks[0] = 0
    min_d = np.linalg.norm(points - points[0], axis=1)
    min_d[0] = -np.inf  # picked points never reselected, even under ties
    for i in range(1, n_centers):
        nxt = int(np.argmax(min_d))  # argmax returns the first (lowest) index
        picks[i] = nxt
        np.minimum(min_d, np.linalg.norm(points - points[nxt], axis=1), out=min_d)
        min_d[nxt] = -np.inf
    return picks


def knn_patches(points: np.ndarray, centers: np.ndarray, k: int):
    """K nearest points per center (the center is its own first neighbor).

    Returns (patches (P, K, 3) relative to the center, normalized absolute
    centers (P, 3)). The full sample is min-max normalized per axis to the
    unit cube to produce the absolute center positions.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < k:
        raise ValueError(f"need at least {k} points, got {len(points)}")
    cpts = points[centers]  # (P, 3)
    d = np.linalg.norm(points[None, :, :] - cpts[:, None, :], axis=2)  # (P, n)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]  # ties by index
    patches = points[nn] - cpts[:, None, :]

    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    centers_norm = (cpts - lo) / span
    return patches, centers_norm


def morton_codes(centers: np.ndarray) -> np.ndarray:
    """30-bit Morton codes from unit-cube coordinates (10 bits per axis,
    x in bit 0, y in bit 1, z in bit 2, repeating)."""
    centers = np.asarray(centers, dtype=np.float64)
    if np.any(centers < 0.0) or np.any(centers > 1.0):
        raise ValueError("centers must lie in the unit cube")
    q = np.floor(centers * MORTON_SCALE).astype(np.int64)
    q = np.minimum(q, MORTON_SCALE)
    codes = np.zeros(len(centers), dtype=np.int64)
    for bit in range(MORTON_BITS):
        for axis in range(3):
            codes |= ((q[:, axis] >> bit) & 1) << (3 * bit + axis)
    return codes


def morton_order(centers: np.ndarray):
    """(codes, permutation sorting codes ascending, ties by index)."""
    codes = morton_codes(centers)
    return codes, np.argsort(codes, kind="stable")


def tokenize(points: np.ndarray, config: PatchConfig) -> TokenizedSample:
    """Full tokenization of one point cloud."""
    centers_idx = farthest_point_sample(points, config.n_patches)
    patches, centers = knn_patches(points, centers_idx, config.patch_size)
    codes, order = morton_order(centers)
    return TokenizedSample(centers=centers, patches=patches, order=order,
                           morton_codes=codes)
