"""The three training/testing point-cloud representations.

streamline: one streamline resampled to (256, 3).
cluster:    1024 points drawn from the pooled raw points of a cluster.
fusion:     256 interpolated points of one streamline + 768 raw points
            from its cluster neighbors, as a (1024, 3) cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import SampledCluster
from .tractogram import Tractogram, resample

STREAMLINE_POINTS = 256
CLOUD_POINTS = 1024
FUSION_NEIGHBOR_POINTS = CLOUD_POINTS - STREAMLINE_POINTS

KINDS = ("streamline", "cluster", "fusion")


@dataclass
class PointCloudSample:
    points: np.ndarray
    kind: str
    label: object = None
    source: object = None

    def __post_init__(self):
        expected = STREAMLINE_POINTS if self.kind == "streamline" else CLOUD_POINTS
        if self.kind not in KINDS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        if self.points.shape != (expected, 3):
            raise ValueError(
                f"{self.kind} sample must be ({expected}, 3), got {self.points.shape}"
            )
        if not np.all(np.isfinite(self.points)):
            raise ValueError("sample contains non-finite points")


def build_streamline_sample(s: np.ndarray, label=None, source=None) -> PointCloudSample:
    """Resample one streamline to (256, 3)."""
    return PointCloudSample(
        points=resample(s, STREAMLINE_POINTS), kind="streamline",
        label=label, source=source,
    )


def _draw(pool: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
    return pool[idx]


def build_cluster_sample(
    c: SampledCluster, t: Tractogram, rng: np.random.Generator
) -> PointCloudSample:
    """1024 points sampled from the pooled raw points of a cluster.

    Sampling is without replacement unless the pool is smaller than 1024.
    """
    if not c.member_indices:
        raise ValueError("cluster has no members")
    pool = np.concatenate([t.streamlines[i] for i in c.member_indices], axis=0)
    return PointCloudSample(
        points=_draw(pool, CLOUD_POINTS, rng), kind="cluster",
        label=c.class_label, source=c,
    )


def build_fusion_sample(
    s: np.ndarray, neighbors, rng: np.random.Generator, label=None, source=None
) -> PointCloudSample:
    """Fuse one interpolated streamline with raw points of its neighbors.

    Rows 0..255 are resample(s, 256) in arc-length order; the remaining 768
    are drawn from the pooled raw neighbor points (excluding s itself).
    With no neighbors the 768 are drawn with replacement from the
    interpolated streamline so every streamline still yields a sample.
    """
    own = resample(s, STREAMLINE_POINTS)
    neighbors = list(neighbors)
    if neighbors:
        pool = np.concatenate(neighbors, axis=0)
        rest = _draw(pool, FUSION_NEIGHBOR_POINTS, rng)
    else:
        idx = rng.choice(STREAMLINE_POINTS, size=FUSION_NEIGHBOR_POINTS, replace=True)
        rest = own[idx]
    return PointCloudSample(
        points=np.concatenate([own, rest], axis=0), kind="fusion",
        label=label, source=source,
    )
