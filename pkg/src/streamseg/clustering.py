"""QuickBundlesX hierarchical clustering with the move-up sampling rule.

Streamlines are resampled to a fixed point count and descend a strictly
decreasing MDF-threshold hierarchy in a single pass, joining the first
cluster within reach at each level or founding a new one. Training clusters
are drawn from the three finest levels (default 4/6/8 mm): an undersized
4 mm cluster is promoted to its 6 mm parent, then its 8 mm grandparent,
and discarded if still undersized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tractogram import Tractogram, mdf, mdf_to_many, resample

DEFAULT_THRESHOLDS = (40.0, 30.0, 20.0, 10.0, 8.0, 6.0, 4.0)
TRAIN_LEVELS_MM = (4.0, 6.0, 8.0)


@dataclass
class Cluster:
    level: int
    centroid: np.ndarray  # (n_resample, 3), running mean of flip-aligned members
    indices: list = field(default_factory=list)
    parent: "Cluster | None" = None
    children: list = field(default_factory=list)

    def add(self, s: np.ndarray, index: int):
        if np.linalg.norm(s - self.centroid, axis=1).mean() > np.linalg.norm(
            s[::-1] - self.centroid, axis=1
        ).mean():
            s = s[::-1]
        k = len(self.indices)
        self.centroid = (self.centroid * k + s) / (k + 1)
        self.indices.append(index)


@dataclass
class ClusterTree:
    thresholds: tuple
    levels: list  # levels[i] is the list of clusters at thresholds[i]
    n_resample: int

    def level_index(self, radius_mm: float) -> int:
        for i, thr in enumerate(self.thresholds):
            if thr == radius_mm:
                return i
        raise ValueError(f"no level with threshold {radius_mm} mm")


@dataclass
class SampledCluster:
    member_indices: list
    level_radius_mm: float
    class_label: object = None
    centroid: np.ndarray | None = None


def quickbundlesx(
    t: Tractogram,
    thresholds=DEFAULT_THRESHOLDS,
    n_resample: int = 12,
) -> ClusterTree:
    """Single-pass hierarchical QBx clustering of a tractogram."""
    if len(t) == 0:
        raise ValueError("cannot cluster an empty tractogram")
    thresholds = tuple(float(x) for x in thresholds)
    if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly decreasing")
    if n_resample < 2:
        raise ValueError("n_resample must be >= 2")

    levels = [[] for _ in thresholds]
    for idx, s in enumerate(t.streamlines):
        s12 = resample(s, n_resample)
        parent = None
        for li, thr in enumerate(thresholds):
            candidates = levels[li] if parent is None else parent.children
            chosen = None
            if candidates:
                cents = np.stack([c.centroid for c in candidates])
                dists = mdf_to_many(s12, cents)
                hits = np.flatnonzero(dists <= thr)
                if len(hits):
                    chosen = candidates[hits[0]]
            if chosen is None:
                chosen = Cluster(level=li, centroid=s12.copy(), parent=parent)
                chosen.indices.append(idx)
                levels[li].append(chosen)
                if parent is not None:
                    parent.children.append(chosen)
            else:
                chosen.add(s12, idx)
            parent = chosen
    return ClusterTree(thresholds=thresholds, levels=levels, n_resample=n_resample)


def sample_clusters_move_up(
    tree: ClusterTree,
    min_members: int = 10,
    labels=None,
    require_pure: bool = True,
):
    """Draw training/inference clusters from the 4/6/8 mm levels.

    Each 4 mm cluster is accepted if it has at least ``min_members``
    members; otherwise its 6 mm parent, then 8 mm grandparent, is tried;
    still-undersized chains are discarded. Duplicate acceptances of a
    shared parent are deduplicated. With ``labels`` given, each accepted
    cluster gets the majority label of its members, and (when
    ``require_pure``) mixed-label clusters are discarded.
    """
    if min_members < 1:
        raise ValueError("min_members must be >= 1")
    try:
        idx4 = tree.level_index(TRAIN_LEVELS_MM[0])
        tree.level_index(TRAIN_LEVELS_MM[1])
        tree.level_index(TRAIN_LEVELS_MM[2])
    except ValueError as e:
        raise ValueError(f"tree lacks the 4/6/8 mm levels: {e}")

    accepted = {}
    for c4 in tree.levels[idx4]:
        node, radius = c4, TRAIN_LEVELS_MM[0]
        for r in TRAIN_LEVELS_MM:
            if node is not None and len(node.indices) >= min_members:
                radius = r
                break
            node = node.parent if node is not None else None
        else:
            continue  # undersized even at 8 mm
        accepted.setdefault(id(node), (node, radius))

    out = []
    for node, radius in accepted.values():
        label = None
        if labels is not None:
            member_labels = [labels[i] for i in node.indices]
            values, counts = np.unique(member_labels, return_counts=True)
            label = values[np.argmax(counts)]
            if require_pure and counts.max() < len(member_labels):
                continue
        out.append(
            SampledCluster(
                member_indices=list(node.indices),
                level_radius_mm=radius,
                class_label=label,
                centroid=node.centroid.copy(),
            )
        )
    return out


def nearest_cluster(s12: np.ndarray, clusters) -> int:
    """Index of the sampled cluster whose centroid is MDF-closest to s12."""
    cents = np.stack([c.centroid for c in clusters])
    return int(np.argmin(mdf_to_many(s12, cents)))


def audit_member_distances(tree: ClusterTree, t: Tractogram) -> float:
    """Max over clusters of (member-to-centroid MDF) / level threshold."""
    worst = 0.0
    cache = {}
    for li, thr in enumerate(tree.thresholds):
        for c in tree.levels[li]:
            for i in c.indices:
                if i not in cache:
                    cache[i] = resample(t.streamlines[i], tree.n_resample)
                worst = max(worst, mdf(cache[i], c.centroid) / thr)
    return worst
