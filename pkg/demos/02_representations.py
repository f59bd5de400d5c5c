"""Cluster a subject with QuickBundlesX and build the three point-cloud
representations used for training.

Run: python demos/02_representations.py
"""

import numpy as np

from streamseg.clustering import quickbundlesx, sample_clusters_move_up
from streamseg.representations import (
    build_cluster_sample,
    build_fusion_sample,
    build_streamline_sample,
)
from streamseg.synthetic import default_corpus_specs, generate

t = generate(default_corpus_specs(n_streamlines=60), seed=11)
print(f"subject: {len(t)} streamlines, {len(t.class_names)} classes")

tree = quickbundlesx(t)
for level, radius in enumerate(tree.thresholds):
    print(f"  {radius:>4.0f} mm: {len(tree.levels[level])} clusters")

clusters = sample_clusters_move_up(tree, min_members=10, labels=t.labels)
print(f"\nmove-up sampling kept {len(clusters)} training clusters:")
for c in clusters[:4]:
    print(f"  {c.class_label:<12} {len(c.member_indices):>3} members "
          f"accepted at {c.level_radius_mm:.0f} mm")

rng = np.random.default_rng(0)
s = t.streamlines[0]

stream = build_streamline_sample(s, label=t.labels[0])
print(f"\nstreamline sample: {stream.points.shape} (resampled polyline)")

clus = build_cluster_sample(clusters[0], t, rng)
print(f"cluster sample:    {clus.points.shape} "
      f"(drawn from {len(clusters[0].member_indices)} members)")

neighbors = [t.streamlines[j] for j in clusters[0].member_indices[1:]]
fusion = build_fusion_sample(s, neighbors, rng, label=t.labels[0])
own = np.array_equal(fusion.points[:256], stream.points)
print(f"fusion sample:     {fusion.points.shape} (first 256 = own points: {own})")
