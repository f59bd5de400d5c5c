"""Registration-free white-matter streamline segmentation toolkit."""

from .tractogram import Tractogram, mdf, resample
from .tck import read_tck, write_tck, read_labeled, write_labeled
from .synthetic import BundleSpec, generate, mirror, default_corpus_specs
from .clustering import quickbundlesx, sample_clusters_move_up
from .representations import (
    PointCloudSample,
    build_streamline_sample,
    build_cluster_sample,
    build_fusion_sample,
)
from .tokenizer import (
    PatchConfig,
    TokenizedSample,
    farthest_point_sample,
    knn_patches,
    morton_order,
    tokenize,
)
from .model import ModelConfig, Checkpoint, chamfer
from .metrics import VoxelMask, voxelize, dice_overlap_overreach
from .pipeline import PipelineConfig

__version__ = "0.1.0"
