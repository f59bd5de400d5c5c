"""End-to-end pipeline: dataset preparation, pretraining, fine-tuning,
inference over every streamline, and voxel-metric evaluation.

All stages are driven by one JSON config with explicit seeds; identical
configs produce identical manifests, checkpoints, and reports.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import model as M
from .clustering import (
    quickbundlesx,
    sample_clusters_move_up,
    nearest_cluster,
)
from .metrics import dice_overlap_overreach, grid_covering, metrics_report, voxelize
from .model import Checkpoint, ModelConfig
from .representations import (
    build_cluster_sample,
    build_fusion_sample,
    build_streamline_sample,
)
from .tck import load_labeled_tractogram, save_labeled_tractogram
from .tokenizer import PatchConfig, default_patch_config, tokenize
from .tractogram import Tractogram, resample

REPRESENTATIONS = ("streamline", "cluster", "fusion")


@dataclass
class PipelineConfig:
    representation: str = "streamline"
    train_data: list = field(default_factory=list)  # [[tck, labels], ...]
    val_data: list = field(default_factory=list)
    out_dir: str = "runs/default"
    quota: int = 500
    min_members: int = 10
    seed: int = 0
    n_patches: int = 64
    patch_size: int | None = None  # default depends on representation
    embed_dim: int = 192
    extractor_depth: int = 4
    generator_depth: int = 2
    n_heads: int = 6
    intermittent_ratio: float = 0.1
    lr0: float = 1e-4
    weight_decay: float = 0.05
    max_epochs: int = 150
    pretrain_epochs: int | None = None
    finetune_epochs: int | None = None
    batch_size: int = 32
    patience: int = 15
    voxel_size_mm: float = 1.0

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.quota < 1:
            raise ValueError("quota must be >= 1")
        if self.patch_size is None:
            self.patch_size = default_patch_config(self.representation).patch_size

    @property
    def patch_config(self) -> PatchConfig:
        return PatchConfig(n_patches=self.n_patches, patch_size=self.patch_size)

    def model_config(self, n_classes: int) -> ModelConfig:
        return ModelConfig(
            n_classes=n_classes,
            embed_dim=self.embed_dim,
            extractor_depth=self.extractor_depth,
            generator_depth=self.generator_depth,
            n_heads=self.n_heads,
            intermittent_ratio=self.intermittent_ratio,
            n_patches=self.n_patches,
            patch_size=self.patch_size,
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as f:
            return cls(**json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)


# -------------------------------------------------------------- sample store

@dataclass
class SampleStore:
    points: np.ndarray        # (N, n_points, 3)
    labels: np.ndarray        # (N,) int indices into class_names, -1 if none
    class_names: list

    def __len__(self):
        return len(self.points)

    def save(self, path):
        np.savez_compressed(path, points=self.points, labels=self.labels,
                            class_names=np.array(self.class_names, dtype=object))

    @classmethod
    def load(cls, path) -> "SampleStore":
        z = np.load(path, allow_pickle=True)
        return cls(points=z["points"], labels=z["labels"],
                   class_names=list(z["class_names"]))


def _balanced_pick(candidates_by_class, quota, rng, context=""):
    """Pick exactly `quota` candidates per class, or all with a warning."""
    picked = {}
    for name, cands in candidates_by_class.items():
        if len(cands) >= quota:
            idx = rng.choice(len(cands), size=quota, replace=False)
            picked[name] = [cands[i] for i in idx]
        else:
            warnings.warn(
                f"class {name!r}{context}: only {len(cands)} candidates "
                f"for quota {quota}, using all"
            )
            picked[name] = list(cands)
    return picked


def _subject_samples(config: PipelineConfig, t: Tractogram, subject_rng):
    """Balanced PointCloudSamples for one labeled subject."""
    class_names = list(t.class_names)
    rep = config.representation
    samples = []

    if rep == "streamline":
        by_class = {c: [] for c in class_names}
        for i, lab in enumerate(t.labels):
            by_class[lab].append(i)
        picked = _balanced_pick(by_class, config.quota, subject_rng)
        for name, indices in picked.items():
            for i in indices:
                samples.append(build_streamline_sample(
                    t.streamlines[i], label=name, source=i))
        return samples

    tree = quickbundlesx(t)
    clusters = sample_clusters_move_up(
        tree, min_members=config.min_members, labels=t.labels)

    if rep == "cluster":
        by_class = {c: [] for c in class_names}
        for c in clusters:
            by_class[c.class_label].append(c)
        picked = _balanced_pick(by_class, config.quota, subject_rng)
        for name, cs in picked.items():
            for c in cs:
                samples.append(build_cluster_sample(c, t, subject_rng))
        return samples

    # fusion: per-streamline samples with the streamline's cluster neighbors
    cluster_of = {}
    for c in clusters:
        for i in c.member_indices:
            cluster_of[i] = c
    by_class = {c: [] for c in class_names}
    for i, lab in enumerate(t.labels):
        by_class[lab].append(i)
    picked = _balanced_pick(by_class, config.quota, subject_rng)
    for name, indices in picked.items():
        for i in indices:
            c = cluster_of.get(i)
            neighbors = (
                [t.streamlines[j] for j in c.member_indices if j != i]
                if c is not None else []
            )
            samples.append(build_fusion_sample(
                t.streamlines[i], neighbors, subject_rng, label=name, source=i))
    return samples


def _store_from_samples(samples, class_names) -> SampleStore:
    index = {c: k for k, c in enumerate(class_names)}
    points = np.stack([s.points for s in samples])
    labels = np.array([index.get(s.label, -1) for s in samples], dtype=np.int64)
    return SampleStore(points=points, labels=labels, class_names=list(class_names))


def cmd_prepare(config: PipelineConfig):
    """Build balanced train/val sample stores and a per-class count manifest."""
    os.makedirs(config.out_dir, exist_ok=True)
    stores = {}
    class_names = None
    for split, data in (("train", config.train_data), ("val", config.val_data)):
        samples = []
        for si, (tck_path, labels_path) in enumerate(data):
            t = load_labeled_tractogram(tck_path, labels_path)
            if t.labels is None:
                raise ValueError(f"subject {tck_path} has no labels")
            if class_names is None:
                class_names = list(t.class_names)
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 0 if split == "train" else 1, si]))
            samples.extend(_subject_samples(config, t, rng))
        if samples:
            store = _store_from_samples(samples, class_names)
            store.save(os.path.join(config.out_dir, f"{split}.npz"))
            stores[split] = store
    manifest = {
        "representation": config.representation,
        "class_names": class_names,
        "counts": {
            split: {
                c: int((store.labels == k).sum())
                for k, c in enumerate(store.class_names)
            }
            for split, store in stores.items()
        },
    }
    with open(os.path.join(config.out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return stores


# ----------------------------------------------------------------- training

def _tokenize_batch(points: np.ndarray, patch_config: PatchConfig):
    """Tokenize a batch of clouds; patches/centers returned in Morton order."""
    patches, centers = [], []
    for cloud in points:
        ts = tokenize(cloud, patch_config)
        patches.append(ts.patches[ts.order])
        centers.append(ts.centers[ts.order])
    return np.stack(patches), np.stack(centers)


def _batch_masks(config: ModelConfig, batch: int, ratio: float, rng):
    if ratio <= 0.0:
        return np.triu(np.full((config.n_patches, config.n_patches), M.MASKED), k=1)
    masks = np.stack([
        M.dual_mask(config.n_patches, ratio, rng) for _ in range(batch)
    ])
    return masks[:, None, :, :]  # broadcast over heads


_STAGE_IDS = {"pretrain": 1, "finetune": 2}


def _epoch_rng(seed, stage, epoch):
    return np.random.default_rng(
        np.random.SeedSequence([seed, _STAGE_IDS[stage], epoch]))


def _run_epoch(params, opt_state, pcfg: PipelineConfig, mcfg: ModelConfig,
               store: SampleStore, epoch: int, stage: str,
               global_step: int, total_steps: int):
    """One training epoch; returns (mean loss, new global_step)."""
    rng = _epoch_rng(pcfg.seed, stage, epoch)
    order = rng.permutation(len(store))
    losses = []
    pretraining = stage == "pretrain"
    ratio = mcfg.intermittent_ratio if pretraining else 0.0
    for start in range(0, len(order), pcfg.batch_size):
        idx = order[start : start + pcfg.batch_size]
        clouds = np.stack(
            [M.train_transforms(store.points[i], rng) for i in idx])
        patches, centers = _tokenize_batch(clouds, pcfg.patch_config)
        mask = _batch_masks(mcfg, len(idx), ratio, rng)
        pt = M.wrap_params(params)
        latents, logits, pred = M.forward_all(pt, mcfg, patches, centers, mask)
        cd1, cd2 = M.next_patch_chamfer(pred, patches)
        if pretraining:
            loss = ad.add(ad.scale(cd1, 0.5), ad.scale(cd2, 0.5))
        else:
            loss = M.finetune_loss(logits, store.labels[idx], ad.add(cd1, cd2))
        loss.backward()
        # heads outside the stage's loss (the classifier during pretraining)
        # get no gradient; keep them stationary apart from weight decay
        grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                 for k, t in pt.items()}
        lr = ad.cosine_lr(min(global_step, total_steps), total_steps, pcfg.lr0)
        ad.adamw_step(params, grads, opt_state, lr,
                      weight_decay=pcfg.weight_decay)
        losses.append(loss.item())
        global_step += 1
    return float(np.mean(losses)), global_step


def _eval_store(params, pcfg: PipelineConfig, mcfg: ModelConfig,
                store: SampleStore, want_loss_stage: str):
    """Validation pass: (mean loss, macro accuracy)."""
    causal = np.triu(np.full((mcfg.n_patches, mcfg.n_patches), M.MASKED), k=1)
    losses, preds = [], np.empty(len(store), dtype=np.int64)
    with ad.no_grad():
        for start in range(0, len(store), pcfg.batch_size):
            sl = slice(start, start + pcfg.batch_size)
            patches, centers = _tokenize_batch(store.points[sl], pcfg.patch_config)
            pt = M.wrap_params(params, requires_grad=False)
            latents, logits, pred = M.forward_all(pt, mcfg, patches, centers, causal)
            cd1, cd2 = M.next_patch_chamfer(pred, patches)
            if want_loss_stage == "pretrain":
                loss = ad.add(ad.scale(cd1, 0.5), ad.scale(cd2, 0.5))
            else:
                loss = M.finetune_loss(logits, store.labels[sl], ad.add(cd1, cd2))
            losses.append(loss.item())
            preds[sl] = np.argmax(logits.data, axis=-1)
    accs = []
    for k in range(len(store.class_names)):
        sel = store.labels == k
        if sel.any():
            accs.append(float((preds[sel] == k).mean()))
    macro_acc = float(np.mean(accs)) if accs else 0.0
    return float(np.mean(losses)), macro_acc


def _load_stores(config: PipelineConfig):
    train = SampleStore.load(os.path.join(config.out_dir, "train.npz"))
    val_path = os.path.join(config.out_dir, "val.npz")
    val = SampleStore.load(val_path) if os.path.exists(val_path) else None
    return train, val


def cmd_pretrain(config: PipelineConfig, resume: Checkpoint | None = None) -> Checkpoint:
    """Autoregressive next-patch pretraining with the 50:50 Chamfer loss."""
    train, val = _load_stores(config)
    if len(train) == 0:
        raise ValueError("empty sample store")
    mcfg = config.model_config(len(train.class_names))
    n_epochs = min(config.max_epochs, config.pretrain_epochs or config.max_epochs)
    steps_per_epoch = int(np.ceil(len(train) / config.batch_size))
    total_steps = config.max_epochs * steps_per_epoch

    if resume is not None:
        params = dict(resume.params)
        opt_state = dict(resume.optimizer_state)
        start_epoch = resume.epoch
    else:
        params = M.init_params(mcfg, seed=config.seed)
        opt_state = {}
        start_epoch = 0

    best_loss, best_epoch = np.inf, -1
    ckpt = None
    for epoch in range(start_epoch, n_epochs):
        global_step = epoch * steps_per_epoch
        train_loss, _ = _run_epoch(params, opt_state, config, mcfg, train,
                                   epoch, "pretrain", global_step, total_steps)
        val_loss = train_loss
        if val is not None and len(val):
            val_loss, _ = _eval_store(params, config, mcfg, val, "pretrain")
        ckpt = Checkpoint(config=mcfg, params={k: v.copy() for k, v in params.items()},
                          optimizer_state=opt_state, epoch=epoch + 1,
                          representation=config.representation,
                          class_names=train.class_names)
        ckpt.save(os.path.join(config.out_dir, "pretrain", "last"))
        if val_loss < best_loss - 1e-12:
            best_loss, best_epoch = val_loss, epoch
            ckpt.save(os.path.join(config.out_dir, "pretrain", "best"))
        if epoch - best_epoch >= config.patience:
            break
    return ckpt


def cmd_finetune(config: PipelineConfig, pretrained: Checkpoint | None = None) -> Checkpoint:
    """Classification fine-tuning with CE + 3 * Chamfer; intermittent masking
    is forced off. Saves the checkpoint with the best validation macro
    accuracy."""
    train, val = _load_stores(config)
    if len(train) == 0:
        raise ValueError("empty sample store")
    mcfg = config.model_config(len(train.class_names))
    if pretrained is not None:
        if pretrained.class_names and list(pretrained.class_names) != train.class_names:
            raise ValueError("class names differ from the pretrained manifest")
        params = {k: v.copy() for k, v in pretrained.params.items()}
    else:
        params = M.init_params(mcfg, seed=config.seed)
    opt_state = {}
    n_epochs = min(config.max_epochs, config.finetune_epochs or config.max_epochs)
    steps_per_epoch = int(np.ceil(len(train) / config.batch_size))
    total_steps = n_epochs * steps_per_epoch

    best_acc, best = -1.0, None
    global_step = 0
    for epoch in range(n_epochs):
        _, global_step = _run_epoch(params, opt_state, config, mcfg, train,
                                    epoch, "finetune", global_step, total_steps)
        acc = 1.0
        if val is not None and len(val):
            _, acc = _eval_store(params, config, mcfg, val, "finetune")
        ckpt = Checkpoint(config=mcfg, params={k: v.copy() for k, v in params.items()},
                          optimizer_state=opt_state, epoch=epoch + 1,
                          representation=config.representation,
                          class_names=train.class_names)
        ckpt.save(os.path.join(config.out_dir, "finetune", "last"))
        if acc > best_acc:
            best_acc, best = acc, ckpt
            ckpt.save(os.path.join(config.out_dir, "finetune", "best"))
    return best if best is not None else ckpt


# ---------------------------------------------------------------- inference

def _classify_clouds(ckpt: Checkpoint, pcfg: PipelineConfig, clouds) -> np.ndarray:
    """Predicted class index per cloud (argmax over the classifier logits)."""
    mcfg = ckpt.config
    causal = np.triu(np.full((mcfg.n_patches, mcfg.n_patches), M.MASKED), k=1)
    out = np.empty(len(clouds), dtype=np.int64)
    with ad.no_grad():
        pt = M.wrap_params(ckpt.params, requires_grad=False)
        for start in range(0, len(clouds), pcfg.batch_size):
            batch = clouds[start : start + pcfg.batch_size]
            patches, centers = _tokenize_batch(np.stack(batch), pcfg.patch_config)
            latents = M.forward_latents(pt, mcfg, patches, centers, causal)
            logits = M.classification_head(pt, latents)
            out[start : start + len(batch)] = np.argmax(logits.data, axis=-1)
    return out


def cmd_infer(config: PipelineConfig, ckpt: Checkpoint, t: Tractogram) -> Tractogram:
    """Classify every streamline of a tractogram, leaving none behind."""
    if ckpt.representation != config.representation:
        raise ValueError(
            f"checkpoint was trained on {ckpt.representation!r}, "
            f"config asks for {config.representation!r}"
        )
    class_names = list(ckpt.class_names)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    rep = config.representation

    if rep == "streamline":
        clouds = [build_streamline_sample(s).points for s in t.streamlines]
        pred = _classify_clouds(ckpt, config, clouds)
        labels = [class_names[k] for k in pred]
        return Tractogram(streamlines=t.streamlines, labels=labels,
                          class_names=class_names)

    tree = quickbundlesx(t)
    # Test-time relaxation: accept singleton clusters so coverage is total.
    clusters = sample_clusters_move_up(tree, min_members=1)

    if rep == "cluster":
        clouds = [build_cluster_sample(c, t, rng).points for c in clusters]
        pred = _classify_clouds(ckpt, config, clouds)
        labels = [None] * len(t)
        for c, k in zip(clusters, pred):
            for i in c.member_indices:
                labels[i] = class_names[k]
        # Any streamline not covered inherits the MDF-nearest cluster label.
        for i, lab in enumerate(labels):
            if lab is None:
                s12 = resample(t.streamlines[i], tree.n_resample)
                labels[i] = class_names[pred[nearest_cluster(s12, clusters)]]
        return Tractogram(streamlines=t.streamlines, labels=labels,
                          class_names=class_names)

    # fusion
    cluster_of = {}
    for c in clusters:
        for i in c.member_indices:
            cluster_of[i] = c
    clouds = []
    for i, s in enumerate(t.streamlines):
        c = cluster_of.get(i)
        neighbors = (
            [t.streamlines[j] for j in c.member_indices if j != i]
            if c is not None else []
        )
        clouds.append(build_fusion_sample(s, neighbors, rng).points)
    pred = _classify_clouds(ckpt, config, clouds)
    labels = [class_names[k] for k in pred]
    return Tractogram(streamlines=t.streamlines, labels=labels,
                      class_names=class_names)


def export_by_class(t: Tractogram, out_dir, datatype="Float32LE"):
    """Write one TCK (plus label sidecar) per predicted class."""
    os.makedirs(out_dir, exist_ok=True)
    for name in t.class_names:
        idx = [i for i, lab in enumerate(t.labels) if lab == name]
        if not idx:
            continue
        sub = Tractogram(streamlines=[t.streamlines[i] for i in idx],
                         labels=[name] * len(idx), class_names=[name])
        save_labeled_tractogram(
            sub,
            os.path.join(out_dir, f"{name}.tck"),
            os.path.join(out_dir, f"{name}.labels"),
            datatype=datatype,
        )


# --------------------------------------------------------------- evaluation

def evaluate_rows(pred: Tractogram, ref: Tractogram, voxel_size_mm: float = 1.0):
    """Per-class (name, dice, overlap, overreach) rows, over the reference's
    class list. Classes missing from the prediction score zeros."""
    all_points = np.concatenate(
        [np.concatenate(ref.streamlines), np.concatenate(pred.streamlines)])
    dims, origin = grid_covering(all_points, voxel_size_mm)
    rows = []
    for name in ref.class_names:
        ref_lines = [s for s, lab in zip(ref.streamlines, ref.labels) if lab == name]
        pred_lines = [s for s, lab in zip(pred.streamlines, pred.labels) if lab == name]
        if not ref_lines:
            continue
        g = voxelize(ref_lines, voxel_size_mm, dims, origin)
        p = voxelize(pred_lines, voxel_size_mm, dims, origin)
        rows.append((name,) + dice_overlap_overreach(p, g))
    return rows


def cmd_evaluate(pred: Tractogram, ref: Tractogram, voxel_size_mm: float = 1.0) -> str:
    return metrics_report(evaluate_rows(pred, ref, voxel_size_mm))
