"""Point-patch GPT: patch encoder, extractor/generator decoder stacks with
dual masking, prediction and classification heads, and the training losses.

All forward functions operate on batched arrays (leading batch dimension)
and run on the reverse-mode substrate in :mod:`streamseg.autodiff`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASKED = -1e30  # additive attention sentinel; exp underflows to exactly 0


@dataclass
class ModelConfig:
    n_classes: int
    embed_dim: int = 192
    extractor_depth: int = 4
    generator_depth: int = 2
    n_heads: int = 6
    intermittent_ratio: float = 0.1
    n_patches: int = 64
    patch_size: int = 32

    def __post_init__(self):
        if self.embed_dim % 6 != 0:
            raise ValueError("embed_dim must be divisible by 6")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if not self.generator_depth < self.extractor_depth:
            raise ValueError("generator must be shallower than the extractor")
        if not 0.0 <= self.intermittent_ratio < 1.0:
            raise ValueError("intermittent_ratio must be in [0, 1)")


# ------------------------------------------------------------------ parameters

def _linear_init(rng, fan_in, fan_out):
    return rng.normal(0.0, 0.02, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Fresh parameter arrays keyed by dotted names."""
    rng = np.random.default_rng(seed)
    D, K, C = config.embed_dim, config.patch_size, config.n_classes
    p = {}

    def lin(name, fi, fo):
        p[f"{name}.w"] = _linear_init(rng, fi, fo)
        p[f"{name}.b"] = np.zeros(fo)

    def ln(name):
        p[f"{name}.g"] = np.ones(D)
        p[f"{name}.b"] = np.zeros(D)

    # PointNet-style patch encoder
    lin("enc.fc1", 3, 64)
    lin("enc.fc2", 64, 128)
    lin("enc.fc3", 256, 256)
    lin("enc.fc4", 256, D)

    def block(prefix, depth):
        for i in range(depth):
            ln(f"{prefix}.{i}.ln1")
            lin(f"{prefix}.{i}.q", D, D)
            lin(f"{prefix}.{i}.k", D, D)
            lin(f"{prefix}.{i}.v", D, D)
            lin(f"{prefix}.{i}.proj", D, D)
            ln(f"{prefix}.{i}.ln2")
            lin(f"{prefix}.{i}.mlp1", D, 4 * D)
            lin(f"{prefix}.{i}.mlp2", 4 * D, D)
        ln(f"{prefix}.lnf")

    block("ext", config.extractor_depth)
    lin("gen.dir", 3, D)
    block("gen", config.generator_depth)

    lin("head.fc1", D, D)
    lin("head.fc2", D, K * 3)
    lin("cls.fc1", 2 * D, D)
    lin("cls.fc2", D, C)
    return p


def wrap_params(params: dict, requires_grad: bool = True) -> dict:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


# -------------------------------------------------------------------- encoder

def encode_patches(pt: dict, patches) -> Tensor:
    """PointNet-style patch embedding, permutation-invariant over the K
    points of each patch.

    patches: (..., P, K, 3) relative coordinates -> tokens (..., P, D).
    """
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    h = ad.relu(ad.add(ad.matmul(x, pt["enc.fc1.w"]), pt["enc.fc1.b"]))
    h = ad.relu(ad.add(ad.matmul(h, pt["enc.fc2.w"]), pt["enc.fc2.b"]))
    pooled = ad.reduce_max(h, axis=-2, keepdims=True)          # (..., P, 1, 128)
    pooled = ad.broadcast_to(pooled, h.shape)                  # repeat over K
    h = ad.concat([h, pooled], axis=-1)                        # (..., P, K, 256)
    h = ad.relu(ad.add(ad.matmul(h, pt["enc.fc3.w"]), pt["enc.fc3.b"]))
    h = ad.add(ad.matmul(h, pt["enc.fc4.w"]), pt["enc.fc4.b"])
    return ad.reduce_max(h, axis=-2)                           # (..., P, D)


def sinusoidal_pe(centers: np.ndarray, embed_dim: int) -> np.ndarray:
    """Per-axis interleaved sin/cos encodings at geometric frequencies,
    concatenated x||y||z. centers (..., 3) -> (..., embed_dim)."""
    if embed_dim % 6 != 0:
        raise ValueError("embed_dim must be divisible by 6")
    d_axis = embed_dim // 3
    half = d_axis // 2
    freqs = np.power(10000.0, -2.0 * np.arange(half) / d_axis)
    parts = []
    for axis in range(3):
        ang = centers[..., axis : axis + 1] * freqs  # (..., half)
        pe = np.empty(ang.shape[:-1] + (d_axis,))
        pe[..., 0::2] = np.sin(ang)
        pe[..., 1::2] = np.cos(ang)
        parts.append(pe)
    return np.concatenate(parts, axis=-1)


def dual_mask(n_positions: int, ratio: float, rng=None) -> np.ndarray:
    """Causal mask plus random intermittent masking of preceding tokens.

    Row i additionally masks a uniform floor(ratio * i)-subset of positions
    0..i-1; the diagonal is never masked. ratio=0 gives the plain causal
    mask used at fine-tune and inference time.
    """
    mask = np.triu(np.full((n_positions, n_positions), MASKED), k=1)
    if ratio > 0.0:
        if rng is None:
            raise ValueError("intermittent masking needs an rng")
        for i in range(1, n_positions):
            m = int(np.floor(ratio * i))
            if m:
                hidden = rng.choice(i, size=m, replace=False)
                mask[i, hidden] = MASKED
    return mask


# ------------------------------------------------------------- decoder blocks

def _attention(pt, prefix, x: Tensor, mask: np.ndarray, n_heads: int) -> Tensor:
    """Masked multi-head self-attention. x: (B, P, D); mask additive (P, P)
    or (B, 1, P, P)."""
    B, P, D = x.shape
    dh = D // n_heads

    def heads(t):  # (B, P, D) -> (B, H, P, dh)
        t = ad.reshape(t, (B, P, n_heads, dh))
        return ad.transpose(t, (0, 2, 1, 3))

    q = heads(ad.add(ad.matmul(x, pt[f"{prefix}.q.w"]), pt[f"{prefix}.q.b"]))
    k = heads(ad.add(ad.matmul(x, pt[f"{prefix}.k.w"]), pt[f"{prefix}.k.b"]))
    v = heads(ad.add(ad.matmul(x, pt[f"{prefix}.v.w"]), pt[f"{prefix}.v.b"]))
    att = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    att = ad.softmax(att, axis=-1, mask=mask)
    out = ad.matmul(att, v)                       # (B, H, P, dh)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, P, D))
    return ad.add(ad.matmul(out, pt[f"{prefix}.proj.w"]), pt[f"{prefix}.proj.b"])


def _decoder_block(pt, prefix, x: Tensor, mask, n_heads) -> Tensor:
    """Pre-norm transformer decoder block: attention + MLP with residuals."""
    h = ad.layer_norm(x, pt[f"{prefix}.ln1.g"], pt[f"{prefix}.ln1.b"])
    x = ad.add(x, _attention(pt, prefix, h, mask, n_heads))
    h = ad.layer_norm(x, pt[f"{prefix}.ln2.g"], pt[f"{prefix}.ln2.b"])
    h = ad.gelu(ad.add(ad.matmul(h, pt[f"{prefix}.mlp1.w"]), pt[f"{prefix}.mlp1.b"]))
    h = ad.add(ad.matmul(h, pt[f"{prefix}.mlp2.w"]), pt[f"{prefix}.mlp2.b"])
    return ad.add(x, h)


def _stack(pt, prefix, depth, x, mask, n_heads):
    for i in range(depth):
        x = _decoder_block(pt, f"{prefix}.{i}", x, mask, n_heads)
    return ad.layer_norm(x, pt[f"{prefix}.lnf.g"], pt[f"{prefix}.lnf.b"])


def extractor_forward(pt, config: ModelConfig, tokens: Tensor,
                      centers_pe: np.ndarray, mask: np.ndarray) -> Tensor:
    """Tokens plus sinusoidal position encodings through the extractor stack."""
    x = ad.add(tokens, Tensor(centers_pe))
    return _stack(pt, "ext", config.extractor_depth, x, mask, config.n_heads)


def relative_directions(centers: np.ndarray) -> np.ndarray:
    """Unit step directions between consecutive (already ordered) centers;
    zero for the first position and for coincident centers."""
    d = np.zeros_like(centers)
    step = centers[..., 1:, :] - centers[..., :-1, :]
    norm = np.linalg.norm(step, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    d[..., 1:, :] = np.where(norm > 0, step / safe, 0.0)
    return d


def generator_forward(pt, config: ModelConfig, latents: Tensor,
                      centers: np.ndarray, mask: np.ndarray) -> Tensor:
    """Latents plus relative patch-direction encodings through the shallower
    generator stack; masked-patch locations are never injected."""
    dirs = Tensor(relative_directions(centers))
    inject = ad.add(ad.matmul(dirs, pt["gen.dir.w"]), pt["gen.dir.b"])
    x = ad.add(latents, inject)
    return _stack(pt, "gen", config.generator_depth, x, mask, config.n_heads)


def prediction_head(pt, config: ModelConfig, gen_out: Tensor) -> Tensor:
    """Two FC layers with ReLU; position i predicts patch i+1's relative
    coordinates. Output (..., P, K, 3)."""
    h = ad.relu(ad.add(ad.matmul(gen_out, pt["head.fc1.w"]), pt["head.fc1.b"]))
    y = ad.add(ad.matmul(h, pt["head.fc2.w"]), pt["head.fc2.b"])
    return ad.reshape(y, y.shape[:-1] + (config.patch_size, 3))


def classification_head(pt, latents: Tensor) -> Tensor:
    """Mean-pool and max-pool over positions, concatenated, then two FC
    layers. latents (..., P, D) -> logits (..., C)."""
    pooled = ad.concat(
        [ad.reduce_mean(latents, axis=-2), ad.reduce_max(latents, axis=-2)],
        axis=-1,
    )
    h = ad.relu(ad.add(ad.matmul(pooled, pt["cls.fc1.w"]), pt["cls.fc1.b"]))
    return ad.add(ad.matmul(h, pt["cls.fc2.w"]), pt["cls.fc2.b"])


# --------------------------------------------------------------------- losses

def chamfer(a: np.ndarray, b: np.ndarray, norm: str = "L1") -> float:
    """Bidirectional mean nearest-neighbor distance between two point sets.

    norm "L1" uses L1 point distances; "L2" uses squared Euclidean ones.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("chamfer distance needs nonempty point sets")
    diff = a[:, None, :] - b[None, :, :]
    if norm == "L1":
        d = np.abs(diff).sum(axis=-1)
    elif norm == "L2":
        d = (diff * diff).sum(axis=-1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def chamfer_terms(pred: Tensor, target: np.ndarray):
    """Differentiable Chamfer distances between matched sets.

    pred (..., K, 3) against target (..., K, 3); returns (cd_l1, cd_l2)
    tensors of shape (...,), each the sum of both directional means.
    """
    t = Tensor(target)
    shape_a = pred.shape[:-2] + (pred.shape[-2], 1, 3)
    shape_b = target.shape[:-2] + (1, target.shape[-2], 3)
    diff = ad.sub(ad.reshape(pred, shape_a), ad.reshape(t, shape_b))
    l1 = ad.reduce_sum(ad.absolute(diff), axis=-1)
    l2 = ad.reduce_sum(ad.square(diff), axis=-1)

    def both_ways(d):
        fwd = ad.reduce_mean(ad.reduce_min(d, axis=-1), axis=-1)
        bwd = ad.reduce_mean(ad.reduce_min(d, axis=-2), axis=-1)
        return ad.add(fwd, bwd)

    return both_ways(l1), both_ways(l2)


def next_patch_chamfer(pred_patches: Tensor, target_patches: np.ndarray):
    """Chamfer terms between predictions at positions 0..P-2 and the true
    patches at 1..P-1, averaged over supervised positions (and batch)."""
    n_pos = pred_patches.shape[-3]
    pred = ad.take(pred_patches, np.arange(n_pos - 1), axis=pred_patches.data.ndim - 3)
    target = np.take(target_patches, np.arange(1, n_pos),
                     axis=target_patches.ndim - 3)
    cd1, cd2 = chamfer_terms(pred, target)
    return ad.reduce_mean(ad.reshape(cd1, (-1,)), axis=0), \
        ad.reduce_mean(ad.reshape(cd2, (-1,)), axis=0)


def pretrain_loss(pred_patches: Tensor, target_patches: np.ndarray) -> Tensor:
    """50:50 blend of Chamfer L1 and (squared) L2 reconstruction losses."""
    cd1, cd2 = next_patch_chamfer(pred_patches, target_patches)
    return ad.add(ad.scale(cd1, 0.5), ad.scale(cd2, 0.5))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n_classes = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("label out of range")
    logp = ad.log_softmax(ad.reshape(logits, (-1, n_classes)), axis=-1)
    picked = ad.gather_rows(logp, labels)
    return ad.scale(ad.reduce_mean(picked, axis=0), -1.0)


def finetune_loss(logits: Tensor, labels, chamfer_term: Tensor) -> Tensor:
    """Cross entropy plus the Chamfer reconstruction term at 1:3 weight."""
    return ad.add(cross_entropy(logits, labels), ad.scale(chamfer_term, 3.0))


# ----------------------------------------------------------- train transforms

ROTATION_MAX_RAD = np.deg2rad(15.0)
SCALE_RANGE = (0.9, 1.1)


def train_transforms(points: np.ndarray, rng: np.random.Generator,
                     train: bool = True) -> np.ndarray:
    """Random rotation about the superior-inferior (z) axis within +-15
    degrees, uniform scale in [0.9, 1.1], and point-order shuffle.
    Identity at eval time."""
    if not train:
        return points
    ang = rng.uniform(-ROTATION_MAX_RAD, ROTATION_MAX_RAD)
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    scale = rng.uniform(*SCALE_RANGE)
    out = (points @ rot.T) * scale
    return out[rng.permutation(len(out))]


# ----------------------------------------------------------------- checkpoint

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_PARAMS = "params.bin"
CHECKPOINT_OPTIM = "optim.bin"


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    representation: str = "streamline"
    class_names: list = field(default_factory=list)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        ad.save_tensors(os.path.join(path, CHECKPOINT_PARAMS), self.params)
        flat_opt = {}
        for name, st in self.optimizer_state.items():
            flat_opt[f"{name}.m"] = st["m"]
            flat_opt[f"{name}.v"] = st["v"]
            flat_opt[f"{name}.t"] = np.array(float(st["t"]))
        ad.save_tensors(os.path.join(path, CHECKPOINT_OPTIM), flat_opt)
        manifest = {
            "config": asdict(self.config),
            "epoch": self.epoch,
            "representation": self.representation,
            "class_names": list(self.class_names),
        }
        with open(os.path.join(path, CHECKPOINT_MANIFEST), "w") as f:
            json.dump(manifest, f, indent=2)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(os.path.join(path, CHECKPOINT_MANIFEST)) as f:
            manifest = json.load(f)
        params = ad.load_tensors(os.path.join(path, CHECKPOINT_PARAMS))
        flat_opt = ad.load_tensors(os.path.join(path, CHECKPOINT_OPTIM))
        opt = {}
        for key, arr in flat_opt.items():
            name, kind = key.rsplit(".", 1)
            st = opt.setdefault(name, {})
            st[kind] = int(arr) if kind == "t" else arr
        return cls(
            config=ModelConfig(**manifest["config"]),
            params=params,
            optimizer_state=opt,
            epoch=manifest["epoch"],
            representation=manifest["representation"],
            class_names=manifest["class_names"],
        )


# ------------------------------------------------------------ whole forwards

def forward_latents(pt, config: ModelConfig, patches: np.ndarray,
                    centers: np.ndarray, mask: np.ndarray) -> Tensor:
    """Patches (B, P, K, 3) + centers (B, P, 3) -> extractor latents (B, P, D)."""
    tokens = encode_patches(pt, patches)
    pe = sinusoidal_pe(centers, config.embed_dim)
    return extractor_forward(pt, config, tokens, pe, mask)


def forward_all(pt, config: ModelConfig, patches, centers, mask):
    """Returns (latents, logits, predicted next patches)."""
    latents = forward_latents(pt, config, patches, centers, mask)
    logits = classification_head(pt, latents)
    causal = np.triu(np.full((config.n_patches, config.n_patches), MASKED), k=1)
    gen = generator_forward(pt, config, latents, centers, causal)
    pred = prediction_head(pt, config, gen)
    return latents, logits, pred
