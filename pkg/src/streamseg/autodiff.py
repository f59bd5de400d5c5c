"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Enough substrate for a small transformer: broadcasting elementwise ops,
matmul, softmax with additive masks, layer norm, reductions with subgradient
routing, gather/scatter, plus AdamW and a cosine learning-rate schedule.
Every forward op checks its output for NaN/Inf and names itself on failure.

A ``no_grad()`` context skips graph construction for inference.
"""

from __future__ import annotations

import contextlib
import struct

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True
CHECK_FINITE = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = parents if self.requires_grad else ()
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self):
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        for t in topo:
            t.grad = None
        self.grad = np.asarray(grad, dtype=np.float64)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def _accumulate(self, grad):
        self.grad = grad if self.grad is None else self.grad + grad


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, backward):
    # A single reduction pass: any NaN, or mixed/overflowing Inf, poisons
    # the sum; a pure +Inf/-Inf sum is itself non-finite.
    if CHECK_FINITE and not np.isfinite(np.sum(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track,
                 parents=tuple(p for p in parents if p.requires_grad), op=op)
    if track:
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient over dimensions that were broadcast in the forward."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, "add", (a, b), backward)


def sub(a, b):
    return add(a, scale(_wrap(b), -1.0))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, "mul", (a, b), backward)


def scale(a, c: float):
    a = _wrap(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _make(a.data * c, "scale", (a,), backward)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, "relu", (a,), backward)


def gelu(a):
    """Exact GELU: x * Phi(x) with the Gaussian CDF."""
    a = _wrap(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)

    def backward(g):
        a._accumulate(g * (cdf + a.data * pdf))

    return _make(a.data * cdf, "gelu", (a,), backward)


def absolute(a):
    a = _wrap(a)
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return _make(np.abs(a.data), "abs", (a,), backward)


def square(a):
    a = _wrap(a)

    def backward(g):
        a._accumulate(g * 2.0 * a.data)

    return _make(a.data * a.data, "square", (a,), backward)


def log(a):
    a = _wrap(a)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), "log", (a,), backward)


# -------------------------------------------------------------------- linear

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # Weight matrix against batched input: collapse the batch
                # dims into one GEMM instead of batched matmul + sum.
                a2 = a.data.reshape(-1, a.data.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                b._accumulate(a2.T @ g2)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, "matmul", (a, b), backward)


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), "transpose", (a,), backward)


def reshape(a, shape):
    a = _wrap(a)
    orig = a.shape

    def backward(g):
        a._accumulate(g.reshape(orig))

    return _make(a.data.reshape(shape), "reshape", (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 "concat", tuple(tensors), backward)


def broadcast_to(a, shape):
    a = _wrap(a)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), "broadcast_to", (a,),
                 backward)


def take(a, indices, axis=0):
    """Gather along an axis; gradient scatter-adds into the source.

    With ``axis=0`` and an embedding table this is an embedding lookup.
    """
    a = _wrap(a)
    indices = np.asarray(indices, dtype=np.int64)
    out_data = np.take(a.data, indices, axis=axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, axis, 0)
        # g has indices.shape inserted where `axis` was; flatten index dims.
        g_moved = np.moveaxis(
            g, tuple(range(axis, axis + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices.ravel(),
                  g_moved.reshape((-1,) + moved.shape[1:]))
        a._accumulate(ga)

    return _make(out_data, "take", (a,), backward)


def gather_rows(a, row_indices):
    """out[i] = a[i, row_indices[i]] for a 2-D tensor (per-row pick)."""
    a = _wrap(a)
    idx = np.asarray(row_indices)
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        a._accumulate(ga)

    return _make(out_data, "gather_rows", (a,), backward)


# ---------------------------------------------------------------- reductions

def reduce_sum(a, axis=None, keepdims=False):
    a = _wrap(a)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims),
                 "reduce_sum", (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / count, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg / count, a.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims),
                 "reduce_mean", (a,), backward)


def _reduce_extremum(a, axis, keepdims, kind):
    a = _wrap(a)
    fn = np.max if kind == "max" else np.min
    red = fn(a.data, axis=axis, keepdims=True)
    hit = (a.data == red)
    counts = hit.sum(axis=axis, keepdims=True)
    out_data = red if keepdims else np.squeeze(red, axis=axis)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        # Ties share the gradient equally (symmetric subgradient).
        a._accumulate(hit * (gg / counts))

    return _make(out_data, f"reduce_{kind}", (a,), backward)


def reduce_max(a, axis, keepdims=False):
    return _reduce_extremum(a, axis, keepdims, "max")


def reduce_min(a, axis, keepdims=False):
    return _reduce_extremum(a, axis, keepdims, "min")


# -------------------------------------------------------------- normalization

def softmax(a, axis=-1, mask=None):
    """Softmax along an axis with an optional additive mask; mask entries of
    large negative magnitude exclude positions."""
    a = _wrap(a)
    z = a.data if mask is None else a.data + mask
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    return _make(y, "softmax", (a,), backward)


def log_softmax(a, axis=-1):
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out_data = z - lse
    y = np.exp(out_data)

    def backward(g):
        a._accumulate(g - y * g.sum(axis=axis, keepdims=True))

    return _make(out_data, "log_softmax", (a,), backward)


def layer_norm(a, gain=None, bias=None, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along an axis, then affine."""
    a = _wrap(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def backward_core(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        a._accumulate(inv * (g - gm - xhat * gx))

    out = _make(xhat, "layer_norm", (a,), backward_core)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------- optimizer

def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.05):
    """One decoupled-weight-decay Adam update, in place on ``params``.

    ``params``/``grads`` are dicts of ndarrays; ``state`` maps each name to
    {"m", "v", "t"} and is created lazily.
    """
    b1, b2 = betas
    for name, p in params.items():
        g = grads[name]
        st = state.setdefault(
            name, {"m": np.zeros_like(p), "v": np.zeros_like(p), "t": 0})
        st["t"] += 1
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * g * g
        mhat = st["m"] / (1.0 - b1 ** st["t"])
        vhat = st["v"] / (1.0 - b2 ** st["t"])
        p -= lr * weight_decay * p
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


# ------------------------------------------------------------- serialization

TENSOR_FORMAT_VERSION = 1
_TENSOR_MAGIC = b"SSTN"


def save_tensors(path, tensors: dict):
    """Write named float64 arrays: magic, version byte, then per tensor a
    UTF-8 name, a shape header, and little-endian float64 values."""
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<B", TENSOR_FORMAT_VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != _TENSOR_MAGIC:
            raise ValueError("not a tensor file")
        (version,) = struct.unpack("<B", f.read(1))
        if version != TENSOR_FORMAT_VERSION:
            raise ValueError(f"unsupported tensor format version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
            out[name] = np.array(data, dtype=np.float64)
        return out
