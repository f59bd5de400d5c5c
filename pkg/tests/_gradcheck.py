"""Central finite-difference gradient checking for the autodiff substrate."""

import numpy as np

from streamseg.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def gradcheck(op, x: np.ndarray, rtol: float = 1e-4, h: float = 1e-5):
    """Compare analytic and numeric gradients of sum(op(x)) at x.

    Returns the max elementwise error scaled by (1 + |numeric grad|).
    """
    t = Tensor(x.copy(), requires_grad=True)
    out = op(t)
    out.backward(np.ones_like(out.data))
    analytic = t.grad

    def scalar(v):
        return float(np.sum(op(Tensor(v)).data))

    numeric = numeric_grad(scalar, x.copy(), h=h)
    err = np.max(np.abs(analytic - numeric) / (1.0 + np.abs(numeric)))
    assert err <= rtol, f"gradient mismatch: {err:.3e} > {rtol}"
    return err
