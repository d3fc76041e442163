"""Shared numerical helpers for the test suite."""

import numpy as np


def rel_error(analytic, numeric) -> float:
    """Max absolute difference relative to the larger gradient's scale."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def numeric_gradient(f, x, h) -> np.ndarray:
    """Central finite differences of the scalar f() wrt every entry of x.

    x is perturbed in place and restored; the effective step is measured
    after storage so float32 quantization cannot bias the quotient.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(flat[i])
        fp = f()
        flat[i] = orig - h
        lo = float(flat[i])
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (hi - lo)
    return grad
