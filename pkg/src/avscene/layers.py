"""Functional neural-network layers with exact backward passes.

Each forward returns (out, cache); the matching backward consumes that
cache plus the upstream gradient. 4-D activations are NHWC. Kernels
preserve the input dtype, so one code path serves float32 training and
float64 gradient checking.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError, SpecError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check_cache(cache, layer: str):
    if cache is None:
        raise StateError(f"{layer} backward called without a forward cache")


def _check_mode(mode: str):
    if mode not in ("train", "eval"):
        raise SpecError(f"mode must be 'train' or 'eval', got {mode!r}")


def conv_forward(x, w, b):
    """3x3 convolution, stride 1, same padding.

    x: (N, H, W, C), w: (3, 3, C, F), b: (F,) -> out (N, H, W, F).

    Runs one GEMM per kernel tap against the contiguous input, shifting
    the result into a padded accumulator. This never materializes the
    unfolded column matrix, which would be 9x the input.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv expects NHWC input, got shape {x.shape}")
    if w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3]:
        raise ShapeError(f"kernel {w.shape} does not fit input {x.shape}")
    f = w.shape[3]
    if b.shape != (f,):
        raise ShapeError(f"bias {b.shape} does not match {f} filters")
    n, h, wd, c = x.shape
    dtype = np.result_type(x, w)
    flat = np.ascontiguousarray(x, dtype=dtype).reshape(n * h * wd, c)
    acc = np.zeros((n, h + 2, wd + 2, f), dtype=dtype)
    buf = np.empty((n * h * wd, f), dtype=dtype)
    for ky in range(3):
        for kx in range(3):
            # tap (ky, kx) of the output at (i, j) reads x at (i+ky-1, j+kx-1),
            # so the product with the flipped tap lands shifted by (ky, kx)
            np.matmul(flat, w[2 - ky, 2 - kx], out=buf)
            acc[:, ky : ky + h, kx : kx + wd, :] += buf.reshape(n, h, wd, f)
    out = acc[:, 1:-1, 1:-1, :] + b
    return out, (x, w)


def conv_backward(dout, cache):
    _check_cache(cache, "conv")
    x, w = cache
    n, h, wd, c = x.shape
    f = w.shape[3]
    dtype = np.result_type(dout, w)
    dflat = np.ascontiguousarray(dout, dtype=dtype).reshape(n * h * wd, f)

    dacc = np.zeros((n, h + 2, wd + 2, c), dtype=dtype)
    buf = np.empty((n * h * wd, c), dtype=dtype)
    for ky in range(3):
        for kx in range(3):
            np.matmul(dflat, w[ky, kx].T, out=buf)
            dacc[:, ky : ky + h, kx : kx + wd, :] += buf.reshape(n, h, wd, c)
    dx = dacc[:, 1:-1, 1:-1, :].copy()

    xpad = np.zeros((n, h + 2, wd + 2, c), dtype=dtype)
    xpad[:, 1:-1, 1:-1, :] = x
    dw = np.empty((3, 3, c, f), dtype=dtype)
    for ky in range(3):
        for kx in range(3):
            tap = xpad[:, ky : ky + h, kx : kx + wd, :].reshape(n * h * wd, c)
            dw[ky, kx] = tap.T @ dflat
    db = dflat.sum(axis=0)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, state, mode="train"):
    """Normalize over every axis but the last; scale and shift per channel.

    state is a dict holding running_mean/running_var, updated in train mode
    with momentum 0.9 and consumed verbatim in eval mode.
    """
    _check_mode(mode)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    axes = tuple(range(x.ndim - 1))

    if mode == "eval":
        ivar = 1.0 / np.sqrt(state["running_var"] + BN_EPS)
        out = gamma * ((x - state["running_mean"]) * ivar) + beta
        return out.astype(x.dtype, copy=False), None

    if x.shape[0] < 2:
        raise DataError("batchnorm needs a batch of at least 2 in train mode")
    mean64 = x.mean(axis=axes, dtype=np.float64)
    # biased variance via E[x^2] - E[x]^2, accumulated in float64
    var64 = np.multiply(x, x).mean(axis=axes, dtype=np.float64) - mean64 * mean64
    mean = mean64.astype(x.dtype)
    var = np.maximum(var64, 0.0).astype(x.dtype)
    state["running_mean"] = (
        BN_MOMENTUM * state["running_mean"] + (1.0 - BN_MOMENTUM) * mean
    ).astype(x.dtype)
    state["running_var"] = (
        BN_MOMENTUM * state["running_var"] + (1.0 - BN_MOMENTUM) * var
    ).astype(x.dtype)
    ivar = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    xhat = (x - mean) * ivar
    out = gamma * xhat + beta
    return out, (xhat, gamma, ivar, axes)


def batchnorm_backward(dout, cache):
    _check_cache(cache, "batchnorm")
    xhat, gamma, ivar, axes = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    dx = ivar * (
        dxhat
        - dxhat.mean(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, (x,)


def relu_backward(dout, cache):
    _check_cache(cache, "relu")
    (x,) = cache
    return dout * (x > 0)


def avgpool_forward(x):
    """2x2 average pooling with stride 2; spatial dims must be even."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool expects NHWC input, got shape {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool needs even spatial dims, got {h}x{w}")
    out = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return out, (x.shape,)


def avgpool_backward(dout, cache):
    _check_cache(cache, "avgpool")
    (shape,) = cache
    dx = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * dout.dtype.type(0.25)
    return dx.reshape(shape)


def gap_forward(x):
    """Global average pooling: (N, H, W, C) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"gap expects NHWC input, got shape {x.shape}")
    return x.mean(axis=(1, 2)), (x.shape,)


def gap_backward(dout, cache):
    _check_cache(cache, "gap")
    (shape,) = cache
    n, h, w, c = shape
    scaled = dout / dout.dtype.type(h * w)
    return np.broadcast_to(scaled[:, None, None, :], shape).copy()


def fc_forward(x, w, b):
    """Affine layer: x (N, D) @ w (D, M) + b (M,)."""
    if x.ndim != 2:
        raise ShapeError(f"fc expects 2-D input, got shape {x.shape}")
    if w.ndim != 2 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"weights {w.shape} do not fit input {x.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias {b.shape} does not match {w.shape[1]} units")
    return x @ w + b, (x, w)


def fc_backward(dout, cache):
    _check_cache(cache, "fc")
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax_forward(x):
    """Row-wise softmax, numerically stable for any finite input."""
    if x.ndim != 2:
        raise ShapeError(f"softmax expects 2-D input, got shape {x.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p, (p,)


def softmax_backward(dout, cache):
    _check_cache(cache, "softmax")
    (p,) = cache
    return p * (dout - (dout * p).sum(axis=1, keepdims=True))


def dropout_forward(x, rate, mode="train", rng=None):
    """Inverted-scaling dropout; identity in eval mode or at rate 0."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise SpecError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, (None, rate)
    if rng is None:
        raise StateError("dropout in train mode needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / x.dtype.type(1.0 - rate), (mask, rate)


def dropout_backward(dout, cache):
    _check_cache(cache, "dropout")
    mask, rate = cache
    if mask is None:
        return dout
    return dout * mask / dout.dtype.type(1.0 - rate)
