"""Network: interprets an ArchitectureSpec with the functional layer kernels.

Parameters live in a flat name -> array dict (conv/fc weights and biases,
BN gamma/beta); BN running statistics live in a parallel bn_state dict so
the optimizer never touches them. A train-mode forward caches per-layer
activations for the subsequent backward.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .errors import DataError, ShapeError, StateError
from .fusion import mean_over_patches
from .models import ArchitectureSpec, shape_flow


class Network:
    def __init__(self, arch: ArchitectureSpec, rng=None, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)

        out_shapes = shape_flow(arch)
        self._in_shapes = [tuple(arch.input_dims)] + out_shapes[:-1]
        self.layer_names = [f"l{i:02d}_{spec.kind}" for i, spec in enumerate(arch.layers)]

        self.params: dict = {}
        self.bn_state: dict = {}
        for name, spec, inp in zip(self.layer_names, arch.layers, self._in_shapes):
            if spec.kind == "conv":
                cin, f = inp[2], spec.width
                limit = np.sqrt(6.0 / (9 * cin + 9 * f))
                self.params[f"{name}/w"] = rng.uniform(
                    -limit, limit, (3, 3, cin, f)
                ).astype(self.dtype)
                self.params[f"{name}/b"] = np.zeros(f, dtype=self.dtype)
            elif spec.kind == "fc":
                d, m = inp[0], spec.width
                limit = np.sqrt(6.0 / (d + m))
                self.params[f"{name}/w"] = rng.uniform(-limit, limit, (d, m)).astype(
                    self.dtype
                )
                self.params[f"{name}/b"] = np.zeros(m, dtype=self.dtype)
            elif spec.kind == "bn":
                c = inp[-1]
                self.params[f"{name}/gamma"] = np.ones(c, dtype=self.dtype)
                self.params[f"{name}/beta"] = np.zeros(c, dtype=self.dtype)
                self.bn_state[name] = {
                    "running_mean": np.zeros(c, dtype=self.dtype),
                    "running_var": np.ones(c, dtype=self.dtype),
                }
        self._caches = None

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(
        self, x, mode: str = "eval", rng=None, dropout: bool = True, trace=None
    ) -> np.ndarray:
        """Run the ladder on a batch; returns (N, C) class probabilities.

        Train mode caches activations for backward and needs an rng when
        any dropout layer is active. When trace is a list, every layer's
        per-sample output shape is appended to it.
        """
        x = np.asarray(x, dtype=self.dtype)
        expected = tuple(self.arch.input_dims)
        if x.shape[1:] != expected:
            raise ShapeError(f"input {x.shape} does not match {('N',) + expected}")

        caches = [] if mode == "train" else None
        for name, spec in zip(self.layer_names, self.arch.layers):
            kind = spec.kind
            if kind == "conv":
                x, cache = L.conv_forward(x, self.params[f"{name}/w"], self.params[f"{name}/b"])
            elif kind == "bn":
                x, cache = L.batchnorm_forward(
                    x,
                    self.params[f"{name}/gamma"],
                    self.params[f"{name}/beta"],
                    self.bn_state[name],
                    mode=mode,
                )
            elif kind == "relu":
                x, cache = L.relu_forward(x)
            elif kind == "ap":
                x, cache = L.avgpool_forward(x)
            elif kind == "gap":
                x, cache = L.gap_forward(x)
            elif kind == "fc":
                x, cache = L.fc_forward(x, self.params[f"{name}/w"], self.params[f"{name}/b"])
            elif kind == "softmax":
                x, cache = L.softmax_forward(x)
            else:  # dropout
                rate = spec.rate if dropout else 0.0
                x, cache = L.dropout_forward(x, rate, mode=mode, rng=rng)
            if caches is not None:
                caches.append(cache)
            if trace is not None:
                trace.append(x.shape[1:])
        if caches is not None:
            self._caches = caches
        return x

    def backward(self, dprobs: np.ndarray) -> dict:
        """Gradients of a scalar loss wrt every parameter, given the loss
        gradient wrt the forward output."""
        if self._caches is None:
            raise StateError("backward needs a prior train-mode forward")
        grads = {}
        dx = np.asarray(dprobs, dtype=self.dtype)
        for name, spec, cache in zip(
            reversed(self.layer_names), reversed(self.arch.layers), reversed(self._caches)
        ):
            kind = spec.kind
            if kind == "conv":
                dx, dw, db = L.conv_backward(dx, cache)
                grads[f"{name}/w"] = dw
                grads[f"{name}/b"] = db
            elif kind == "bn":
                dx, dgamma, dbeta = L.batchnorm_backward(dx, cache)
                grads[f"{name}/gamma"] = dgamma
                grads[f"{name}/beta"] = dbeta
            elif kind == "relu":
                dx = L.relu_backward(dx, cache)
            elif kind == "ap":
                dx = L.avgpool_backward(dx, cache)
            elif kind == "gap":
                dx = L.gap_backward(dx, cache)
            elif kind == "fc":
                dx, dw, db = L.fc_backward(dx, cache)
                grads[f"{name}/w"] = dw
                grads[f"{name}/b"] = db
            elif kind == "softmax":
                dx = L.softmax_backward(dx, cache)
            else:
                dx = L.dropout_backward(dx, cache)
        return grads

    def load_tensors(self, tensors: dict) -> None:
        """Install parameters and BN running stats from a flat dict."""
        expected = set(self.params)
        for name in self.bn_state:
            expected.add(f"{name}/running_mean")
            expected.add(f"{name}/running_var")
        missing = expected - set(tensors)
        if missing:
            raise ShapeError(f"missing tensors {sorted(missing)}")
        extra = set(tensors) - expected
        if extra:
            raise ShapeError(f"unexpected tensors {sorted(extra)}")
        for key in self.params:
            if tensors[key].shape != self.params[key].shape:
                raise ShapeError(
                    f"tensor {key!r} has shape {tensors[key].shape}, "
                    f"expected {self.params[key].shape}"
                )
            self.params[key] = tensors[key].astype(self.dtype)
        for name, state in self.bn_state.items():
            for stat in ("running_mean", "running_var"):
                value = tensors[f"{name}/{stat}"]
                if value.shape != state[stat].shape:
                    raise ShapeError(f"tensor {name}/{stat} has shape {value.shape}")
                state[stat] = value.astype(self.dtype)


def eval_probs(model: Network, x, batch_size: int = 64) -> np.ndarray:
    """Eval-mode forward in slices, for inputs too large for one batch."""
    x = np.asarray(x)
    if x.shape[0] == 0:
        raise DataError("no samples to evaluate")
    parts = [
        model.forward(x[i : i + batch_size], mode="eval")
        for i in range(0, x.shape[0], batch_size)
    ]
    return np.concatenate(parts, axis=0)


def predict_clip(model: Network, patches) -> np.ndarray:
    """Clip-level distribution: eval-mode forward on every patch, then the
    entrywise mean of the per-patch probabilities."""
    arr = patches.patches if hasattr(patches, "patches") else np.asarray(patches)
    if arr.shape[0] == 0:
        raise DataError("predict_clip needs at least one patch")
    return mean_over_patches(eval_probs(model, arr))
