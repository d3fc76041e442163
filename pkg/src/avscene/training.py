"""Training loop: KL-divergence loss with L2 regularization, mixup, Adam.

Every random choice (shuffling, mixup draws, dropout masks) flows from a
single generator, so a run is a deterministic function of (data, config,
seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LabelError, NumericError, SpecError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LABEL_SUM_TOL = 1e-6
PROB_CLAMP_LO = 1e-7


@dataclass
class TrainingConfig:
    l2_coeff: float = 1e-4
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    mixup: bool = True
    mixup_alpha: float = 0.4
    dropout: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.l2_coeff < 0:
            raise SpecError(f"l2_coeff must be >= 0, got {self.l2_coeff}")
        if self.learning_rate <= 0:
            raise SpecError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise SpecError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mixup and self.mixup_alpha <= 0:
            raise SpecError("mixup needs alpha > 0; set mixup=False to disable")


def kl_loss(y, y_hat, params=None, l2_coeff: float = 0.0):
    """KL divergence summed over batch samples and classes, plus an L2
    penalty (l2/2)*||params||^2 over every trainable tensor.

    Returns (loss, d_y_hat, param_grads). Predicted probabilities are
    clamped to [1e-7, 1] inside the log; 0*log(0) counts as 0.
    """
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape or y.ndim != 2:
        raise DataError(f"label/prediction shapes differ: {y.shape} vs {y_hat.shape}")
    if np.any(y < 0) or np.any(np.abs(y.sum(axis=1) - 1.0) > LABEL_SUM_TOL):
        raise LabelError("labels must be distributions summing to 1")

    clamped = np.clip(y_hat, PROB_CLAMP_LO, 1.0)
    ratio = np.divide(y, clamped, dtype=np.float64)
    terms = y * np.log(ratio, out=np.zeros_like(ratio), where=y > 0)
    loss = float(terms.sum(dtype=np.float64))

    d_y_hat = (-y / clamped).astype(y_hat.dtype)

    param_grads = None
    if params is not None:
        if l2_coeff:
            sq = sum(float(np.vdot(p, p)) for p in params.values())
            loss += 0.5 * l2_coeff * sq
            param_grads = {k: l2_coeff * p for k, p in params.items()}
        else:
            param_grads = {k: np.zeros_like(p) for k, p in params.items()}
    return loss, d_y_hat, param_grads


@dataclass(frozen=True)
class MixupDraw:
    """One batch's mixing coefficient and partner permutation."""

    coefficient: float
    permutation: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.coefficient <= 1.0:
            raise SpecError(f"mix coefficient must be in [0, 1], got {self.coefficient}")
        perm = np.asarray(self.permutation)
        if sorted(perm.tolist()) != list(range(perm.shape[0])):
            raise SpecError("permutation must be a bijection of batch indices")


def draw_mixup(batch_size: int, alpha: float, rng) -> MixupDraw:
    """Sample m ~ Beta(alpha, alpha) and a partner permutation."""
    if alpha <= 0:
        raise SpecError(f"mixup alpha must be > 0, got {alpha}")
    return MixupDraw(
        coefficient=float(rng.beta(alpha, alpha)),
        permutation=rng.permutation(batch_size),
    )


def mixup_batch(x, y, draw: MixupDraw):
    """Convex combination of the batch with its permuted partner."""
    x = np.asarray(x)
    y = np.asarray(y)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if not np.issubdtype(y.dtype, np.floating):
        y = y.astype(np.float64)
    if x.shape[0] < 2:
        raise DataError(f"mixup needs a batch of at least 2, got {x.shape[0]}")
    if y.shape[0] != x.shape[0]:
        raise DataError("feature/label batch sizes differ")
    if draw.permutation.shape[0] != x.shape[0]:
        raise DataError("permutation length does not match batch")
    m = x.dtype.type(draw.coefficient)
    perm = draw.permutation
    mixed_x = m * x + (x.dtype.type(1.0) - m) * x[perm]
    my = y.dtype.type(draw.coefficient)
    mixed_y = my * y + (y.dtype.type(1.0) - my) * y[perm]
    return mixed_x, mixed_y


@dataclass
class AdamState:
    """Bias-corrected first/second moment accumulators, one per parameter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One in-place Adam update. Aborts (no mutation) on non-finite grads."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key!r}; step aborted")
    t = state.t + 1
    correct1 = 1.0 - beta1**t
    correct2 = 1.0 - beta2**t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / correct1
        vhat = v / correct2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    state.t = t


def train(model, batches, config: TrainingConfig, rng=None):
    """Run the optimization loop; returns the per-epoch mean batch loss.

    batches is either a sequence of (x, y) pairs reused every epoch, or a
    callable rng -> iterable of (x, y) invoked once per epoch (so data
    order can be reshuffled deterministically). Labels are distributions
    over the model's classes. Mixup is applied per batch when enabled and
    the batch holds at least two samples.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = adam_init(model.params)
    history = []
    for _ in range(config.epochs):
        epoch_batches = batches(rng) if callable(batches) else batches
        total = 0.0
        n_batches = 0
        for x, y in epoch_batches:
            x = np.asarray(x, dtype=model.dtype)
            y = np.asarray(y, dtype=model.dtype)
            if config.mixup and x.shape[0] >= 2:
                x, y = mixup_batch(x, y, draw_mixup(x.shape[0], config.mixup_alpha, rng))
            probs = model.forward(x, mode="train", rng=rng, dropout=config.dropout)
            reg_params = model.params if config.l2_coeff else None
            loss, dprobs, l2_grads = kl_loss(y, probs, reg_params, config.l2_coeff)
            grads = model.backward(dprobs)
            if l2_grads:
                for key, extra in l2_grads.items():
                    grads[key] = grads[key] + extra
            adam_step(params=model.params, grads=grads, state=state, lr=config.learning_rate)
            total += loss
            n_batches += 1
        if n_batches == 0:
            raise DataError("empty dataset: no batches to train on")
        history.append(total / n_batches)
    return history
