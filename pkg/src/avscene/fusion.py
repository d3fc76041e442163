"""Late fusion of framework probabilities, accuracy metrics, early detection.

A "framework" is one trained pipeline (e.g. one spectrogram kind plus its
classifier). Each framework contributes a per-clip probability matrix;
MEAN, PROD, and MAX combine S of them. PROD follows the scaled-product
form (1/S) * prod_s p_sc; the 1/S factor and any positive per-framework
scaling never change the argmax label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DataError, FormatError, LabelError, ShapeError

PROB_SUM_TOL = 1e-6
PROD_CLAMP = 1e-12


def _check_distributions(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0):
        raise DataError(f"{what}: negative probability entries")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise DataError(f"{what}: rows do not sum to 1")


@dataclass
class FrameworkProbabilities:
    """Aligned per-framework clip probabilities, shape (S, T, C)."""

    probs: np.ndarray
    framework_names: tuple
    clip_ids: tuple
    truth: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.truth = np.asarray(self.truth)
        if self.probs.ndim != 3:
            raise ShapeError(
                f"expected (S, T, C) probability stack, got {self.probs.shape}"
            )
        s, t, _ = self.probs.shape
        if s < 1:
            raise DataError("need at least one framework")
        if len(self.framework_names) != s:
            raise AlignmentError("framework name count does not match probability stack")
        if len(self.clip_ids) != t or self.truth.shape != (t,):
            raise AlignmentError("clip ids/truth do not match probability stack")
        _check_distributions(self.probs, "framework probabilities")


def _as_stack(P) -> np.ndarray:
    """Accept FrameworkProbabilities, an (S, T, C) array, or a list of
    (T, C) arrays; return a float64 (S, T, C) stack."""
    if isinstance(P, FrameworkProbabilities):
        return P.probs
    if isinstance(P, (list, tuple)):
        arrays = [np.asarray(a, dtype=np.float64) for a in P]
        if not arrays:
            raise DataError("need at least one framework")
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays):
            raise AlignmentError(
                f"framework shapes differ: {[a.shape for a in arrays]}"
            )
        stack = np.stack(arrays)
    else:
        stack = np.asarray(P, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ShapeError(f"expected (S, T, C) probability stack, got {stack.shape}")
    return stack


def mean_over_patches(patch_probs) -> np.ndarray:
    """Entrywise mean of N per-patch distributions: (N, C) -> (C,)."""
    probs = np.asarray(patch_probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"expected an (N, C) probability matrix, got {probs.shape}")
    if probs.shape[0] == 0:
        raise DataError("mean_over_patches needs at least one row")
    return probs.mean(axis=0)


def argmax_label(p) -> int:
    """Index of the maximum entry; ties go to the lowest index."""
    p = np.asarray(p)
    if p.size == 0:
        raise DataError("argmax_label on an empty vector")
    return int(np.argmax(p))


def label_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax labels for a (T, C) score matrix."""
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise DataError(f"expected a non-empty (T, C) matrix, got {scores.shape}")
    return np.argmax(scores, axis=1)


def fuse_mean(P) -> np.ndarray:
    """MEAN fusion: per-clip average across frameworks."""
    return _as_stack(P).mean(axis=0)


def fuse_prod(P) -> np.ndarray:
    """PROD fusion: (1/S) * prod_s p_sc, computed in the log domain.

    Probabilities are clamped at 1e-12 before the log so large ensembles
    cannot underflow; exact zeros still dominate the degeneracy check. A
    clip whose true product is zero for every class carries no PROD
    information and raises a data error.
    """
    stack = _as_stack(P)
    s = stack.shape[0]
    zeroed = (stack == 0.0).any(axis=0)  # (T, C): class killed by some framework
    dead = zeroed.all(axis=1)
    if np.any(dead):
        raise DataError(
            f"degenerate fusion: clips {np.flatnonzero(dead).tolist()} have a "
            "zero product in every class"
        )
    logs = np.log(np.maximum(stack, PROD_CLAMP)).sum(axis=0)
    return np.exp(logs) / s


def fuse_max(P) -> np.ndarray:
    """MAX fusion: entrywise maximum across frameworks."""
    return _as_stack(P).max(axis=0)


FUSION_STRATEGIES = {"mean": fuse_mean, "prod": fuse_prod, "max": fuse_max}


@dataclass
class EvaluationResult:
    """Counted accuracy plus a truth-by-prediction confusion matrix."""

    correct: int
    total: int
    accuracy: float  # percent
    confusion: np.ndarray  # (C, C), rows = truth, cols = prediction


def accuracy(preds, truth, n_classes: int = 10) -> EvaluationResult:
    """Percent accuracy 100*C/T with the confusion matrix populated."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise AlignmentError(
            f"prediction/truth shapes differ: {preds.shape} vs {truth.shape}"
        )
    if preds.shape[0] == 0:
        raise DataError("cannot score an empty label vector")
    for name, arr in (("prediction", preds), ("truth", truth)):
        if np.any(arr < 0) or np.any(arr >= n_classes):
            raise LabelError(f"{name} labels outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    correct = int(np.trace(confusion))
    total = int(truth.shape[0])
    return EvaluationResult(
        correct=correct,
        total=total,
        accuracy=100.0 * correct / total,
        confusion=confusion,
    )


@dataclass
class EarlyDetectionCurve:
    """Accuracy as a function of how many leading patches are used."""

    ks: tuple
    accuracies: tuple

    def __post_init__(self):
        if len(self.ks) != len(self.accuracies):
            raise AlignmentError("curve ks/accuracies length mismatch")


def early_detection_curve(per_patch_probs, truth, n_classes: int = 10) -> EarlyDetectionCurve:
    """Accuracy using only the first k of 10 temporally ordered patches,
    for k = 1..10. The k = 10 point is exactly the full-clip accuracy."""
    probs = np.asarray(per_patch_probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[1] != 10:
        raise DataError(f"need (T, 10, C) per-patch probabilities, got {probs.shape}")
    truth = np.asarray(truth)
    if truth.shape != (probs.shape[0],):
        raise AlignmentError("truth length does not match clip count")
    ks = tuple(range(1, 11))
    accs = []
    for k in ks:
        clip_probs = probs[:, :k, :].mean(axis=1)
        preds = label_rows(clip_probs)
        accs.append(accuracy(preds, truth, n_classes=n_classes).accuracy)
    return EarlyDetectionCurve(ks=ks, accuracies=tuple(accs))


def align_frameworks(frames) -> FrameworkProbabilities:
    """Stack per-framework (name, clip_ids, truth, probs) tuples; clip ids
    and truth must agree exactly across frameworks."""
    if not frames:
        raise DataError("need at least one framework")
    names, all_ids, all_truth, all_probs = zip(*frames)
    ref_ids, ref_truth = all_ids[0], np.asarray(all_truth[0])
    for name, ids, truth in zip(names, all_ids, all_truth):
        if tuple(ids) != tuple(ref_ids):
            bad = [a for a, b in zip(ids, ref_ids) if a != b][:5]
            raise AlignmentError(
                f"framework {name!r} clip ids differ from {names[0]!r}: "
                f"first offenders {bad}"
            )
        if not np.array_equal(np.asarray(truth), ref_truth):
            raise AlignmentError(f"framework {name!r} truth labels differ")
    return FrameworkProbabilities(
        probs=np.stack([np.asarray(p, dtype=np.float64) for p in all_probs]),
        framework_names=tuple(names),
        clip_ids=tuple(ref_ids),
        truth=ref_truth,
    )


def write_probs_csv(path, clip_ids, truth, probs) -> None:
    """Rows of clip_id,truth,p0..p{C-1}; floats in round-trip precision."""
    probs = np.asarray(probs)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip_id", "truth"] + [f"p{i}" for i in range(probs.shape[1])])
        for cid, t, row in zip(clip_ids, truth, probs):
            writer.writerow([cid, int(t)] + [repr(float(p)) for p in row])


def read_probs_csv(path, require_distribution: bool = False):
    """Returns (clip_ids, truth, probs) from a probability CSV."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["clip_id", "truth"]:
            raise FormatError(
                f"{path}: expected a clip_id,truth,p... header, got {header!r}"
            )
        n_cols = len(header) - 2
        clip_ids, truth, probs = [], [], []
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: ragged row {row!r}")
            clip_ids.append(row[0])
            truth.append(int(row[1]))
            probs.append([float(v) for v in row[2:]])
    probs = np.array(probs, dtype=np.float64).reshape(len(clip_ids), n_cols)
    truth = np.array(truth, dtype=np.int64)
    if require_distribution and len(clip_ids):
        _check_distributions(probs, path)
    return clip_ids, truth, probs


def write_patch_probs_csv(path, clip_ids, truth, probs) -> None:
    """Per-patch rows clip_id,patch,truth,p0..; probs has shape (T, 10, C)."""
    probs = np.asarray(probs)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["clip_id", "patch", "truth"] + [f"p{i}" for i in range(probs.shape[2])]
        )
        for cid, t, block in zip(clip_ids, truth, probs):
            for patch, row in enumerate(block):
                writer.writerow([cid, patch, int(t)] + [repr(float(p)) for p in row])


def read_patch_probs_csv(path):
    """Returns (clip_ids, truth, probs (T, 10, C)); every clip must carry
    patches 0..9 in order."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:3] != ["clip_id", "patch", "truth"]:
            raise FormatError(
                f"{path}: expected a clip_id,patch,truth,p... header, got {header!r}"
            )
        n_cols = len(header) - 3
        rows = list(reader)
    clip_ids, truth, blocks = [], [], []
    i = 0
    while i < len(rows):
        block = rows[i : i + 10]
        if len(block) < 10 or any(r[0] != block[0][0] for r in block):
            raise DataError(f"{path}: clip {rows[i][0]!r} has fewer than 10 patches")
        if [int(r[1]) for r in block] != list(range(10)):
            raise DataError(f"{path}: clip {block[0][0]!r} patches out of order")
        clip_ids.append(block[0][0])
        truth.append(int(block[0][2]))
        blocks.append([[float(v) for v in r[3:]] for r in block])
        i += 10
    probs = np.array(blocks, dtype=np.float64).reshape(len(clip_ids), 10, n_cols)
    return clip_ids, np.array(truth, dtype=np.int64), probs


def write_confusion_csv(path, result: EvaluationResult, class_names) -> None:
    """Confusion matrix with named rows (truth) and columns (prediction)."""
    names = list(class_names)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["truth"] + names)
        for name, row in zip(names, result.confusion):
            writer.writerow([name] + [int(v) for v in row])


def write_early_csv(path, curve: EarlyDetectionCurve) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "accuracy"])
        for k, acc in zip(curve.ks, curve.accuracies):
            writer.writerow([k, repr(float(acc))])


def read_early_csv(path) -> EarlyDetectionCurve:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["k", "accuracy"]:
            raise FormatError(f"{path}: expected a k,accuracy header, got {header!r}")
        rows = [(int(r[0]), float(r[1])) for r in reader]
    return EarlyDetectionCurve(
        ks=tuple(k for k, _ in rows), accuracies=tuple(a for _, a in rows)
    )
