"""Synthetic desk-scale test data: class-distinct audio and embeddings.

Each scene class gets a fixed tonal signature (fundamental plus two
harmonics over a noise floor); per-clip randomness jitters amplitude,
detune, phase, and the noise itself. Embeddings are Gaussian clusters
whose centroids sit far apart relative to the within-class spread. All
output is a deterministic function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet, write_embeddings
from .errors import SpecError
from .manifest import CLASS_NAMES, save_manifest
from .wavio import write_wav

# fundamentals (Hz), one per taxonomy class, spread across the CQT range
CLASS_TONES = (220.0, 440.0, 660.0, 880.0, 1320.0, 1760.0, 2200.0, 2640.0, 3520.0, 4400.0)

NOISE_LEVEL = 0.01
TONE_LEVEL = 0.25


def synth_clip(class_index: int, rng, sample_rate: int = 48000, duration: float = 10.0):
    """One stereo clip for the class: tone stack + noise, peak-safe."""
    if not 0 <= class_index < len(CLASS_TONES):
        raise SpecError(f"class index {class_index} outside the taxonomy")
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    base = CLASS_TONES[class_index] * (1.0 + rng.uniform(-0.01, 0.01))
    channels = []
    for _ in range(2):
        signal = np.zeros(n)
        for harmonic, weight in ((1, 1.0), (2, 0.5), (3, 0.25)):
            amp = TONE_LEVEL * weight * (1.0 + rng.uniform(-0.3, 0.3))
            phase = rng.uniform(0, 2 * np.pi)
            signal += amp * np.sin(2 * np.pi * base * harmonic * t + phase)
        signal += NOISE_LEVEL * rng.standard_normal(n)
        channels.append(signal)
    samples = np.vstack(channels)
    peak = np.abs(samples).max()
    if peak > 0.99:
        samples *= 0.99 / peak
    return samples


def synth_dataset(
    out_dir,
    n_classes: int = 4,
    train_per_class: int = 50,
    eval_per_class: int = 25,
    seed: int = 0,
    sample_rate: int = 48000,
    duration: float = 10.0,
):
    """Write WAVs plus a manifest under out_dir; returns the manifest path.

    Clip files land in out_dir/audio with manifest-relative paths, so the
    directory is relocatable as a unit.
    """
    if not 1 <= n_classes <= len(CLASS_NAMES):
        raise SpecError(f"n_classes must be in [1, {len(CLASS_NAMES)}], got {n_classes}")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for class_index in range(n_classes):
        label = CLASS_NAMES[class_index]
        for split, count in (("train", train_per_class), ("eval", eval_per_class)):
            for i in range(count):
                name = f"{label}_{split}_{i:03d}.wav"
                samples = synth_clip(class_index, rng, sample_rate, duration)
                write_wav(audio_dir / name, samples, sample_rate)
                rows.append((f"audio/{name}", label, split))
    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest_path, rows)
    return manifest_path


def synth_embeddings(
    n_classes: int = 4,
    train_per_class: int = 50,
    eval_per_class: int = 25,
    dim: int = 2048,
    seed: int = 0,
    source: str = "cnn14",
    centroid_scale: float = 1.0,
    within_std: float = 0.3,
):
    """Class-separable Gaussian embeddings; returns (train, eval) sets.

    Centroids are N(0, centroid_scale) per dimension, so their pairwise
    distances (~centroid_scale * sqrt(2*dim)) dwarf the within-class
    spread for any reasonable dim.
    """
    if not 1 <= n_classes <= len(CLASS_NAMES):
        raise SpecError(f"n_classes must be in [1, {len(CLASS_NAMES)}], got {n_classes}")
    rng = np.random.default_rng(seed)
    centroids = centroid_scale * rng.standard_normal((n_classes, dim))
    sets = []
    for split, count in (("train", train_per_class), ("eval", eval_per_class)):
        clip_ids, vectors, labels = [], [], []
        for class_index in range(n_classes):
            label = CLASS_NAMES[class_index]
            noise = within_std * rng.standard_normal((count, dim))
            for i in range(count):
                clip_ids.append(f"{label}_{split}_{i:03d}")
                vectors.append(centroids[class_index] + noise[i])
                labels.append(class_index)
        sets.append(
            EmbeddingSet(
                source=source,
                dim=dim,
                clip_ids=tuple(clip_ids),
                vectors=np.array(vectors, dtype=np.float32),
                labels=np.array(labels, dtype=np.int32),
            )
        )
    return tuple(sets)


def synth_bundle(
    out_dir,
    n_classes: int = 4,
    train_per_class: int = 50,
    eval_per_class: int = 25,
    seed: int = 0,
    sample_rate: int = 48000,
    duration: float = 10.0,
    dim: int = 2048,
    source: str = "cnn14",
):
    """Full synthetic package: WAVs, manifest, and embedding files.

    Returns (manifest_path, train_embeddings_path, eval_embeddings_path).
    """
    out_dir = Path(out_dir)
    manifest_path = synth_dataset(
        out_dir,
        n_classes=n_classes,
        train_per_class=train_per_class,
        eval_per_class=eval_per_class,
        seed=seed,
        sample_rate=sample_rate,
        duration=duration,
    )
    train_set, eval_set = synth_embeddings(
        n_classes=n_classes,
        train_per_class=train_per_class,
        eval_per_class=eval_per_class,
        dim=dim,
        seed=seed,
        source=source,
    )
    train_path = out_dir / "embeddings_train.semb"
    eval_path = out_dir / "embeddings_eval.semb"
    write_embeddings(train_path, train_set)
    write_embeddings(eval_path, eval_set)
    return manifest_path, train_path, eval_path
