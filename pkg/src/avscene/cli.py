"""Command-line pipeline: synth, extract, train, predict, fuse, eval, early.

Every command is deterministic given its flags plus --seed, writes a
plain-text key=value config snapshot next to its outputs, and exits 0 on
success or 1 once any failure was recorded.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from .embeddings import read_embeddings
from .errors import AvsceneError, DataError, SpecError
from .frontend import (
    ChannelStats,
    KINDS,
    N_CHANNELS,
    N_PATCHES,
    PATCH_HOP,
    PATCH_LEN,
    SpectrogramTensor,
    default_filterbank,
    extract_features,
    load_feature,
    save_feature,
    split_patches,
)
from .fusion import (
    FUSION_STRATEGIES,
    accuracy,
    align_frameworks,
    early_detection_curve,
    label_rows,
    read_patch_probs_csv,
    read_probs_csv,
    write_confusion_csv,
    write_early_csv,
    write_patch_probs_csv,
    write_probs_csv,
)
from .manifest import CLASS_NAMES, N_CLASSES, load_manifest, one_hot
from .models import build_mlp, build_vgg14, load_checkpoint, save_checkpoint
from .network import Network, eval_probs
from .synth import synth_bundle
from .training import TrainingConfig, train
from .wavio import load_wav


def _write_snapshot(path, args) -> None:
    entries = {k: v for k, v in vars(args).items() if k != "func"}
    with open(path, "w") as f:
        for key in sorted(entries):
            f.write(f"{key}={entries[key]}\n")


def _feature_path(features_dir, kind: str, clip_id: str) -> Path:
    return Path(features_dir) / kind / f"{clip_id}.sften"


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path, train_emb, eval_emb = synth_bundle(
        out_dir,
        n_classes=args.classes,
        train_per_class=args.train_per_class,
        eval_per_class=args.eval_per_class,
        seed=args.seed,
        sample_rate=args.rate,
        duration=args.duration,
        dim=args.dim,
        source=args.source,
    )
    _write_snapshot(out_dir / "synth.cfg", args)
    total = args.classes * (args.train_per_class + args.eval_per_class)
    print(f"wrote {total} clips, {manifest_path}, {train_emb}, {eval_emb}")
    return 0


# -------------------------------------------------------------- extract


def _extract_job(src: str, dst: str, kind: str):
    """Extract one clip; returns an error string or None. Runs in worker
    processes, so failures are returned rather than raised."""
    try:
        clip = load_wav(src)
        spec = default_filterbank(kind, clip.sample_rate)
        tensor = extract_features(clip, spec)
        tmp = dst + ".tmp"
        save_feature(tmp, tensor)
        os.replace(tmp, dst)
        return None
    except Exception as exc:
        return f"{src}: {exc}"


def cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest)
    rows = manifest.rows if args.split == "all" else manifest.split_rows(args.split)
    if not rows:
        raise DataError(f"no {args.split!r} rows in manifest")
    kind_dir = Path(args.out) / args.kind
    kind_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    skipped = 0
    for row in rows:
        dst = kind_dir / f"{row.clip_id}.sften"
        if dst.exists() and row.path.exists() and dst.stat().st_mtime >= row.path.stat().st_mtime:
            skipped += 1
            continue
        jobs.append((str(row.path), str(dst), args.kind))

    failures = []
    workers = args.workers or os.cpu_count() or 1
    if len(jobs) > 1 and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_job, *zip(*jobs)))
    else:
        results = [_extract_job(*job) for job in jobs]
    failures = [r for r in results if r is not None]

    _write_snapshot(Path(args.out) / f"extract_{args.kind}.cfg", args)
    done = len(jobs) - len(failures)
    print(f"extracted {done}, skipped {skipped}, failed {len(failures)}")
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------- train


def _patch_stats(tensors: np.ndarray) -> ChannelStats:
    """Per-channel moments over every training patch.

    Patches tile each tensor with 50% overlap, so interior frames count
    twice; accumulating over the actual patch stack keeps the statistics
    identical to what the classifier sees."""
    count = 0
    total = np.zeros(N_CHANNELS, dtype=np.float64)
    total_sq = np.zeros(N_CHANNELS, dtype=np.float64)
    for start in range(0, N_PATCHES * PATCH_HOP, PATCH_HOP):
        block = tensors[:, :, start : start + PATCH_LEN, :].astype(np.float64)
        flat = block.reshape(-1, N_CHANNELS)
        count += flat.shape[0]
        total += flat.sum(axis=0)
        total_sq += (flat * flat).sum(axis=0)
    mean = total / count
    var = total_sq / count - mean * mean
    std = np.sqrt(np.maximum(var, 0.0))
    if np.any(std <= 0):
        raise DataError("degenerate channel: zero standard deviation")
    return ChannelStats(mean=mean, std=std)


def _load_feature_tensors(rows, features_dir, kind: str) -> np.ndarray:
    tensors = []
    for row in rows:
        path = _feature_path(features_dir, kind, row.clip_id)
        if not path.exists():
            raise DataError(
                f"missing feature file {path}; run `avscene extract --manifest "
                f"<manifest> --kind {kind} --out {features_dir}` first"
            )
        tensors.append(load_feature(path).data)
    return np.stack(tensors)


def _require(args, names, why: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise SpecError(f"{why} needs {', '.join(missing)}")


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = Fraction(args.scale)
    config = TrainingConfig(
        l2_coeff=args.l2,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        mixup=args.mixup_alpha > 0,
        mixup_alpha=args.mixup_alpha if args.mixup_alpha > 0 else 0.4,
        dropout=args.dropout,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)

    if args.arch == "vgg14":
        _require(args, ("manifest", "kind", "features"), "training a vgg14 model")
        name = args.name or f"vgg14_{args.kind}"
        manifest = load_manifest(args.manifest)
        manifest.require_both_splits()
        rows = manifest.split_rows("train")
        feats = _load_feature_tensors(rows, args.features, args.kind)
        stats = _patch_stats(feats)
        feats -= stats.mean.astype(np.float32)
        feats /= stats.std.astype(np.float32)
        labels = one_hot(np.array([r.label_index for r in rows]))
        n_units = feats.shape[0] * N_PATCHES

        def batches(epoch_rng):
            order = epoch_rng.permutation(n_units)
            for i in range(0, n_units, config.batch_size):
                idx = order[i : i + config.batch_size]
                clips, patches = idx // N_PATCHES, idx % N_PATCHES
                x = np.stack(
                    [
                        feats[c, :, p * PATCH_HOP : p * PATCH_HOP + PATCH_LEN, :]
                        for c, p in zip(clips, patches)
                    ]
                )
                yield x, labels[clips]

        model = Network(
            build_vgg14(input_dims=(128, 128, 6), n_classes=N_CLASSES, scale=scale),
            rng=rng,
        )
    else:  # mlp
        _require(args, ("embeddings",), "training an mlp model")
        embeddings = read_embeddings(args.embeddings).labeled()
        if len(embeddings) == 0:
            raise DataError(f"{args.embeddings}: no labeled rows to train on")
        name = args.name or f"mlp_{embeddings.source}"
        mean = embeddings.vectors.mean(axis=0, dtype=np.float64)
        std = embeddings.vectors.std(axis=0, dtype=np.float64)
        if np.any(std <= 0):
            raise DataError("degenerate embedding dimension: zero standard deviation")
        stats = ChannelStats(mean=mean, std=std)
        vectors = ((embeddings.vectors - mean) / std).astype(np.float32)
        labels = one_hot(embeddings.labels)
        n = vectors.shape[0]

        def batches(epoch_rng):
            order = epoch_rng.permutation(n)
            for i in range(0, n, config.batch_size):
                idx = order[i : i + config.batch_size]
                yield vectors[idx], labels[idx]

        model = Network(
            build_mlp(input_dim=embeddings.dim, n_classes=N_CLASSES, scale=scale),
            rng=rng,
        )

    history = train(model, batches, config, rng=rng)

    ckpt_path = out_dir / f"{name}.ckpt"
    save_checkpoint(model, ckpt_path, stats=stats)
    loss_path = out_dir / f"{name}_loss.csv"
    with open(loss_path, "w") as f:
        f.write("epoch,loss\n")
        for epoch, loss in enumerate(history, start=1):
            f.write(f"{epoch},{float(loss)!r}\n")
    _write_snapshot(out_dir / f"{name}.cfg", args)
    print(f"trained {model.arch.identifier}: loss {history[0]:.4f} -> {history[-1]:.4f}")
    print(f"checkpoint {ckpt_path}")
    return 0


# -------------------------------------------------------------- predict


def cmd_predict(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, stats = load_checkpoint(args.checkpoint)
    name = args.name or Path(args.checkpoint).stem

    if model.arch.name == "vgg14":
        _require(args, ("manifest", "kind", "features"), "predicting with a vgg14 model")
        if stats is None:
            raise DataError(f"{args.checkpoint}: missing normalization stats")
        manifest = load_manifest(args.manifest)
        rows = manifest.split_rows(args.split)
        if not rows:
            raise DataError(f"no {args.split!r} rows in manifest")
        tensors = _load_feature_tensors(rows, args.features, args.kind)
        mean = np.asarray(stats.mean, dtype=np.float32)
        std = np.asarray(stats.std, dtype=np.float32)
        patch_stack = []
        for tensor in tensors:
            patches = split_patches(SpectrogramTensor(data=tensor, kind=args.kind))
            patch_stack.append((patches.patches - mean) / std)
        x = np.concatenate(patch_stack).astype(np.float32)
        probs = eval_probs(model, x, batch_size=args.batch)
        patch_probs = probs.reshape(len(rows), N_PATCHES, -1)
        clip_probs = patch_probs.mean(axis=1, dtype=np.float64)
        clip_ids = [r.clip_id for r in rows]
        truth = [r.label_index for r in rows]
        if args.per_patch:
            write_patch_probs_csv(
                out_dir / f"{name}_patches.csv", clip_ids, truth, patch_probs
            )
    else:  # mlp
        _require(args, ("embeddings",), "predicting with an mlp model")
        embeddings = read_embeddings(args.embeddings)
        if len(embeddings) == 0:
            raise DataError(f"{args.embeddings}: no rows to predict")
        mean = np.asarray(stats.mean) if stats is not None else 0.0
        std = np.asarray(stats.std) if stats is not None else 1.0
        vectors = ((embeddings.vectors - mean) / std).astype(np.float32)
        clip_probs = eval_probs(model, vectors, batch_size=args.batch).astype(np.float64)
        clip_ids = list(embeddings.clip_ids)
        truth = embeddings.labels.tolist()

    write_probs_csv(out_dir / f"{name}.csv", clip_ids, truth, clip_probs)
    _write_snapshot(out_dir / f"{name}_predict.cfg", args)
    print(f"wrote {out_dir / (name + '.csv')} ({len(clip_ids)} clips)")
    return 0


# ----------------------------------------------------------------- fuse


def _print_result(result) -> None:
    print(f"accuracy: {result.accuracy:.4f}% ({result.correct}/{result.total})")


def cmd_fuse(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = args.name or f"fused_{args.strategy}"
    frames = []
    for path in args.inputs:
        clip_ids, truth, probs = read_probs_csv(path, require_distribution=True)
        frames.append((Path(path).stem, clip_ids, truth, probs))
    aligned = align_frameworks(frames)
    scores = FUSION_STRATEGIES[args.strategy](aligned)
    labels = label_rows(scores)
    result = accuracy(labels, aligned.truth, n_classes=scores.shape[1])
    write_probs_csv(out_dir / f"{name}.csv", aligned.clip_ids, aligned.truth, scores)
    write_confusion_csv(out_dir / f"{name}_confusion.csv", result, CLASS_NAMES)
    _write_snapshot(out_dir / f"{name}.cfg", args)
    _print_result(result)
    return 0


# ----------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    clip_ids, truth, probs = read_probs_csv(args.input)
    labels = label_rows(probs)
    result = accuracy(labels, truth, n_classes=probs.shape[1])
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = args.name or f"{Path(args.input).stem}_eval"
        write_confusion_csv(out_dir / f"{name}_confusion.csv", result, CLASS_NAMES)
        _write_snapshot(out_dir / f"{name}.cfg", args)
    _print_result(result)
    return 0


# ---------------------------------------------------------------- early


def cmd_early(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = args.name or f"{Path(args.input).stem}_early"
    clip_ids, truth, probs = read_patch_probs_csv(args.input)
    curve = early_detection_curve(probs, truth, n_classes=probs.shape[2])
    write_early_csv(out_dir / f"{name}.csv", curve)
    _write_snapshot(out_dir / f"{name}.cfg", args)
    for k, acc in zip(curve.ks, curve.accuracies):
        print(f"k={k}: {acc:.4f}%")
    return 0


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avscene",
        description="Audio-visual scene classification pipeline at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic WAVs, embeddings, manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=50)
    p.add_argument("--eval-per-class", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=int, default=48000)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--dim", type=int, default=2048)
    p.add_argument("--source", default="cnn14")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract spectrogram feature tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all", choices=("all", "train", "eval"))
    p.add_argument("--workers", type=int, default=0, help="0 = one per CPU")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--arch", required=True, choices=("vgg14", "mlp"))
    p.add_argument("--scale", default="1")
    p.add_argument("--manifest")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--features", help="directory produced by extract")
    p.add_argument("--embeddings", help="SFEMB file (mlp)")
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--mixup-alpha", type=float, default=0.4, help="0 disables mixup")
    p.add_argument("--no-dropout", dest="dropout", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-clip probabilities from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.add_argument("--manifest")
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--features")
    p.add_argument("--embeddings")
    p.add_argument("--per-patch", action="store_true", help="also write per-patch rows")
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="late-fuse framework probability CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--strategy", required=True, choices=sorted(FUSION_STRATEGIES))
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score one probability CSV")
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("early", help="early-detection curve from per-patch rows")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_early)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AvsceneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
