"""Precomputed embedding vectors: the SFEMB container and batch plumbing.

Embeddings stand in for the pooling/penultimate outputs of large
pretrained backbones; any process may emit the format. Known source
names carry a fixed vector length that the reader enforces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, DataError, FormatError, ProvenanceError

_SFEMB_MAGIC = b"SFEMB\0"
_SFEMB_VERSION = 1

UNLABELED = -1

# audio backbones (pooling output) and image backbones (penultimate FC)
KNOWN_SOURCE_DIMS = {
    "cnn14": 2048,
    "mobilenetv1": 1024,
    "res1dnet30": 2048,
    "resnet38": 2048,
    "wavegram": 2048,
    "vgg19": 4096,
    "xception": 2048,
    "resnet50": 2048,
    "inceptionv3": 2048,
    "mobilenetv2": 1280,
    "densenet121": 1024,
    "nasnetlarge": 4032,
}


@dataclass
class EmbeddingSet:
    """Fixed-dim vectors keyed by clip id; label -1 marks unlabeled rows."""

    source: str
    dim: int
    clip_ids: tuple
    vectors: np.ndarray  # (n, dim) float32
    labels: np.ndarray  # (n,) int32

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        n = len(self.clip_ids)
        if self.vectors.shape != (n, self.dim):
            raise DataError(
                f"vectors shape {self.vectors.shape} does not match "
                f"{n} rows of dim {self.dim}"
            )
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape} does not match {n} rows")
        if len(set(self.clip_ids)) != n:
            raise DataError("duplicate clip ids in embedding set")
        expected = KNOWN_SOURCE_DIMS.get(self.source.lower())
        if expected is not None and expected != self.dim:
            raise ProvenanceError(
                f"source {self.source!r} emits {expected}-dim vectors, got {self.dim}"
            )
        if expected is None:
            warnings.warn(
                f"unknown embedding source {self.source!r}; accepting dim {self.dim}",
                stacklevel=2,
            )

    def __len__(self) -> int:
        return len(self.clip_ids)

    def labeled(self) -> "EmbeddingSet":
        """Subset with only labeled rows, preserving order."""
        keep = np.flatnonzero(self.labels != UNLABELED)
        return EmbeddingSet(
            source=self.source,
            dim=self.dim,
            clip_ids=tuple(self.clip_ids[i] for i in keep),
            vectors=self.vectors[keep],
            labels=self.labels[keep],
        )


def write_embeddings(path, embeddings: EmbeddingSet) -> None:
    """Canonical little-endian serialization: rewriting a set read from
    disk reproduces the file byte for byte."""
    name = embeddings.source.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_SFEMB_MAGIC)
        f.write(np.uint32(_SFEMB_VERSION).tobytes())
        f.write(np.uint16(len(name)).tobytes())
        f.write(name)
        f.write(np.uint32(embeddings.dim).tobytes())
        f.write(np.uint32(len(embeddings)).tobytes())
        for cid, vec, label in zip(
            embeddings.clip_ids, embeddings.vectors, embeddings.labels
        ):
            encoded = cid.encode("utf-8")
            f.write(np.uint32(len(encoded)).tobytes())
            f.write(encoded)
            f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
            f.write(np.int32(label).tobytes())


def _read_exact(f, count: int, path, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CorruptionError(f"{path}: truncated {what}")
    return data


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        magic = f.read(len(_SFEMB_MAGIC))
        if magic != _SFEMB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version = int(np.frombuffer(_read_exact(f, 4, path, "header"), "<u4")[0])
        if version != _SFEMB_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        name_len = int(np.frombuffer(_read_exact(f, 2, path, "header"), "<u2")[0])
        source = _read_exact(f, name_len, path, "source name").decode("utf-8")
        dim = int(np.frombuffer(_read_exact(f, 4, path, "header"), "<u4")[0])
        n_rows = int(np.frombuffer(_read_exact(f, 4, path, "header"), "<u4")[0])
        clip_ids = []
        vectors = np.empty((n_rows, dim), dtype=np.float32)
        labels = np.empty(n_rows, dtype=np.int32)
        for i in range(n_rows):
            id_len = int(np.frombuffer(_read_exact(f, 4, path, "clip id"), "<u4")[0])
            clip_ids.append(_read_exact(f, id_len, path, "clip id").decode("utf-8"))
            vectors[i] = np.frombuffer(_read_exact(f, 4 * dim, path, "vector"), "<f4")
            labels[i] = np.frombuffer(_read_exact(f, 4, path, "label"), "<i4")[0]
    return EmbeddingSet(
        source=source, dim=dim, clip_ids=tuple(clip_ids), vectors=vectors, labels=labels
    )


def to_batches(embeddings: EmbeddingSet, batch_size: int, seed: int):
    """Deterministically shuffled (vectors, labels) batches over the
    labeled rows; every labeled row appears exactly once."""
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    labeled = embeddings.labeled()
    if len(labeled) == 0:
        raise DataError("no labeled rows to batch")
    order = np.random.default_rng(seed).permutation(len(labeled))
    return [
        (labeled.vectors[order[i : i + batch_size]], labeled.labels[order[i : i + batch_size]])
        for i in range(0, len(labeled), batch_size)
    ]
