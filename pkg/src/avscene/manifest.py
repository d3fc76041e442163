"""Dataset manifests: CSV rows of (path, label, split).

The label vocabulary is the fixed ten-scene taxonomy; clip ids are file
stems and double as keys for feature files and embedding rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, LabelError, SpecError

CLASS_NAMES = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
N_CLASSES = len(CLASS_NAMES)

SPLITS = ("train", "eval")

_HEADER = ["path", "label", "split"]


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    label: str
    split: str

    def __post_init__(self):
        if self.label not in CLASS_INDEX:
            raise LabelError(f"unknown scene label {self.label!r}")
        if self.split not in SPLITS:
            raise SpecError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def clip_id(self) -> str:
        return self.path.stem

    @property
    def label_index(self) -> int:
        return CLASS_INDEX[self.label]


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple

    def __post_init__(self):
        paths = [str(r.path) for r in self.rows]
        if len(set(paths)) != len(paths):
            raise DataError("duplicate media paths in manifest")
        ids = [r.clip_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate clip ids (file stems) in manifest")

    def __len__(self) -> int:
        return len(self.rows)

    def split_rows(self, split: str) -> tuple:
        if split not in SPLITS:
            raise SpecError(f"split must be one of {SPLITS}, got {split!r}")
        return tuple(r for r in self.rows if r.split == split)

    def require_both_splits(self) -> None:
        for split in SPLITS:
            if not self.split_rows(split):
                raise DataError(f"manifest has no {split!r} rows")


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest CSV; relative media paths resolve against the
    manifest's own directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _HEADER:
            raise FormatError(f"{path}: expected header {_HEADER}, got {header!r}")
        rows = []
        for record in reader:
            if len(record) != 3:
                raise FormatError(f"{path}: ragged row {record!r}")
            media = Path(record[0])
            if not media.is_absolute():
                media = base / media
            rows.append(ManifestRow(path=media, label=record[1], split=record[2]))
    if not rows:
        raise DataError(f"{path}: empty manifest")
    return DatasetManifest(rows=tuple(rows))


def save_manifest(path, rows) -> None:
    """Write rows as (path, label, split); paths are written as given."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_HEADER)
        for media, label, split in rows:
            writer.writerow([str(media), label, split])


def one_hot(indices, n_classes: int = N_CLASSES) -> np.ndarray:
    """Class indices -> one-hot float32 rows."""
    indices = np.asarray(indices)
    if np.any(indices < 0) or np.any(indices >= n_classes):
        raise LabelError(f"class indices outside [0, {n_classes})")
    out = np.zeros((indices.shape[0], n_classes), dtype=np.float32)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out
