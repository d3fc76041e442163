"""Minimal RIFF/WAVE reader and writer.

Reads PCM 16-bit and IEEE float 32-bit files with 1 or 2 channels; mono
input is duplicated to 2 channels so downstream code always sees a stereo
clip. Writing is 16-bit PCM only (enough for synthetic test data).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ShapeError, UnsupportedCodecError

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


@dataclass
class AudioClip:
    """A stereo audio clip with samples in [-1, 1].

    samples has shape (2, n); both channels always present.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 2:
            raise ShapeError(f"expected (2, n) samples, got {self.samples.shape}")
        if self.samples.shape[1] < 1:
            raise DataError("clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"bad sample rate {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def load_wav(path) -> AudioClip:
    """Load a RIFF/WAVE file as a stereo AudioClip.

    Accepts PCM 16-bit and IEEE float 32-bit, 1 or 2 channels. Mono files
    are duplicated to two identical channels. Samples are scaled/clipped
    to [-1, 1]; the file's sample rate is preserved.
    """
    with open(path, "rb") as f:
        header = _read_exact(f, 12, "RIFF header")
        if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise FormatError(f"{path}: not a RIFF/WAVE file")

        fmt = None
        data = None
        while fmt is None or data is None:
            chunk_hdr = f.read(8)
            if len(chunk_hdr) == 0:
                break
            if len(chunk_hdr) != 8:
                raise FormatError(f"{path}: truncated chunk header")
            cid, size = struct.unpack("<4sI", chunk_hdr)
            if cid == b"fmt ":
                if size < 16:
                    raise FormatError(f"{path}: fmt chunk too small")
                fmt = struct.unpack("<HHIIHH", _read_exact(f, 16, "fmt chunk"))
                if size > 16:
                    f.seek(size - 16, 1)
            elif cid == b"data":
                data = _read_exact(f, size, "data chunk")
            else:
                f.seek(size + (size & 1), 1)

        if fmt is None:
            raise FormatError(f"{path}: missing fmt chunk")
        if data is None:
            raise FormatError(f"{path}: missing data chunk")

    audio_format, n_channels, sample_rate, _, block_align, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedCodecError(f"{path}: {n_channels} channels (want 1 or 2)")

    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % (2 * n_channels)], dtype="<i2")
        x = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % (4 * n_channels)], dtype="<f4")
        x = np.clip(raw.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedCodecError(
            f"{path}: format tag {audio_format} at {bits} bits not supported"
        )

    x = x.reshape(-1, n_channels).T
    if n_channels == 1:
        x = np.vstack([x, x])
    return AudioClip(samples=x, sample_rate=sample_rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write 16-bit PCM. samples is (channels, n) float in [-1, 1]."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n_channels, n = samples.shape
    pcm = np.clip(np.round(samples.T * 32767.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    block_align = 2 * n_channels
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(payload)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(
            struct.pack(
                "<IHHIIHH",
                16,
                _FMT_PCM,
                n_channels,
                sample_rate,
                sample_rate * block_align,
                block_align,
                16,
            )
        )
        f.write(b"data")
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
