"""Spectrogram front-end: STFT, three filterbanks, deltas, patching.

A stereo clip is turned into a 128x704x6 feature tensor: one of three
128-band filterbanks (mel, gammatone, constant-Q) applied to a shared
STFT power grid, log-compressed, extended with first/second temporal
derivatives per channel, then cut into ten half-overlapping 128-frame
patches.

All three filterbanks share the same window (80 ms) and hop (14 ms), so
they produce identically shaped outputs for the same clip.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CorruptionError, DataError, FormatError, ShapeError, SpecError
from .wavio import AudioClip

N_BANDS = 128
N_FRAMES = 704
N_CHANNELS = 6
PATCH_LEN = 128
PATCH_HOP = 64
N_PATCHES = 10

KINDS = ("mel", "gam", "cqt")
_KIND_CODES = {"mel": 0, "gam": 1, "cqt": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

WINDOW_SECONDS = 0.080
HOP_SECONDS = 0.014

CQT_FMIN = 32.7
CQT_BINS_PER_OCTAVE = 16

_SFTEN_MAGIC = b"SFTEN\0"
_SFTEN_VERSION = 1


@dataclass(frozen=True)
class FilterbankSpec:
    """Parameters shared by the three spectrogram transforms."""

    kind: str
    sample_rate: int
    n_filters: int = N_BANDS
    window: float = WINDOW_SECONDS
    hop: float = HOP_SECONDS
    fmin: float = 0.0
    fmax: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown filterbank kind {self.kind!r}")
        if self.n_filters != N_BANDS:
            raise SpecError(f"filter count must be {N_BANDS}, got {self.n_filters}")
        if not (self.window > self.hop > 0):
            raise SpecError("need window > hop > 0")
        nyquist = self.sample_rate / 2
        if not (0 <= self.fmin < self.fmax <= nyquist):
            raise SpecError(
                f"need 0 <= fmin < fmax <= {nyquist}, got [{self.fmin}, {self.fmax}]"
            )

    @property
    def win_length(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop * self.sample_rate))


def default_filterbank(kind: str, sample_rate: int = 48000) -> FilterbankSpec:
    """Standard band-edge choices per kind: mel spans the full spectrum,
    gammatone uses the auditory range [50 Hz, Nyquist], constant-Q starts
    at 32.7 Hz with 16 bins/octave."""
    nyquist = sample_rate / 2
    fmin = {"mel": 0.0, "gam": 50.0, "cqt": CQT_FMIN}[kind]
    return FilterbankSpec(kind=kind, sample_rate=sample_rate, fmin=fmin, fmax=nyquist)


@dataclass
class SpectrogramTensor:
    """128x704x6 feature block for one clip.

    Channel order: ch0 static, ch0 delta, ch0 delta-delta, then the same
    three for ch1.
    """

    data: np.ndarray
    kind: str

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != (N_BANDS, N_FRAMES, N_CHANNELS):
            raise ShapeError(
                f"feature tensor must be {(N_BANDS, N_FRAMES, N_CHANNELS)}, "
                f"got {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature tensor contains non-finite values")
        if self.kind not in KINDS:
            raise SpecError(f"unknown filterbank kind {self.kind!r}")


@dataclass
class PatchSet:
    """Ten half-overlapping 128x128x6 patches cut from one tensor."""

    patches: np.ndarray  # (10, 128, 128, 6)
    starts: tuple

    def __post_init__(self):
        self.patches = np.asarray(self.patches)
        if self.patches.shape != (N_PATCHES, PATCH_LEN, PATCH_LEN, N_CHANNELS):
            raise ShapeError(f"bad patch array shape {self.patches.shape}")


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel normalization moments (6 values each)."""

    mean: np.ndarray
    std: np.ndarray


def stft_power(x: np.ndarray, spec: FilterbankSpec) -> np.ndarray:
    """Power spectrogram of one channel, shape (win//2 + 1, frames).

    Hann-windowed, no center padding: frames = (len - win)//hop + 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected 1-D channel, got shape {x.shape}")
    win = spec.win_length
    hop = spec.hop_length
    if x.shape[0] < win:
        raise DataError(f"clip too short: {x.shape[0]} samples < window {win}")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.fft.rfft(frames * window, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _erb_bandwidth(f):
    return 24.7 * (4.37e-3 * np.asarray(f, dtype=np.float64) + 1.0)


def _erb_space(fmin, fmax, n):
    """n center frequencies equally spaced on the ERB-rate scale."""
    ear_q = 9.26449
    min_bw = 24.7
    qb = ear_q * min_bw
    centers = -qb + np.exp(
        np.arange(1, n + 1) * (np.log(fmin + qb) - np.log(fmax + qb)) / n
    ) * (fmax + qb)
    return centers[::-1].copy()  # ascending


def _bin_frequencies(spec: FilterbankSpec) -> np.ndarray:
    n_bins = spec.win_length // 2 + 1
    return np.arange(n_bins) * spec.sample_rate / spec.win_length


@lru_cache(maxsize=8)
def filterbank_matrix(spec: FilterbankSpec) -> np.ndarray:
    """Weight matrix (n_filters, win//2 + 1) for the given filterbank kind."""
    freqs = _bin_frequencies(spec)
    n = spec.n_filters

    if spec.kind == "mel":
        edges = _mel_to_hz(np.linspace(_hz_to_mel(spec.fmin), _hz_to_mel(spec.fmax), n + 2))
        lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        up = (freqs[None, :] - lo) / np.maximum(ctr - lo, 1e-12)
        down = (hi - freqs[None, :]) / np.maximum(hi - ctr, 1e-12)
        weights = np.maximum(0.0, np.minimum(up, down))

    elif spec.kind == "gam":
        centers = _erb_space(spec.fmin, spec.fmax, n)
        bw = 1.019 * _erb_bandwidth(centers)
        u = (freqs[None, :] - centers[:, None]) / bw[:, None]
        # squared magnitude of a 4th-order gammatone response
        weights = (1.0 + u**2) ** -4

    else:  # cqt
        k = np.arange(n)
        centers = spec.fmin * 2.0 ** (k / CQT_BINS_PER_OCTAVE)
        bin_spacing = spec.sample_rate / spec.win_length
        half_width = np.maximum(centers * (2.0 ** (1.0 / CQT_BINS_PER_OCTAVE) - 1.0), bin_spacing)
        u = (freqs[None, :] - centers[:, None]) / half_width[:, None]
        weights = np.where(np.abs(u) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * u)), 0.0)

    return weights


def apply_filterbank(power: np.ndarray, spec: FilterbankSpec) -> np.ndarray:
    """Band energies (n_filters, frames) from an STFT power matrix."""
    power = np.asarray(power)
    n_bins = spec.win_length // 2 + 1
    if power.ndim != 2 or power.shape[0] != n_bins:
        raise ShapeError(
            f"power matrix must have {n_bins} rows for this spec, got {power.shape}"
        )
    weights = filterbank_matrix(spec)
    if weights.shape[0] != N_BANDS:
        raise SpecError(f"filterbank must have {N_BANDS} rows")
    return weights @ power


def log_compress(bands: np.ndarray) -> np.ndarray:
    """Convert band energies to dB with an 80 dB floor below the peak."""
    bands = np.asarray(bands, dtype=np.float64)
    if np.any(bands < 0):
        raise DataError("log compression requires non-negative input")
    out = 10.0 * np.log10(bands + 1e-10)
    return np.maximum(out, out.max() - 80.0)


def delta(features: np.ndarray, order: int = 1) -> np.ndarray:
    """Temporal derivative by local linear regression over 9 frames.

    Edge frames are replicated before the regression; order 2 applies the
    operator twice.
    """
    if order not in (1, 2):
        raise SpecError(f"order must be 1 or 2, got {order}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected 2-D features, got shape {features.shape}")
    n_frames = features.shape[1]
    if n_frames < 9:
        raise DataError(f"need at least 9 frames, got {n_frames}")
    if order == 2:
        return delta(delta(features, 1), 1)

    half = 4
    denom = 2.0 * sum(k * k for k in range(1, half + 1))
    padded = np.pad(features, ((0, 0), (half, half)), mode="edge")
    out = np.zeros_like(features)
    for k in range(1, half + 1):
        out += k * (padded[:, half + k : half + k + n_frames]
                    - padded[:, half - k : half - k + n_frames])
    return out / denom


def _fit_frames(m: np.ndarray, target: int) -> np.ndarray:
    """Center-crop to target frames, or symmetric edge-pad if shorter."""
    n_frames = m.shape[1]
    if n_frames >= target:
        lead = (n_frames - target) // 2
        return m[:, lead : lead + target]
    pad = target - n_frames
    lead = pad // 2
    return np.pad(m, ((0, 0), (lead, pad - lead)), mode="edge")


def assemble_tensor(ch0: np.ndarray, ch1: np.ndarray, kind: str) -> SpectrogramTensor:
    """Stack static/delta/delta-delta for both channels into 128x704x6.

    Derivatives are computed on the full-length static matrices first;
    all six planes are then cropped or padded to exactly 704 frames.
    """
    ch0 = np.asarray(ch0, dtype=np.float64)
    ch1 = np.asarray(ch1, dtype=np.float64)
    if ch0.shape != ch1.shape:
        raise ShapeError(f"channel shapes differ: {ch0.shape} vs {ch1.shape}")
    if ch0.ndim != 2 or ch0.shape[0] != N_BANDS:
        raise ShapeError(f"expected ({N_BANDS}, F) channels, got {ch0.shape}")

    planes = []
    for static in (ch0, ch1):
        planes.extend([static, delta(static, 1), delta(static, 2)])
    # interleave as [ch0 static, ch0 d, ch0 dd, ch1 static, ch1 d, ch1 dd]
    fitted = [_fit_frames(p, N_FRAMES) for p in planes]
    data = np.stack(fitted, axis=2)
    return SpectrogramTensor(data=data, kind=kind)


def split_patches(tensor: SpectrogramTensor) -> PatchSet:
    """Cut ten 50%-overlapping 128-frame patches at starts 0, 64, ..., 576."""
    data = tensor.data
    if data.shape[1] != N_FRAMES:
        raise ShapeError(f"expected {N_FRAMES} frames, got {data.shape[1]}")
    starts = tuple(PATCH_HOP * i for i in range(N_PATCHES))
    patches = np.stack([data[:, s : s + PATCH_LEN, :] for s in starts])
    return PatchSet(patches=patches, starts=starts)


def channel_stats(patch_arrays: np.ndarray) -> ChannelStats:
    """Per-channel mean/std over a stack of patches (..., 6)."""
    stacked = np.asarray(patch_arrays)
    flat = stacked.reshape(-1, stacked.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return ChannelStats(mean=mean, std=std)


def normalize(patches: PatchSet, stats: ChannelStats) -> PatchSet:
    """Standardize each of the six channels by the given moments."""
    std = np.asarray(stats.std, dtype=np.float64)
    mean = np.asarray(stats.mean, dtype=np.float64)
    if std.shape != (N_CHANNELS,) or mean.shape != (N_CHANNELS,):
        raise ShapeError("stats must hold 6 values per moment")
    if np.any(std <= 0):
        raise DataError("degenerate channel: zero standard deviation")
    data = (patches.patches - mean) / std
    return PatchSet(patches=data, starts=patches.starts)


def extract_features(clip: AudioClip, spec: FilterbankSpec) -> SpectrogramTensor:
    """Full front-end for one clip: STFT -> bands -> dB -> deltas -> 128x704x6."""
    if clip.sample_rate != spec.sample_rate:
        raise DataError(
            f"clip rate {clip.sample_rate} != spec rate {spec.sample_rate}; "
            "resampling is not supported"
        )
    statics = []
    for ch in range(2):
        power = stft_power(clip.samples[ch], spec)
        statics.append(log_compress(apply_filterbank(power, spec)))
    return assemble_tensor(statics[0], statics[1], kind=spec.kind)


def save_feature(path, tensor: SpectrogramTensor) -> None:
    """Write a feature tensor: magic, version, kind code, dims, f32 payload."""
    header = _SFTEN_MAGIC
    header += np.uint32(_SFTEN_VERSION).tobytes()
    header += np.uint8(_KIND_CODES[tensor.kind]).tobytes()
    header += np.array(tensor.data.shape, dtype="<u4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_feature(path) -> SpectrogramTensor:
    with open(path, "rb") as f:
        magic = f.read(len(_SFTEN_MAGIC))
        if magic != _SFTEN_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        head = f.read(4 + 1 + 12)
        if len(head) != 17:
            raise CorruptionError(f"{path}: truncated header")
        version = int(np.frombuffer(head[:4], dtype="<u4")[0])
        if version != _SFTEN_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        code = head[4]
        if code not in _CODE_KINDS:
            raise FormatError(f"{path}: unknown kind code {code}")
        dims = tuple(int(d) for d in np.frombuffer(head[5:], dtype="<u4"))
        if dims != (N_BANDS, N_FRAMES, N_CHANNELS):
            raise CorruptionError(f"{path}: unexpected dims {dims}")
        payload = f.read(4 * N_BANDS * N_FRAMES * N_CHANNELS)
        if len(payload) != 4 * N_BANDS * N_FRAMES * N_CHANNELS:
            raise CorruptionError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(N_BANDS, N_FRAMES, N_CHANNELS)
    return SpectrogramTensor(data=data.astype(np.float32), kind=_CODE_KINDS[code])
