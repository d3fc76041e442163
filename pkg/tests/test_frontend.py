"""Front-end oracles: STFT framing, filterbank formulas, deltas, assembly."""

import math

import numpy as np
import pytest

from avscene import (
    AudioClip,
    ChannelStats,
    FilterbankSpec,
    N_BANDS,
    N_CHANNELS,
    N_FRAMES,
    N_PATCHES,
    PATCH_HOP,
    PATCH_LEN,
    SpectrogramTensor,
    apply_filterbank,
    assemble_tensor,
    channel_stats,
    default_filterbank,
    delta,
    extract_features,
    filterbank_matrix,
    load_feature,
    log_compress,
    normalize,
    save_feature,
    split_patches,
    stft_power,
)
from avscene.errors import CorruptionError, DataError, FormatError, ShapeError, SpecError

RATE = 8000  # small rate keeps STFT tests fast; framing math is rate-generic


def _spec(kind="mel", rate=RATE):
    return default_filterbank(kind, rate)


class TestStft:
    def test_frame_count_canonical(self):
        spec = _spec(rate=48000)
        assert spec.win_length == 3840
        assert spec.hop_length == 672
        x = np.zeros(480000)
        power = stft_power(x, spec)
        assert power.shape == (3840 // 2 + 1, 709)

    @pytest.mark.parametrize("n_samples", [640, 641, 751, 752, 10000])
    def test_frame_count_formula(self, n_samples):
        spec = _spec()
        win, hop = spec.win_length, spec.hop_length
        power = stft_power(np.ones(n_samples), spec)
        assert power.shape[1] == (n_samples - win) // hop + 1

    def test_zero_input_gives_zero_power(self):
        power = stft_power(np.zeros(5000), _spec())
        assert power.shape[0] == _spec().win_length // 2 + 1
        assert np.all(power == 0.0)

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            stft_power(np.zeros(_spec().win_length - 1), _spec())
        with pytest.raises(ShapeError):
            stft_power(np.zeros((2, 5000)), _spec())

    def test_sine_at_bin_center_concentrates(self):
        spec = _spec()
        win = spec.win_length
        target_bin = 40
        freq = target_bin * spec.sample_rate / win
        t = np.arange(win * 3) / spec.sample_rate
        power = stft_power(np.sin(2 * np.pi * freq * t), spec)
        col = power[:, 0]
        assert int(np.argmax(col)) == target_bin
        # the analysis window spreads a pure tone over its main lobe,
        # so "at that bin" means the bin and its immediate neighbors
        neighborhood = col[target_bin - 1 : target_bin + 2].sum()
        assert neighborhood > 0.90 * col.sum()

    def test_first_frame_matches_naive_dft(self):
        spec = _spec()
        win = spec.win_length
        rng = np.random.default_rng(0)
        x = rng.standard_normal(win + 50)
        power = stft_power(x, spec)

        frame = x[:win]
        hann = np.array(
            [0.5 - 0.5 * math.cos(2 * math.pi * n / win) for n in range(win)]
        )
        windowed = frame * hann
        n = np.arange(win)
        for k in [0, 1, 17, 160, win // 2]:
            re = float(np.sum(windowed * np.cos(2 * np.pi * k * n / win)))
            im = float(-np.sum(windowed * np.sin(2 * np.pi * k * n / win)))
            np.testing.assert_allclose(power[k, 0], re * re + im * im,
                                       rtol=1e-9, atol=1e-9)

    def test_second_frame_starts_at_hop(self):
        spec = _spec()
        rng = np.random.default_rng(1)
        x = rng.standard_normal(spec.win_length + 2 * spec.hop_length)
        full = stft_power(x, spec)
        shifted = stft_power(x[spec.hop_length :], spec)
        np.testing.assert_allclose(full[:, 1], shifted[:, 0], rtol=1e-12)


def _bin_freqs(spec):
    n_bins = spec.win_length // 2 + 1
    return [i * spec.sample_rate / spec.win_length for i in range(n_bins)]


def _mel_oracle(spec):
    def to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    lo_m, hi_m = to_mel(spec.fmin), to_mel(spec.fmax)
    edges = [to_hz(lo_m + (hi_m - lo_m) * i / 129.0) for i in range(130)]
    freqs = _bin_freqs(spec)
    out = np.zeros((128, len(freqs)))
    for j in range(128):
        lo, ctr, hi = edges[j], edges[j + 1], edges[j + 2]
        for i, f in enumerate(freqs):
            if lo < f <= ctr:
                out[j, i] = (f - lo) / (ctr - lo)
            elif ctr < f < hi:
                out[j, i] = (hi - f) / (hi - ctr)
    return out


def _erb_centers_oracle(fmin, fmax, n):
    qb = 9.26449 * 24.7
    span = math.log(fmin + qb) - math.log(fmax + qb)
    centers = [
        -qb + math.exp(i * span / n) * (fmax + qb) for i in range(1, n + 1)
    ]
    return centers[::-1]


def _gam_oracle(spec):
    centers = _erb_centers_oracle(spec.fmin, spec.fmax, 128)
    freqs = _bin_freqs(spec)
    out = np.zeros((128, len(freqs)))
    for j, fc in enumerate(centers):
        b = 1.019 * 24.7 * (4.37e-3 * fc + 1.0)
        for i, f in enumerate(freqs):
            u = (f - fc) / b
            out[j, i] = (1.0 + u * u) ** -4.0
    return out


def _cqt_oracle(spec):
    freqs = _bin_freqs(spec)
    spacing = spec.sample_rate / spec.win_length
    ratio = 2.0 ** (1.0 / 16.0)
    out = np.zeros((128, len(freqs)))
    for j in range(128):
        fc = spec.fmin * 2.0 ** (j / 16.0)
        half = max(fc * (ratio - 1.0), spacing)
        for i, f in enumerate(freqs):
            u = (f - fc) / half
            if abs(u) <= 1.0:
                out[j, i] = 0.5 * (1.0 + math.cos(math.pi * u))
    return out


class TestFilterbanks:
    @pytest.mark.parametrize(
        "kind,oracle",
        [("mel", _mel_oracle), ("gam", _gam_oracle), ("cqt", _cqt_oracle)],
    )
    def test_matrix_matches_scalar_oracle(self, kind, oracle):
        spec = _spec(kind)
        np.testing.assert_allclose(
            filterbank_matrix(spec), oracle(spec), rtol=1e-9, atol=1e-12
        )

    def test_mel_triangles_peak_one(self):
        weights = filterbank_matrix(_spec("mel"))
        assert weights.min() >= 0.0
        assert weights.max() <= 1.0 + 1e-12
        # interior filters are wide enough to reach their peak on this grid
        assert np.all(weights[20:].max(axis=1) > 0.5)

    def test_mel_1khz_tone_lands_on_nearest_band(self):
        spec = _spec("mel")

        def to_mel(f):
            return 2595.0 * math.log10(1.0 + f / 700.0)

        def to_hz(m):
            return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

        lo_m, hi_m = to_mel(spec.fmin), to_mel(spec.fmax)
        centers = [to_hz(lo_m + (hi_m - lo_m) * (j + 1) / 129.0) for j in range(128)]
        expected = min(range(128), key=lambda j: abs(centers[j] - 1000.0))

        t = np.arange(spec.win_length * 2) / spec.sample_rate
        power = stft_power(np.sin(2 * np.pi * 1000.0 * t), spec)
        bands = apply_filterbank(power, spec)
        assert int(np.argmax(bands.mean(axis=1))) == expected

    def test_gam_centers_ascending_in_range(self):
        spec = _spec("gam")
        centers = _erb_centers_oracle(spec.fmin, spec.fmax, 128)
        assert all(a < b for a, b in zip(centers, centers[1:]))
        assert centers[0] > spec.fmin - 1e-9
        assert centers[-1] < spec.fmax + 1e-9

    def test_cqt_rows_nonnegative_and_bounded(self):
        weights = filterbank_matrix(_spec("cqt"))
        assert weights.min() >= 0.0
        assert weights.max() <= 1.0 + 1e-12

    def test_white_noise_mel_bands_all_positive(self):
        spec = _spec("mel")
        rng = np.random.default_rng(3)
        power = stft_power(rng.standard_normal(3 * spec.win_length), spec)
        bands = apply_filterbank(power, spec)
        assert bands.shape[0] == N_BANDS
        assert np.all(bands.sum(axis=1) > 0)

    def test_zero_power_gives_zero_bands(self):
        spec = _spec("gam")
        n_bins = spec.win_length // 2 + 1
        bands = apply_filterbank(np.zeros((n_bins, 7)), spec)
        assert np.all(bands == 0.0)

    def test_wrong_bin_count_rejected(self):
        with pytest.raises(ShapeError):
            apply_filterbank(np.zeros((100, 7)), _spec())

    def test_spec_validation(self):
        with pytest.raises(SpecError):
            FilterbankSpec(kind="stq", sample_rate=RATE, fmax=4000.0)
        with pytest.raises(SpecError):
            FilterbankSpec(kind="mel", sample_rate=RATE, n_filters=64, fmax=4000.0)
        with pytest.raises(SpecError):
            FilterbankSpec(kind="mel", sample_rate=RATE, fmin=100.0, fmax=9000.0)
        with pytest.raises(SpecError):
            FilterbankSpec(kind="mel", sample_rate=RATE, window=0.01, hop=0.02,
                           fmax=4000.0)


class TestLogCompress:
    def test_unit_input_is_zero_db(self):
        out = log_compress(np.array([[1.0]]))
        assert abs(out[0, 0]) < 1e-9

    def test_floor_is_eighty_db_below_peak(self):
        out = log_compress(np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(out[0], [10 * math.log10(1 + 1e-10), -80.0],
                                   atol=1e-6)

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(4)
        x = np.sort(rng.uniform(0, 10, 100))
        out = log_compress(x[None, :])[0]
        assert np.all(np.diff(out) >= 0)

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            log_compress(np.array([[-1e-6]]))


class TestDelta:
    def test_constant_gives_zero(self):
        out = delta(np.full((3, 20), 7.5))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_linear_ramp_interior_slope_is_one(self):
        ramp = np.tile(np.arange(30.0), (2, 1))
        out = delta(ramp)
        np.testing.assert_allclose(out[:, 4:-4], 1.0, atol=1e-12)
        # replicated edges flatten the regression, shrinking edge slopes
        assert np.all(out[:, 0] < 1.0)
        assert np.all(out[:, :4] >= 0.0)

    def test_second_order_is_twice_applied(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 40))
        np.testing.assert_allclose(delta(x, order=2), delta(delta(x, 1), 1),
                                   rtol=1e-12)

    def test_window_oracle_single_frame(self):
        # hand-computed regression: out[t] = sum_k k*(x[t+k]-x[t-k]) / 60
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 15))
        out = delta(x)
        t = 7  # deep interior, padding can't reach it
        expected = sum(k * (x[0, t + k] - x[0, t - k]) for k in range(1, 5)) / 60.0
        np.testing.assert_allclose(out[0, t], expected, rtol=1e-12)

    def test_validation(self):
        with pytest.raises(SpecError):
            delta(np.zeros((2, 20)), order=3)
        with pytest.raises(ShapeError):
            delta(np.zeros(20))
        with pytest.raises(DataError):
            delta(np.zeros((2, 8)))


class TestAssembly:
    def _bands(self, n_frames, seed=0):
        rng = np.random.default_rng(seed)
        return rng.standard_normal((N_BANDS, n_frames))

    def test_shape_and_channel_order(self):
        ch0 = self._bands(N_FRAMES, seed=1)
        ch1 = self._bands(N_FRAMES, seed=2)
        tensor = assemble_tensor(ch0, ch1, "mel")
        assert tensor.data.shape == (N_BANDS, N_FRAMES, N_CHANNELS)
        np.testing.assert_allclose(tensor.data[:, :, 0], ch0)
        np.testing.assert_allclose(tensor.data[:, :, 3], ch1)
        np.testing.assert_allclose(tensor.data[:, :, 1], delta(ch0, 1))
        np.testing.assert_allclose(tensor.data[:, :, 5], delta(ch1, 2))

    def test_longer_input_center_cropped(self):
        marked = np.tile(np.arange(709.0), (N_BANDS, 1))
        tensor = assemble_tensor(marked, marked, "mel")
        # 709 -> 704 drops (709-704)//2 = 2 leading frames
        np.testing.assert_allclose(tensor.data[0, :, 0], np.arange(2.0, 706.0))

    def test_shorter_input_edge_padded(self):
        marked = np.tile(np.arange(700.0), (N_BANDS, 1))
        tensor = assemble_tensor(marked, marked, "mel")
        static = tensor.data[0, :, 0]
        np.testing.assert_allclose(static[:3], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(static[-3:], [699.0, 699.0, 699.0])

    def test_deltas_computed_before_crop(self):
        marked = np.tile(np.arange(709.0), (N_BANDS, 1))
        tensor = assemble_tensor(marked, marked, "mel")
        # derivative of the full 709-frame ramp, then the same center crop
        full_delta = delta(marked, 1)[:, 2:706]
        np.testing.assert_allclose(tensor.data[:, :, 1], full_delta, atol=1e-12)
        # delta-after-crop would flatten the first kept frame to 0.5 instead
        assert abs(tensor.data[0, 0, 1] - 0.5) > 0.2

    def test_mismatched_channels_rejected(self):
        with pytest.raises(ShapeError):
            assemble_tensor(self._bands(704), self._bands(705), "mel")
        with pytest.raises(ShapeError):
            assemble_tensor(np.zeros((64, 704)), np.zeros((64, 704)), "mel")


class TestPatches:
    def _tensor(self, seed=0):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((N_BANDS, N_FRAMES, N_CHANNELS))
        return SpectrogramTensor(data=data, kind="mel")

    def test_ten_patches_at_fixed_starts(self):
        tensor = self._tensor()
        patches = split_patches(tensor)
        assert patches.patches.shape == (N_PATCHES, N_BANDS, PATCH_LEN, N_CHANNELS)
        assert patches.starts == tuple(64 * i for i in range(10))
        for i, s in enumerate(patches.starts):
            np.testing.assert_array_equal(
                patches.patches[i], tensor.data[:, s : s + PATCH_LEN, :]
            )

    def test_half_overlap(self):
        patches = split_patches(self._tensor(1))
        np.testing.assert_array_equal(
            patches.patches[0][:, PATCH_HOP:, :],
            patches.patches[1][:, :PATCH_HOP, :],
        )

    def test_wrong_frame_count_rejected(self):
        data = np.zeros((N_BANDS, 700, N_CHANNELS))
        with pytest.raises(ShapeError):
            SpectrogramTensor(data=data, kind="mel")


class TestNormalization:
    def test_roundtrip_standardizes(self):
        rng = np.random.default_rng(7)
        patches = split_patches(
            SpectrogramTensor(
                data=rng.standard_normal((N_BANDS, N_FRAMES, N_CHANNELS)) * 3 + 5,
                kind="gam",
            )
        )
        stats = channel_stats(patches.patches)
        out = normalize(patches, stats)
        flat = out.patches.reshape(-1, N_CHANNELS)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-9)

    def test_zero_std_rejected(self):
        stats = ChannelStats(mean=np.zeros(6), std=np.zeros(6))
        patches = split_patches(
            SpectrogramTensor(
                data=np.ones((N_BANDS, N_FRAMES, N_CHANNELS)), kind="mel"
            )
        )
        with pytest.raises(DataError):
            normalize(patches, stats)


class TestExtract:
    def _clip(self, rate=RATE, seed=0):
        rng = np.random.default_rng(seed)
        samples = 0.1 * rng.standard_normal((2, rate * 10))
        return AudioClip(samples=samples, sample_rate=rate)

    @pytest.mark.parametrize("kind", ["mel", "gam", "cqt"])
    def test_canonical_shape_for_all_kinds(self, kind):
        tensor = extract_features(self._clip(), default_filterbank(kind, RATE))
        assert tensor.data.shape == (N_BANDS, N_FRAMES, N_CHANNELS)
        assert tensor.kind == kind

    def test_rate_mismatch_rejected(self):
        with pytest.raises(DataError):
            extract_features(self._clip(rate=8000), default_filterbank("mel", 48000))

    def test_deterministic(self):
        spec = default_filterbank("mel", RATE)
        a = extract_features(self._clip(seed=3), spec)
        b = extract_features(self._clip(seed=3), spec)
        np.testing.assert_array_equal(a.data, b.data)


class TestFeatureFile:
    def _tensor(self):
        rng = np.random.default_rng(8)
        data = rng.standard_normal((N_BANDS, N_FRAMES, N_CHANNELS))
        return SpectrogramTensor(data=data, kind="cqt")

    def test_roundtrip_float32_exact(self, tmp_path):
        tensor = self._tensor()
        path = tmp_path / "clip.sften"
        save_feature(path, tensor)
        loaded = load_feature(path)
        assert loaded.kind == "cqt"
        assert loaded.data.dtype == np.float32
        np.testing.assert_array_equal(loaded.data, tensor.data.astype(np.float32))

    def test_save_is_byte_deterministic(self, tmp_path):
        tensor = self._tensor()
        a, b = tmp_path / "a.sften", tmp_path / "b.sften"
        save_feature(a, tensor)
        save_feature(b, tensor)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.sften"
        save_feature(path, self._tensor())
        raw = bytearray(path.read_bytes())
        raw[:6] = b"NOPE\0\0"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_feature(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "cut.sften"
        save_feature(path, self._tensor())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CorruptionError):
            load_feature(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "ver.sften"
        save_feature(path, self._tensor())
        raw = bytearray(path.read_bytes())
        raw[6:10] = np.uint32(99).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_feature(path)

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_feature(tmp_path / "absent.sften")
