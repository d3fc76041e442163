"""Architecture builders, parameter counts, checkpoint files."""

from fractions import Fraction

import numpy as np
import pytest

from avscene import (
    ArchitectureSpec,
    LayerSpec,
    Network,
    arch_from_identifier,
    build_mlp,
    build_vgg14,
    load_checkpoint,
    save_checkpoint,
)
from avscene.frontend import ChannelStats
from avscene.models import shape_flow
from avscene.errors import CorruptionError, FormatError, ShapeError, SpecError

# the twelve convolution rows: output shape after each row's pooling stage
VGG_ROW_SHAPES = [
    (128, 128, 64),
    (64, 64, 64),
    (64, 64, 128),
    (32, 32, 128),
    (32, 32, 256),
    (32, 32, 256),
    (32, 32, 256),
    (16, 16, 256),
    (16, 16, 512),
    (16, 16, 512),
    (16, 16, 512),
    (512,),
]
VGG_DROPOUT_RATES = [0.25, 0.25, 0.30, 0.30] + [0.35] * 8
VGG14_FULL_PARAM_COUNT = 11_135_254


class TestVgg14Architecture:
    def test_row_output_shapes_at_full_scale(self):
        arch = build_vgg14()
        shapes = shape_flow(arch)
        # each conv row ends with its dropout layer; collect shapes there
        row_shapes = [
            s for s, layer in zip(shapes, arch.layers) if layer.kind == "dropout"
        ]
        assert row_shapes[:12] == VGG_ROW_SHAPES
        assert row_shapes[12] == (1024,)  # hidden FC row
        assert shapes[-1] == (10,)

    def test_dropout_ladder(self):
        arch = build_vgg14()
        rates = [l.rate for l in arch.layers if l.kind == "dropout"]
        assert rates == VGG_DROPOUT_RATES + [0.40]

    def test_trainable_layer_count(self):
        arch = build_vgg14()
        convs = sum(1 for l in arch.layers if l.kind == "conv")
        fcs = sum(1 for l in arch.layers if l.kind == "fc")
        assert (convs, fcs) == (12, 2)
        assert arch.trainable_layer_count == 14

    def test_pool_placement(self):
        arch = build_vgg14()
        kinds = [l.kind for l in arch.layers]
        assert kinds.count("ap") == 3
        assert kinds.count("gap") == 1
        assert kinds[-1] == "softmax"
        # every conv is wrapped bn-conv-relu-bn
        for i, l in enumerate(arch.layers):
            if l.kind == "conv":
                assert arch.layers[i - 1].kind == "bn"
                assert arch.layers[i + 1].kind == "relu"
                assert arch.layers[i + 2].kind == "bn"

    def test_parameter_count_pinned(self):
        model = Network(build_vgg14(), rng=np.random.default_rng(0))
        channels = (64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512)
        total, cin = 0, 6
        for c in channels:
            total += 2 * cin          # batchnorm ahead of the conv
            total += 9 * cin * c + c  # 3x3 kernel + bias
            total += 2 * c            # batchnorm after
            cin = c
        total += 512 * 1024 + 1024
        total += 1024 * 10 + 10
        assert total == VGG14_FULL_PARAM_COUNT
        assert model.param_count == VGG14_FULL_PARAM_COUNT

    def test_scaled_variant_shapes(self):
        arch = build_vgg14(input_dims=(32, 32, 6), scale="1/8")
        shapes = shape_flow(arch)
        convs = [l.width for l in arch.layers if l.kind == "conv"]
        assert convs == [8, 8, 16, 16, 32, 32, 32, 32, 64, 64, 64, 64]
        assert (64,) in shapes  # GAP output
        fc_widths = [l.width for l in arch.layers if l.kind == "fc"]
        assert fc_widths == [128, 10]
        assert arch.identifier == "vgg14@1/8:32x32x6:10"

    def test_forward_trace_matches_shape_flow(self):
        rng = np.random.default_rng(1)
        arch = build_vgg14(input_dims=(16, 16, 6), scale="1/8", n_classes=4)
        model = Network(arch, rng=rng)
        x = rng.standard_normal((3, 16, 16, 6)).astype(np.float32)
        trace = []
        model.forward(x, mode="eval", trace=trace)
        assert trace == shape_flow(arch)

    def test_input_validation(self):
        with pytest.raises(SpecError):
            build_vgg14(scale="1/3")
        with pytest.raises(SpecError):
            build_vgg14(input_dims=(64, 128, 6))  # full scale needs square
        with pytest.raises(SpecError):
            build_vgg14(input_dims=(128, 128, 3))
        with pytest.raises(SpecError):
            build_vgg14(input_dims=(20, 20, 6), scale="1/8")  # not /8
        with pytest.raises(SpecError):
            build_vgg14(n_classes=0)


class TestMlpArchitecture:
    def test_full_scale_widths(self):
        arch = build_mlp(input_dim=2048)
        widths = [l.width for l in arch.layers if l.kind == "fc"]
        assert widths == [8192, 8192, 1024, 10]
        rates = [l.rate for l in arch.layers if l.kind == "dropout"]
        assert rates == [0.40, 0.40, 0.40]
        assert shape_flow(arch)[-1] == (10,)

    def test_scaled_widths(self):
        arch = build_mlp(input_dim=2048, scale="1/64")
        widths = [l.width for l in arch.layers if l.kind == "fc"]
        assert widths == [128, 128, 16, 10]
        assert arch.identifier == "mlp@1/64:2048:10"

    def test_small_inputs_accepted(self):
        arch = build_mlp(input_dim=1024)
        assert arch.input_dims == (1024,)

    def test_validation(self):
        with pytest.raises(SpecError):
            build_mlp(input_dim=0)
        with pytest.raises(SpecError):
            build_mlp(input_dim=2048, scale=-1)
        with pytest.raises(SpecError):
            build_mlp(input_dim=2048, scale="1/3")  # 8192/3 not integral


class TestArchitectureSpec:
    def test_shape_flow_rejects_broken_ladders(self):
        with pytest.raises(SpecError):
            ArchitectureSpec(
                name="vgg14", scale=Fraction(1), input_dims=(8, 8, 6),
                n_classes=2, layers=(LayerSpec("fc", width=2),),
            )
        with pytest.raises(SpecError):
            ArchitectureSpec(
                name="mlp", scale=Fraction(1), input_dims=(8,),
                n_classes=2,
                layers=(LayerSpec("fc", width=3), LayerSpec("fc", width=2)),
            )  # no softmax terminator

    def test_identifier_roundtrip(self):
        for arch in (
            build_vgg14(input_dims=(32, 32, 6), scale="1/8", n_classes=4),
            build_mlp(input_dim=2048, scale="1/64"),
            build_vgg14(),
        ):
            rebuilt = arch_from_identifier(arch.identifier)
            assert rebuilt == arch

    def test_layer_spec_validation(self):
        with pytest.raises(SpecError):
            LayerSpec("warp")
        with pytest.raises(SpecError):
            LayerSpec("conv")  # conv needs a width
        with pytest.raises(SpecError):
            LayerSpec("dropout", rate=1.5)


class TestCheckpoint:
    def _model(self, seed=0):
        rng = np.random.default_rng(seed)
        arch = build_vgg14(input_dims=(16, 16, 6), scale="1/8", n_classes=4)
        model = Network(arch, rng=rng)
        # sculpt the running stats so the roundtrip must carry them
        for state in model.bn_state.values():
            state["running_mean"] += rng.standard_normal(
                state["running_mean"].shape
            ).astype(state["running_mean"].dtype)
        return model

    def test_roundtrip_bitwise(self, tmp_path):
        model = self._model()
        stats = ChannelStats(
            mean=np.arange(6, dtype=np.float64), std=np.ones(6) * 2.5
        )
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, stats=stats)
        loaded, loaded_stats = load_checkpoint(path)

        assert loaded.arch == model.arch
        for name, p in model.params.items():
            np.testing.assert_array_equal(loaded.params[name], p)
        for name, state in model.bn_state.items():
            for key in ("running_mean", "running_var"):
                np.testing.assert_array_equal(loaded.bn_state[name][key], state[key])
        np.testing.assert_array_equal(
            loaded_stats.mean, stats.mean.astype(np.float32)
        )

    def test_roundtrip_preserves_predictions(self, tmp_path):
        model = self._model(3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded, stats = load_checkpoint(path)
        assert stats is None
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 16, 16, 6)).astype(np.float32)
        np.testing.assert_array_equal(
            loaded.forward(x, mode="eval"), model.forward(x, mode="eval")
        )

    def test_save_is_byte_deterministic(self, tmp_path):
        model = self._model(5)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, a)
        save_checkpoint(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        model = self._model(6)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"HELLO\0" + b"\0" * 64)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_family_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(7)
        model = Network(build_mlp(input_dim=64, scale="1/64", n_classes=4), rng=rng)
        path = tmp_path / "mlp.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(ShapeError):
            load_checkpoint(path, expect_family="vgg14")
        loaded, _ = load_checkpoint(path, expect_family="mlp")
        assert loaded.arch.name == "mlp"


class TestNetworkInit:
    def test_bn_starts_at_identity(self):
        rng = np.random.default_rng(8)
        model = Network(build_mlp(input_dim=8, n_classes=2, scale="1/512"), rng=rng)
        assert all("bn" not in n for n in model.params)  # mlp has no bn
        vgg = Network(
            build_vgg14(input_dims=(8, 8, 6), scale="1/8", n_classes=2), rng=rng
        )
        gammas = [p for n, p in vgg.params.items() if n.endswith("gamma")]
        assert gammas and all(np.all(g == 1.0) for g in gammas)
        for state in vgg.bn_state.values():
            assert np.all(state["running_mean"] == 0.0)
            assert np.all(state["running_var"] == 1.0)

    def test_seed_determinism(self):
        build = lambda s: Network(
            build_vgg14(input_dims=(8, 8, 6), scale="1/8", n_classes=2),
            rng=np.random.default_rng(s),
        )
        a, b, c = build(1), build(1), build(2)
        sample = next(n for n in a.params if n.endswith("/w"))
        np.testing.assert_array_equal(a.params[sample], b.params[sample])
        assert not np.array_equal(a.params[sample], c.params[sample])

    def test_forward_rejects_wrong_dims(self):
        rng = np.random.default_rng(9)
        model = Network(
            build_vgg14(input_dims=(16, 16, 6), scale="1/8", n_classes=4), rng=rng
        )
        with pytest.raises(ShapeError):
            model.forward(np.zeros((2, 8, 8, 6), dtype=np.float32))
