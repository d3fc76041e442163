"""Architecture builders and checkpoint serialization.

Networks are declared as flat layer ladders (ArchitectureSpec) that a
Network instance interprets. Two families are provided: the VGG14-style
convolutional classifier for spectrogram patches and the MLP head for
precomputed embeddings, both with optional width scaling so desk-size
variants train in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, SpecError
from .frontend import ChannelStats

_SFCKPT_MAGIC = b"SFCKPT\0"
_SFCKPT_VERSION = 1

# reserved tensor names for normalization moments riding along in checkpoints
NORM_MEAN_KEY = "norm/mean"
NORM_STD_KEY = "norm/std"

VGG_SCALES = (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 8))

_VGG_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512)
_VGG_DROPOUT = (0.25, 0.25, 0.30, 0.30, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35)
_VGG_AP_ROWS = (2, 4, 8)  # 1-based rows whose block ends in 2x2 average pooling


@dataclass(frozen=True)
class LayerSpec:
    """One rung of an architecture ladder."""

    kind: str  # conv | bn | relu | ap | gap | fc | softmax | dropout
    width: int = 0  # conv filters or fc units
    rate: float = 0.0  # dropout keep-out probability

    def __post_init__(self):
        if self.kind not in ("conv", "bn", "relu", "ap", "gap", "fc", "softmax", "dropout"):
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "fc") and self.width < 1:
            raise SpecError(f"{self.kind} needs width >= 1, got {self.width}")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Named, shape-checked layer ladder."""

    name: str  # family: "vgg14" or "mlp"
    scale: Fraction
    input_dims: tuple
    n_classes: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_classes < 2:
            raise SpecError(f"need at least 2 classes, got {self.n_classes}")
        shape_flow(self)  # raises SpecError if the ladder does not close

    @property
    def identifier(self) -> str:
        dims = "x".join(str(d) for d in self.input_dims)
        return f"{self.name}@{self.scale}:{dims}:{self.n_classes}"

    @property
    def trainable_layer_count(self) -> int:
        return sum(1 for l in self.layers if l.kind in ("conv", "fc"))


def shape_flow(arch: ArchitectureSpec) -> list:
    """Per-sample output shape after each layer; validates the ladder.

    Returns a list with one entry per layer; the final entry must be
    (n_classes,) produced by a softmax.
    """
    cur = tuple(arch.input_dims)
    if not cur or any(d < 1 for d in cur):
        raise SpecError(f"bad input dims {arch.input_dims}")
    shapes = []
    for layer in arch.layers:
        kind = layer.kind
        if kind == "conv":
            if len(cur) != 3:
                raise SpecError(f"conv needs HxWxC input, got {cur}")
            cur = (cur[0], cur[1], layer.width)
        elif kind == "ap":
            if len(cur) != 3:
                raise SpecError(f"ap needs HxWxC input, got {cur}")
            if cur[0] % 2 or cur[1] % 2:
                raise SpecError(f"ap needs even spatial dims, got {cur}")
            cur = (cur[0] // 2, cur[1] // 2, cur[2])
        elif kind == "gap":
            if len(cur) != 3:
                raise SpecError(f"gap needs HxWxC input, got {cur}")
            cur = (cur[2],)
        elif kind == "fc":
            if len(cur) != 1:
                raise SpecError(f"fc needs a flat input, got {cur}")
            cur = (layer.width,)
        elif kind == "softmax":
            if len(cur) != 1:
                raise SpecError(f"softmax needs a flat input, got {cur}")
        # bn, relu, dropout leave the shape unchanged
        shapes.append(cur)
    if not arch.layers or arch.layers[-1].kind != "softmax":
        raise SpecError("ladder must end in softmax")
    if cur != (arch.n_classes,):
        raise SpecError(f"ladder ends at {cur}, expected ({arch.n_classes},)")
    return shapes


def _as_fraction(scale) -> Fraction:
    if isinstance(scale, float):
        return Fraction(scale).limit_denominator(1 << 20)
    return Fraction(scale)


def _scaled_width(base: int, scale: Fraction) -> int:
    w = base * scale
    if w.denominator != 1 or w < 1:
        raise SpecError(f"scale {scale} does not yield an integer width from {base}")
    return int(w)


def build_vgg14(input_dims=(128, 128, 6), n_classes: int = 10, scale=1) -> ArchitectureSpec:
    """VGG14-style ladder: 12 conv blocks (BN-Conv-ReLU-BN-[AP|GAP]-Dr)
    then FC-ReLU-Dr and FC-Softmax.

    scale shrinks every channel count and the 1024-unit FC; allowed values
    are 1, 1/2, 1/4, 1/8. The full-size model requires square 6-channel
    input; scaled variants accept any spatial size divisible by 8 and any
    channel count (e.g. 32x32x6 or HxWx3).
    """
    fs = _as_fraction(scale)
    if fs not in VGG_SCALES:
        raise SpecError(f"vgg14 scale must be one of 1, 1/2, 1/4, 1/8, got {scale}")
    dims = tuple(int(d) for d in input_dims)
    if len(dims) != 3:
        raise SpecError(f"vgg14 needs HxWxC input dims, got {input_dims}")
    h, w, c = dims
    if fs == 1 and (h != w or c != 6):
        raise SpecError(f"full-size vgg14 needs square 6-channel input, got {dims}")
    if h % 8 or w % 8:
        raise SpecError(f"spatial dims must be divisible by 8, got {h}x{w}")

    layers = []
    for row, (channels, rate) in enumerate(zip(_VGG_CHANNELS, _VGG_DROPOUT), start=1):
        layers += [
            LayerSpec("bn"),
            LayerSpec("conv", width=_scaled_width(channels, fs)),
            LayerSpec("relu"),
            LayerSpec("bn"),
        ]
        if row in _VGG_AP_ROWS:
            layers.append(LayerSpec("ap"))
        elif row == len(_VGG_CHANNELS):
            layers.append(LayerSpec("gap"))
        layers.append(LayerSpec("dropout", rate=rate))
    layers += [
        LayerSpec("fc", width=_scaled_width(1024, fs)),
        LayerSpec("relu"),
        LayerSpec("dropout", rate=0.40),
        LayerSpec("fc", width=n_classes),
        LayerSpec("softmax"),
    ]
    return ArchitectureSpec(
        name="vgg14", scale=fs, input_dims=dims, n_classes=n_classes, layers=tuple(layers)
    )


def build_mlp(input_dim: int, n_classes: int = 10, scale=1) -> ArchitectureSpec:
    """MLP head for embedding vectors: FC-ReLU-Dr(40%) at 8192s, 8192s,
    1024s, then FC-Softmax."""
    if input_dim < 1:
        raise SpecError(f"embedding dim must be >= 1, got {input_dim}")
    fs = _as_fraction(scale)
    if fs <= 0:
        raise SpecError(f"mlp scale must be positive, got {scale}")
    layers = []
    for base in (8192, 8192, 1024):
        layers += [
            LayerSpec("fc", width=_scaled_width(base, fs)),
            LayerSpec("relu"),
            LayerSpec("dropout", rate=0.40),
        ]
    layers += [LayerSpec("fc", width=n_classes), LayerSpec("softmax")]
    return ArchitectureSpec(
        name="mlp", scale=fs, input_dims=(int(input_dim),), n_classes=n_classes,
        layers=tuple(layers),
    )


def arch_from_identifier(identifier: str) -> ArchitectureSpec:
    """Rebuild an ArchitectureSpec from its identifier string."""
    try:
        head, dims_str, classes_str = identifier.split(":")
        name, scale_str = head.split("@")
        dims = tuple(int(d) for d in dims_str.split("x"))
        n_classes = int(classes_str)
        scale = Fraction(scale_str)
    except (ValueError, ZeroDivisionError) as exc:
        raise FormatError(f"bad architecture identifier {identifier!r}") from exc
    if name == "vgg14":
        return build_vgg14(input_dims=dims, n_classes=n_classes, scale=scale)
    if name == "mlp":
        if len(dims) != 1:
            raise FormatError(f"mlp identifier needs a flat input dim, got {dims}")
        return build_mlp(input_dim=dims[0], n_classes=n_classes, scale=scale)
    raise FormatError(f"unknown architecture family {name!r}")


def _write_tensor(f, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(np.uint32(len(encoded)).tobytes())
    f.write(encoded)
    arr = np.ascontiguousarray(array, dtype="<f4")
    f.write(np.uint32(arr.ndim).tobytes())
    f.write(np.array(arr.shape, dtype="<u4").tobytes())
    f.write(arr.tobytes())


def save_checkpoint(model, path, stats: ChannelStats | None = None) -> None:
    """Write a model (parameters + BN running stats + optional
    normalization moments) as a flat named-tensor file."""
    tensors = dict(model.params)
    for bn_name, state in model.bn_state.items():
        tensors[f"{bn_name}/running_mean"] = state["running_mean"]
        tensors[f"{bn_name}/running_var"] = state["running_var"]
    if stats is not None:
        tensors[NORM_MEAN_KEY] = np.asarray(stats.mean)
        tensors[NORM_STD_KEY] = np.asarray(stats.std)

    identifier = model.arch.identifier.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_SFCKPT_MAGIC)
        f.write(np.uint32(_SFCKPT_VERSION).tobytes())
        f.write(np.uint16(len(identifier)).tobytes())
        f.write(identifier)
        f.write(np.uint32(len(tensors)).tobytes())
        for name in sorted(tensors):
            _write_tensor(f, name, tensors[name])


def _read_exact(f, count: int, path, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CorruptionError(f"{path}: truncated {what}")
    return data


def load_checkpoint(path, expect_family: str | None = None):
    """Read a checkpoint back into a fresh Network.

    Returns (model, stats) where stats is the stored ChannelStats or None.
    expect_family guards against loading, say, an MLP checkpoint where a
    VGG model is required.
    """
    from .network import Network  # deferred: network imports this module's specs

    with open(path, "rb") as f:
        magic = f.read(len(_SFCKPT_MAGIC))
        if magic != _SFCKPT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version = int(np.frombuffer(_read_exact(f, 4, path, "header"), "<u4")[0])
        if version != _SFCKPT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        id_len = int(np.frombuffer(_read_exact(f, 2, path, "header"), "<u2")[0])
        identifier = _read_exact(f, id_len, path, "identifier").decode("utf-8")
        count = int(np.frombuffer(_read_exact(f, 4, path, "header"), "<u4")[0])
        tensors = {}
        for _ in range(count):
            name_len = int(np.frombuffer(_read_exact(f, 4, path, "tensor name"), "<u4")[0])
            name = _read_exact(f, name_len, path, "tensor name").decode("utf-8")
            rank = int(np.frombuffer(_read_exact(f, 4, path, "tensor rank"), "<u4")[0])
            dims = tuple(
                int(d)
                for d in np.frombuffer(_read_exact(f, 4 * rank, path, "tensor dims"), "<u4")
            )
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
            payload = _read_exact(f, n_bytes, path, f"tensor {name!r}")
            tensors[name] = np.frombuffer(payload, "<f4").reshape(dims).copy()

    arch = arch_from_identifier(identifier)
    if expect_family is not None and arch.name != expect_family:
        raise ShapeError(
            f"{path}: checkpoint holds a {arch.name!r} model, expected {expect_family!r}"
        )

    stats = None
    if NORM_MEAN_KEY in tensors:
        if NORM_STD_KEY not in tensors:
            raise CorruptionError(f"{path}: normalization mean without std")
        stats = ChannelStats(
            mean=tensors.pop(NORM_MEAN_KEY), std=tensors.pop(NORM_STD_KEY)
        )

    model = Network(arch, rng=np.random.default_rng(0))
    try:
        model.load_tensors(tensors)
    except ShapeError as exc:
        raise CorruptionError(f"{path}: {exc}") from exc
    return model, stats
