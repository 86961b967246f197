"""Declarative architecture builders with KAN block substitution.

A ModelSpec is an ordered list of layer specifications, each tagged with the
block it belongs to (feature extractor, head, transformer internals, or
glue). Builders validate shapes symbolically at build time; ``Model``
instantiates the layers with seeded parameters and runs them sequentially.
The text serialization (one layer per line) round-trips losslessly and is
what run manifests record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .layers import (
    Attention,
    BatchNorm,
    Conv,
    ConvSpec,
    Dropout,
    Flatten,
    KanConfig,
    KanConv,
    KanLinear,
    Layer,
    Linear,
    MaxPool,
    PReLU,
    ReLU,
    softmax,
)
from .tensor import ShapeError, Tensor, add, broadcast_to, concat, einsum, matmul, maximum, reshape, transpose

__all__ = [
    "ARCHITECTURES",
    "BuildError",
    "KanSettings",
    "SubstitutionPlan",
    "LayerSpec",
    "ModelSpec",
    "Model",
    "build_architecture",
    "substitute",
    "param_count",
    "layer_out_shape",
    "serialize_spec",
    "parse_spec",
]

ARCHITECTURES = ("mlp", "cnn1d", "cnn2d", "cnn3d_luo", "cnn3d_he", "nm3dcnn", "ssftt")

_MIN_PATCH = {"mlp": 1, "cnn1d": 1, "cnn2d": 3, "cnn3d_luo": 3, "cnn3d_he": 7, "nm3dcnn": 7, "ssftt": 13}


class BuildError(ValueError):
    """An architecture cannot be built with the requested configuration."""


@dataclass(frozen=True)
class KanSettings:
    """User-facing KAN knobs; spline basis for linear blocks, RBF for convs."""

    grid_size: int = 2
    spline_order: int = 3
    base_fn: str = "prelu"
    linear_basis: str = "spline"
    conv_basis: str = "rbf"

    @property
    def basis_count(self) -> int:
        return self.grid_size + self.spline_order

    def linear_cfg(self) -> KanConfig:
        return KanConfig(self.grid_size, self.spline_order, self.linear_basis, self.base_fn)

    def conv_cfg(self) -> KanConfig:
        return KanConfig(self.grid_size, self.spline_order, self.conv_basis, self.base_fn)


@dataclass(frozen=True)
class SubstitutionPlan:
    """Which blocks are replaced by KAN analogs; every block has an assignment."""

    feature_extractor: str = "classical"
    head: str = "classical"
    attention: str = "classical"

    def __post_init__(self):
        for f in (self.feature_extractor, self.head, self.attention):
            if f not in ("classical", "kan"):
                raise ValueError(f"block assignment must be 'classical' or 'kan', got {f!r}")

    @classmethod
    def from_name(cls, name: str) -> "SubstitutionPlan":
        table = {
            "vanilla": ("classical", "classical", "classical"),
            "kan-fe": ("kan", "classical", "classical"),
            "kan-head": ("classical", "kan", "classical"),
            "full-kan": ("kan", "kan", "kan"),
        }
        if name not in table:
            raise ValueError(f"unknown plan {name!r}; expected one of {sorted(table)}")
        return cls(*table[name])

    @property
    def name(self) -> str:
        key = (self.feature_extractor, self.head, self.attention)
        names = {
            ("classical", "classical", "classical"): "vanilla",
            ("kan", "classical", "classical"): "kan-fe",
            ("classical", "kan", "classical"): "kan-head",
            ("kan", "kan", "kan"): "full-kan",
        }
        return names.get(key, "custom")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    block: str  # fe | head | attention | tokenizer | io
    config: dict

    def get(self, key, default=None):
        return self.config.get(key, default)


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    bands: int
    classes: int
    patch: int
    scale: float
    plan: SubstitutionPlan
    kan: KanSettings
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    overrides: dict = field(default_factory=dict)


# -- symbolic shape propagation ------------------------------------------------


def layer_out_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of one layer spec, or ShapeError."""
    k, c = spec.kind, spec.config
    if k in ("linear", "kan_linear"):
        if len(in_shape) != 1 or in_shape[0] != c["n_in"]:
            raise ShapeError(f"{k} expects ({c['n_in']},), got {in_shape}")
        return (c["n_out"],)
    if k in ("conv", "kan_conv"):
        cs = _conv_spec(c)
        if len(in_shape) != cs.dim + 1 or in_shape[0] != cs.in_channels:
            raise ShapeError(f"{k} expects ({cs.in_channels}, {cs.dim} spatial), got {in_shape}")
        return (cs.out_channels,) + cs.out_spatial(in_shape[1:])
    if k == "batch_norm":
        if not in_shape or in_shape[0] != c["features"]:
            raise ShapeError(f"batch_norm expects leading feature extent {c['features']}, got {in_shape}")
        return in_shape
    if k in ("prelu", "relu", "dropout"):
        return in_shape
    if k == "maxpool":
        w = c["window"]
        if len(in_shape) != len(w) + 1:
            raise ShapeError(f"maxpool window {w} mismatches input {in_shape}")
        if any(n < wi for n, wi in zip(in_shape[1:], w)):
            raise ShapeError(f"pool window {w} larger than input {in_shape[1:]}")
        return (in_shape[0],) + tuple(n // wi for n, wi in zip(in_shape[1:], w))
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    if k == "reshape":
        shape = c["shape"]
        if int(np.prod(shape)) != int(np.prod(in_shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {shape}")
        return tuple(shape)
    if k == "to_tokens":
        if len(in_shape) < 2:
            raise ShapeError(f"to_tokens expects channels + spatial, got {in_shape}")
        return (int(np.prod(in_shape[1:])), in_shape[0])
    if k == "tokenizer":
        if len(in_shape) != 2 or in_shape[1] != c["d_model"]:
            raise ShapeError(f"tokenizer expects (pixels, {c['d_model']}), got {in_shape}")
        return (c["n_tokens"] + 1, c["d_model"])
    if k == "encoder":
        if len(in_shape) != 2 or in_shape[1] != c["d_model"]:
            raise ShapeError(f"encoder expects (tokens, {c['d_model']}), got {in_shape}")
        return in_shape
    if k == "select_token":
        if len(in_shape) != 2 or not 0 <= c["index"] < in_shape[0]:
            raise ShapeError(f"select_token {c['index']} out of range for {in_shape}")
        return (in_shape[1],)
    if k == "parallel_conv":
        if len(in_shape) != 4 or in_shape[0] != c["in_channels"]:
            raise ShapeError(f"parallel_conv expects ({c['in_channels']}, d, h, w), got {in_shape}")
        if any(d % 2 == 0 for d in c["depths"]):
            raise ShapeError("parallel_conv branch depths must be odd to preserve extent")
        return (c["branch_channels"] * len(c["depths"]),) + in_shape[1:]
    raise ShapeError(f"unknown layer kind {k!r}")


def _conv_spec(c: dict) -> ConvSpec:
    return ConvSpec(
        dim=c["dim"],
        in_channels=c["in_channels"],
        out_channels=c["out_channels"],
        kernel=tuple(c["kernel"]),
        stride=tuple(c.get("stride", ())) or (1,) * c["dim"],
        padding=c.get("padding", "none"),
        pad=tuple(c.get("pad", ())) or (0,) * c["dim"],
    )


def _kan_cfg(c: dict) -> KanConfig:
    return KanConfig(c["grid_size"], c["spline_order"], c["basis"], c["base_fn"])


# -- parameter counting -----------------------------------------------------------


def _kan_edge_params(n_in: int, n_out: int, c: dict) -> int:
    t = c["grid_size"] + c["spline_order"]
    base = 1 if c["base_fn"] == "prelu" else 0
    return n_out * n_in * (t + 2) + base


def layer_param_count(spec: LayerSpec) -> int:
    k, c = spec.kind, spec.config
    if k == "linear":
        return c["n_out"] * (c["n_in"] + 1)
    if k == "kan_linear":
        return _kan_edge_params(c["n_in"], c["n_out"], c)
    if k == "conv":
        cs = _conv_spec(c)
        return cs.out_channels * (cs.in_channels * cs.taps + 1)
    if k == "kan_conv":
        cs = _conv_spec(c)
        return _kan_edge_params(cs.in_channels * cs.taps, cs.out_channels, c)
    if k == "batch_norm":
        return 2 * c["features"]
    if k == "prelu":
        return 1
    if k == "tokenizer":
        return 2 * c["d_model"] * (c["n_tokens"] + 1)
    if k == "encoder":
        d, h = c["d_model"], c["hidden"]
        if c["kan_attention"]:
            attn = 3 * _kan_edge_params(d, d, c)
        else:
            attn = 3 * d * d
        if c["kan_mlp"]:
            mlp = _kan_edge_params(d, h, c) + _kan_edge_params(h, d, c)
        else:
            mlp = h * (d + 1) + d * (h + 1)
        return attn + mlp
    if k == "parallel_conv":
        n = 0
        for depth in c["depths"]:
            taps = depth * c["spatial"] * c["spatial"]
            if c["kan"]:
                n += _kan_edge_params(c["in_channels"] * taps, c["branch_channels"], c)
            else:
                n += c["branch_channels"] * (c["in_channels"] * taps + 1)
            if c["bn"]:
                n += 2 * c["branch_channels"]
        return n
    return 0


def param_count(spec: ModelSpec) -> int:
    """Exact trainable scalar count from the per-layer closed forms."""
    return sum(layer_param_count(ls) for ls in spec.layers)


# -- composite runtime layers ------------------------------------------------------


class Reshape(Layer):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(shape)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return reshape(x, (x.shape[0],) + self.shape)


class ToTokens(Layer):
    """[N, C, *spatial] -> [N, prod(spatial), C] token sequence."""

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        n, ch = x.shape[0], x.shape[1]
        flat = reshape(x, (n, ch, -1))
        return transpose(flat, (0, 2, 1))


class SelectToken(Layer):
    def __init__(self, index: int = 0):
        self.index = index

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return x[:, self.index, :]


class Tokenizer(Layer):
    """Learnable attention tokenizer: softmax over pixels of a learned token
    map mixes pixel features into n_tokens tokens, with a prepended class
    token and learned positional offsets."""

    def __init__(self, d_model: int, n_tokens: int, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.d_model, self.n_tokens = d_model, n_tokens
        bound = 1.0 / math.sqrt(d_model)
        self.w_a = Tensor((rng.random((d_model, n_tokens)) * 2 - 1) * bound, requires_grad=True, dtype=dtype)
        self.cls = Tensor((rng.random((1, 1, d_model)) * 2 - 1) * 0.02, requires_grad=True, dtype=dtype)
        self.pos = Tensor((rng.random((1, n_tokens + 1, d_model)) * 2 - 1) * 0.02, requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.values.ndim != 3 or x.shape[2] != self.d_model:
            raise ShapeError(f"tokenizer expects [batch, pixels, {self.d_model}], got {x.shape}")
        n, p, d = x.shape
        scores = reshape(matmul(reshape(x, (n * p, d)), self.w_a), (n, p, self.n_tokens))
        attn = softmax(scores, axis=1)  # normalized over pixels, per token
        tokens = einsum("bpt,bpd->btd", attn, x)
        seq = concat([broadcast_to(self.cls, (n, 1, d)), tokens], axis=1)
        return add(seq, broadcast_to(self.pos, seq.shape))

    def params(self):
        return [("w_a", self.w_a), ("cls", self.cls), ("pos", self.pos)]


class EncoderBlock(Layer):
    """Transformer encoder: residual attention then a residual 2-layer MLP."""

    def __init__(self, d_model: int, heads: int, hidden: int, kan_attention: bool,
                 kan_mlp: bool, cfg: KanConfig | None = None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.d_model, self.hidden, self.kan_mlp = d_model, hidden, kan_mlp
        self.attn = Attention(d_model, heads, kan=kan_attention, cfg=cfg, rng=rng, dtype=dtype)
        if kan_mlp:
            self.fc1 = KanLinear(d_model, hidden, cfg, rng=rng, dtype=dtype)
            self.fc2 = KanLinear(hidden, d_model, cfg, rng=rng, dtype=dtype)
        else:
            self.fc1 = Linear(d_model, hidden, rng=rng, dtype=dtype)
            self.fc2 = Linear(hidden, d_model, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        x = add(x, self.attn.forward(x, train))
        n, t, d = x.shape
        h = self.fc1.forward(reshape(x, (n * t, d)), train)
        if not self.kan_mlp:
            h = maximum(h, 0.0)
        y = self.fc2.forward(h, train)
        return add(x, reshape(y, (n, t, d)))

    def params(self):
        out = [("attn." + n, p) for n, p in self.attn.params()]
        out += [("fc1." + n, p) for n, p in self.fc1.params()]
        out += [("fc2." + n, p) for n, p in self.fc2.params()]
        return out


class ParallelConv(Layer):
    """Parallel 3-d convolutions with different kernel depths, concatenated
    along channels; extents preserved by zero padding."""

    def __init__(self, in_channels: int, branch_channels: int, depths: tuple[int, ...],
                 spatial: int, kan: bool, bn: bool, cfg: KanConfig | None = None,
                 rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.branches: list[tuple[Layer, BatchNorm | None]] = []
        for depth in depths:
            spec = ConvSpec(
                dim=3,
                in_channels=in_channels,
                out_channels=branch_channels,
                kernel=(depth, spatial, spatial),
                padding="zero",
                pad=(depth // 2, spatial // 2, spatial // 2),
            )
            conv = KanConv(spec, cfg, rng=rng, dtype=dtype) if kan else Conv(spec, rng=rng, dtype=dtype)
            norm = BatchNorm(branch_channels, dtype=dtype) if bn else None
            self.branches.append((conv, norm))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        outs = []
        for conv, norm in self.branches:
            y = conv.forward(x, train)
            if norm is not None:
                y = norm.forward(y, train)
            outs.append(y)
        return concat(outs, axis=1)

    def params(self):
        out = []
        for i, (conv, norm) in enumerate(self.branches):
            out += [(f"b{i}." + n, p) for n, p in conv.params()]
            if norm is not None:
                out += [(f"b{i}.bn." + n, p) for n, p in norm.params()]
        return out


# -- spec -> runtime -----------------------------------------------------------------


def _instantiate(ls: LayerSpec, rng, dtype) -> Layer:
    k, c = ls.kind, ls.config
    if k == "linear":
        return Linear(c["n_in"], c["n_out"], rng=rng, dtype=dtype)
    if k == "kan_linear":
        return KanLinear(c["n_in"], c["n_out"], _kan_cfg(c),
                         batch_norm_input=c.get("batch_norm_input", False), rng=rng, dtype=dtype)
    if k == "conv":
        return Conv(_conv_spec(c), rng=rng, dtype=dtype)
    if k == "kan_conv":
        return KanConv(_conv_spec(c), _kan_cfg(c), rng=rng, dtype=dtype)
    if k == "batch_norm":
        return BatchNorm(c["features"], dtype=dtype)
    if k == "prelu":
        return PReLU(dtype=dtype)
    if k == "relu":
        return ReLU()
    if k == "maxpool":
        return MaxPool(tuple(c["window"]))
    if k == "dropout":
        return Dropout(c["p"], seed=int(rng.integers(2**31)))
    if k == "flatten":
        return Flatten()
    if k == "reshape":
        return Reshape(tuple(c["shape"]))
    if k == "to_tokens":
        return ToTokens()
    if k == "tokenizer":
        return Tokenizer(c["d_model"], c["n_tokens"], rng=rng, dtype=dtype)
    if k == "encoder":
        return EncoderBlock(c["d_model"], c["heads"], c["hidden"], c["kan_attention"],
                            c["kan_mlp"], _kan_cfg(c), rng=rng, dtype=dtype)
    if k == "select_token":
        return SelectToken(c["index"])
    if k == "parallel_conv":
        cfg = _kan_cfg(c) if c["kan"] else None
        return ParallelConv(c["in_channels"], c["branch_channels"], tuple(c["depths"]),
                            c["spatial"], c["kan"], c["bn"], cfg, rng=rng, dtype=dtype)
    raise ValueError(f"unknown layer kind {k!r}")


class Model:
    """Instantiated layer stack for a ModelSpec; parameters seeded deterministically."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.layers = [_instantiate(ls, rng, dtype) for ls in spec.layers]

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(
                f"model expects per-sample shape {self.spec.input_shape}, got {tuple(x.shape[1:])}"
            )
        for i, (layer, ls) in enumerate(zip(self.layers, self.spec.layers)):
            try:
                x = layer.forward(x, train)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({ls.kind}): {e}") from e
        return x

    def params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (layer, ls) in enumerate(zip(self.layers, self.spec.layers)):
            out += [(f"L{i:02d}.{ls.kind}.{name}", p) for name, p in layer.params()]
        return out

    def num_params(self) -> int:
        return sum(p.size for _, p in self.params())

    def zero_grad(self) -> None:
        for _, p in self.params():
            p.zero_grad()

    def save_params(self, path) -> None:
        np.savez(path, **{name: p.values for name, p in self.params()})

    def load_params(self, path) -> None:
        with np.load(path) as data:
            for name, p in self.params():
                if name not in data:
                    raise ValueError(f"missing parameter {name} in {path}")
                arr = data[name]
                if arr.shape != p.values.shape:
                    raise ShapeError(f"parameter {name} shape {arr.shape} != {p.values.shape}")
                p.values = arr.astype(p.values.dtype)


# -- builders ---------------------------------------------------------------------


def _w(base: float, scale: float) -> int:
    """Width multiplier, rounded up so no layer collapses to zero."""
    return max(1, math.ceil(base * scale))


class _Assembler:
    def __init__(self, input_shape: tuple[int, ...]):
        self.layers: list[LayerSpec] = []
        self.shape = tuple(input_shape)

    def emit(self, kind: str, block: str, **config) -> None:
        ls = LayerSpec(kind, block, config)
        try:
            self.shape = layer_out_shape(ls, self.shape)
        except ShapeError as e:
            raise BuildError(f"layer {len(self.layers)} ({kind}): {e}") from e
        self.layers.append(ls)


def _kan_keys(cfg: KanConfig) -> dict:
    return {
        "grid_size": cfg.grid_size,
        "spline_order": cfg.spline_order,
        "basis": cfg.basis_kind,
        "base_fn": cfg.base_fn,
    }


def _emit_kan_head(a: _Assembler, widths: tuple[int, ...], classes: int, kan: KanSettings) -> None:
    """Linear-KAN head: batch-norm before each KAN layer."""
    keys = _kan_keys(kan.linear_cfg())
    for w in widths:
        a.emit("batch_norm", "head", features=a.shape[0])
        a.emit("kan_linear", "head", n_in=a.shape[0], n_out=w, **keys)
    a.emit("batch_norm", "head", features=a.shape[0])
    a.emit("kan_linear", "head", n_in=a.shape[0], n_out=classes, **keys)


def _build_mlp(a, bands, classes, patch, plan, kan, scale, ov):
    hidden = tuple(ov.get("hidden", ()))
    bn = bool(ov.get("batch_norm", False))
    if plan.head == "classical":
        for w in hidden:
            if bn:
                a.emit("batch_norm", "head", features=a.shape[0])
            a.emit("linear", "head", n_in=a.shape[0], n_out=int(w))
            a.emit("relu", "head")
        if bn:
            a.emit("batch_norm", "head", features=a.shape[0])
        a.emit("linear", "head", n_in=a.shape[0], n_out=classes)
    else:
        keys = _kan_keys(kan.linear_cfg())
        for w in hidden:
            if bn:
                a.emit("batch_norm", "head", features=a.shape[0])
            a.emit("kan_linear", "head", n_in=a.shape[0], n_out=int(w), **keys)
        if bn:
            a.emit("batch_norm", "head", features=a.shape[0])
        a.emit("kan_linear", "head", n_in=a.shape[0], n_out=classes, **keys)


def _build_cnn1d(a, bands, classes, patch, plan, kan, scale, ov):
    kernel = int(ov.get("conv_kernel", math.ceil(bands / 9)))
    n_k = _w(ov.get("conv_channels", 20), scale)
    pool = int(ov.get("pool", 3))
    conv_cfg = dict(dim=1, in_channels=1, out_channels=n_k, kernel=(kernel,), stride=(1,),
                    padding="none", pad=(0,))
    if plan.feature_extractor == "classical":
        a.emit("conv", "fe", **conv_cfg)
        a.emit("relu", "fe")
    else:
        a.emit("kan_conv", "fe", **conv_cfg, **_kan_keys(kan.conv_cfg()))
    a.emit("maxpool", "fe", window=(pool,))
    a.emit("flatten", "io")
    if plan.head == "classical":
        hidden = _w(ov.get("hidden", 100), scale)
        a.emit("linear", "head", n_in=a.shape[0], n_out=hidden)
        a.emit("relu", "head")
        a.emit("linear", "head", n_in=hidden, n_out=classes)
    else:
        w512 = _w(ov.get("kan_hidden", 512), scale)
        _emit_kan_head(a, (w512, w512), classes, kan)


def _build_cnn2d(a, bands, classes, patch, plan, kan, scale, ov):
    c1 = _w(ov.get("conv1_channels", 3 * bands), scale)
    c2 = int(ov.get("conv2_multiplier", 3)) * c1
    convs = [
        dict(dim=2, in_channels=bands, out_channels=c1, kernel=(3, 3), stride=(1, 1),
             padding="none", pad=(0, 0)),
        dict(dim=2, in_channels=c1, out_channels=c2, kernel=(3, 3), stride=(1, 1),
             padding="zero", pad=(1, 1)),
    ]
    for cfg in convs:
        if plan.feature_extractor == "classical":
            a.emit("conv", "fe", **cfg)
            a.emit("relu", "fe")
        else:
            a.emit("kan_conv", "fe", **cfg, **_kan_keys(kan.conv_cfg()))
    a.emit("flatten", "io")
    if plan.head == "classical":
        hidden = _w(ov.get("hidden", 6 * bands), scale)
        a.emit("linear", "head", n_in=a.shape[0], n_out=hidden)
        a.emit("relu", "head")
        a.emit("linear", "head", n_in=hidden, n_out=classes)
    else:
        _emit_kan_head(a, (_w(ov.get("kan_hidden", 128), scale),), classes, kan)


def _build_cnn3d_luo(a, bands, classes, patch, plan, kan, scale, ov):
    depth = int(ov.get("spectral_kernel", min(24, bands)))
    kan_fe = plan.feature_extractor == "kan"
    c3 = _w(ov.get("kan_conv3_channels", 64) if kan_fe else ov.get("conv3_channels", 90), scale)
    c2 = _w(ov.get("kan_conv2_channels", 32) if kan_fe else ov.get("conv2_channels", 64), scale)
    conv3 = dict(dim=3, in_channels=1, out_channels=c3, kernel=(depth, 3, 3), stride=(1, 1, 1),
                 padding="zero", pad=(0, 1, 1))
    if kan_fe:
        a.emit("kan_conv", "fe", **conv3, **_kan_keys(kan.conv_cfg()))
    else:
        a.emit("conv", "fe", **conv3)
        a.emit("relu", "fe")
    merged = (a.shape[0] * a.shape[1],) + a.shape[2:]
    a.emit("reshape", "fe", shape=merged)
    conv2 = dict(dim=2, in_channels=merged[0], out_channels=c2, kernel=(3, 3), stride=(1, 1),
                 padding="zero", pad=(1, 1))
    if kan_fe:
        a.emit("kan_conv", "fe", **conv2, **_kan_keys(kan.conv_cfg()))
    else:
        a.emit("conv", "fe", **conv2)
        a.emit("relu", "fe")
    a.emit("flatten", "io")
    if plan.head == "classical":
        hidden = _w(ov.get("hidden", 256), scale)
        a.emit("linear", "head", n_in=a.shape[0], n_out=hidden)
        a.emit("relu", "head")
        a.emit("linear", "head", n_in=hidden, n_out=classes)
    else:
        _emit_kan_head(a, (_w(ov.get("kan_hidden", 128), scale),), classes, kan)


def _build_he_family(a, bands, classes, patch, plan, kan, scale, ov, with_bn: bool):
    """Shared builder for the 7x7-window multiscale 3-d nets.

    with_bn adds batch-norm after every convolution and drops the dropout
    layer; its KAN variant also halves all kernel counts.
    """
    kan_fe = plan.feature_extractor == "kan"
    halve = 0.5 if (with_bn and kan_fe) else 1.0
    stem = _w(ov.get("stem_channels", 16) * halve, scale)
    branch = _w(ov.get("branch_channels", 8) * halve, scale)
    tail = _w(ov.get("tail_channels", 16) * halve, scale)
    depths = tuple(ov.get("branch_depths", (1, 3, 5, 7)))
    conv_keys = _kan_keys(kan.conv_cfg())

    def emit_conv(out_ch, kernel, pad):
        cfg = dict(dim=3, in_channels=a.shape[0], out_channels=out_ch, kernel=kernel,
                   stride=(1, 1, 1), padding="zero", pad=pad)
        if kan_fe:
            a.emit("kan_conv", "fe", **cfg, **conv_keys)
        else:
            a.emit("conv", "fe", **cfg)
        if with_bn:
            a.emit("batch_norm", "fe", features=out_ch)
        if not kan_fe:
            a.emit("relu", "fe")

    emit_conv(stem, (min(7, bands), 3, 3), (0, 1, 1))
    for _ in range(2):
        a.emit("parallel_conv", "fe", in_channels=a.shape[0], branch_channels=branch,
               depths=depths, spatial=3, kan=kan_fe, bn=with_bn, **conv_keys)
        if not kan_fe:
            a.emit("relu", "fe")
    emit_conv(tail, (3, 3, 3), (0, 1, 1))
    a.emit("flatten", "io")
    if plan.head == "classical":
        if not with_bn:
            a.emit("dropout", "head", p=float(ov.get("dropout", 0.5)))
        a.emit("linear", "head", n_in=a.shape[0], n_out=classes)
    else:
        _emit_kan_head(a, (), classes, kan)


def _build_ssftt(a, bands, classes, patch, plan, kan, scale, ov):
    kan_fe = plan.feature_extractor == "kan"
    kan_attn = plan.attention == "kan"
    c3 = _w(ov.get("conv3_channels", 8), scale)
    d_model = _w(ov.get("conv2_channels", 64), scale)
    n_tokens = int(ov.get("tokens", 4))
    heads = int(ov.get("heads", 1))
    if d_model % heads != 0:
        raise BuildError(f"ssftt embed width {d_model} not divisible by heads {heads}")
    depth = min(int(ov.get("spectral_kernel", 7)), bands)
    conv_keys = _kan_keys(kan.conv_cfg())

    conv3 = dict(dim=3, in_channels=1, out_channels=c3, kernel=(depth, 3, 3), stride=(1, 1, 1),
                 padding="none", pad=(0, 0, 0))
    if kan_fe:
        a.emit("kan_conv", "fe", **conv3, **conv_keys)
    else:
        a.emit("conv", "fe", **conv3)
        a.emit("relu", "fe")
    merged = (a.shape[0] * a.shape[1],) + a.shape[2:]
    a.emit("reshape", "fe", shape=merged)
    conv2 = dict(dim=2, in_channels=merged[0], out_channels=d_model, kernel=(3, 3), stride=(1, 1),
                 padding="none", pad=(0, 0))
    if kan_fe:
        a.emit("kan_conv", "fe", **conv2, **conv_keys)
    else:
        a.emit("conv", "fe", **conv2)
        a.emit("relu", "fe")
    a.emit("to_tokens", "io")
    a.emit("tokenizer", "tokenizer", d_model=d_model, n_tokens=n_tokens)
    a.emit("encoder", "attention", d_model=d_model, heads=heads,
           hidden=int(ov.get("mlp_multiplier", 2)) * d_model,
           kan_attention=kan_attn, kan_mlp=kan_attn, **_kan_keys(kan.linear_cfg()))
    a.emit("select_token", "io", index=0)
    if plan.head == "classical":
        a.emit("linear", "head", n_in=d_model, n_out=classes)
    else:
        _emit_kan_head(a, (), classes, kan)


_BUILDERS = {
    "mlp": _build_mlp,
    "cnn1d": _build_cnn1d,
    "cnn2d": _build_cnn2d,
    "cnn3d_luo": _build_cnn3d_luo,
    "cnn3d_he": lambda *args: _build_he_family(*args, with_bn=False),
    "nm3dcnn": lambda *args: _build_he_family(*args, with_bn=True),
    "ssftt": _build_ssftt,
}

_ALLOWED_OVERRIDES = {
    "mlp": {"hidden", "batch_norm"},
    "cnn1d": {"conv_kernel", "conv_channels", "pool", "hidden", "kan_hidden"},
    "cnn2d": {"conv1_channels", "conv2_multiplier", "hidden", "kan_hidden"},
    "cnn3d_luo": {"spectral_kernel", "conv3_channels", "conv2_channels",
                  "kan_conv3_channels", "kan_conv2_channels", "hidden", "kan_hidden"},
    "cnn3d_he": {"stem_channels", "branch_channels", "tail_channels", "branch_depths", "dropout"},
    "nm3dcnn": {"stem_channels", "branch_channels", "tail_channels", "branch_depths"},
    "ssftt": {"conv3_channels", "conv2_channels", "tokens", "heads", "spectral_kernel",
              "mlp_multiplier", "min_patch"},
}


def build_architecture(
    arch: str,
    bands: int,
    classes: int,
    patch: int = 1,
    plan: SubstitutionPlan | str = "vanilla",
    kan: KanSettings | None = None,
    scale: float = 1.0,
    overrides: dict | None = None,
) -> ModelSpec:
    """Shape-validated model spec for one of the supported architectures."""
    if arch not in ARCHITECTURES:
        raise BuildError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    if isinstance(plan, str):
        plan = SubstitutionPlan.from_name(plan)
    kan = kan or KanSettings()
    overrides = dict(overrides or {})
    unknown = set(overrides) - _ALLOWED_OVERRIDES[arch]
    if unknown:
        raise BuildError(f"unknown overrides for {arch}: {sorted(unknown)}")
    if bands < 1 or classes < 1 or patch < 1:
        raise BuildError("bands, classes and patch must all be >= 1")
    if not scale > 0:
        raise BuildError(f"scale must be positive, got {scale}")
    min_patch = int(overrides.get("min_patch", _MIN_PATCH[arch]))
    if arch in ("mlp", "cnn1d"):
        if patch != 1:
            raise BuildError(f"{arch} is spectral-only and requires patch = 1, got {patch}")
    else:
        if patch < min_patch:
            raise BuildError(f"{arch} requires patch >= {min_patch}, got {patch}")
        if patch % 2 == 0:
            raise BuildError(f"patch must be odd, got {patch}")

    if arch == "mlp":
        input_shape: tuple[int, ...] = (bands,)
    elif arch == "cnn1d":
        input_shape = (1, bands)
    elif arch == "cnn2d":
        input_shape = (bands, patch, patch)
    else:
        input_shape = (1, bands, patch, patch)

    a = _Assembler(input_shape)
    _BUILDERS[arch](a, bands, classes, patch, plan, kan, scale, overrides)
    if a.shape != (classes,):
        raise BuildError(f"builder for {arch} ended at shape {a.shape}, expected ({classes},)")
    return ModelSpec(
        arch=arch, bands=bands, classes=classes, patch=patch, scale=scale, plan=plan,
        kan=kan, input_shape=input_shape, layers=tuple(a.layers), overrides=overrides,
    )


def substitute(spec: ModelSpec, plan: SubstitutionPlan | str) -> ModelSpec:
    """Rebuild with a new plan; layer specs of unchanged blocks keep identity."""
    if isinstance(plan, str):
        plan = SubstitutionPlan.from_name(plan)
    rebuilt = build_architecture(
        spec.arch, spec.bands, spec.classes, spec.patch, plan, spec.kan, spec.scale, spec.overrides
    )
    unchanged = {
        b for b in ("feature_extractor", "head", "attention")
        if getattr(plan, b) == getattr(spec.plan, b)
    }
    block_map = {"feature_extractor": "fe", "head": "head", "attention": "attention"}
    keep = {block_map[b] for b in unchanged} | {"io", "tokenizer"}
    old_by_block: dict[str, list[LayerSpec]] = {}
    for ls in spec.layers:
        old_by_block.setdefault(ls.block, []).append(ls)
    spliced = []
    counters: dict[str, int] = {}
    for ls in rebuilt.layers:
        if ls.block in keep:
            i = counters.get(ls.block, 0)
            olds = old_by_block.get(ls.block, [])
            if i < len(olds) and olds[i] == ls:
                ls = olds[i]
            counters[ls.block] = i + 1
        spliced.append(ls)
    return replace(rebuilt, layers=tuple(spliced))


# -- text serialization ------------------------------------------------------------


def _enc(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "(" + ",".join(str(int(i)) for i in v) + ")"
    return str(v)


def _dec(s: str):
    if s == "true":
        return True
    if s == "false":
        return False
    if s.startswith("(") and s.endswith(")"):
        inner = s[1:-1]
        return tuple(int(p) for p in inner.split(",")) if inner else ()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def serialize_spec(spec: ModelSpec) -> str:
    lines = ["kanhsi-model v1"]
    lines.append(
        f"arch={spec.arch} bands={spec.bands} classes={spec.classes} patch={spec.patch} "
        f"scale={_enc(float(spec.scale))} plan={spec.plan.feature_extractor},{spec.plan.head},{spec.plan.attention}"
    )
    k = spec.kan
    lines.append(
        f"kan grid_size={k.grid_size} spline_order={k.spline_order} base_fn={k.base_fn} "
        f"linear_basis={k.linear_basis} conv_basis={k.conv_basis}"
    )
    lines.append("input=" + _enc(spec.input_shape))
    lines.append("overrides " + json.dumps(spec.overrides, sort_keys=True))
    for ls in spec.layers:
        parts = [f"layer {ls.kind} block={ls.block}"]
        for key in sorted(ls.config):
            parts.append(f"{key}={_enc(ls.config[key])}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> ModelSpec:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "kanhsi-model v1":
        raise ValueError("not a kanhsi model spec")
    meta = dict(part.split("=", 1) for part in lines[1].split())
    fe, head, attn = meta["plan"].split(",")
    plan = SubstitutionPlan(fe, head, attn)
    kan_meta = dict(part.split("=", 1) for part in lines[2].split()[1:])
    kan = KanSettings(
        grid_size=int(kan_meta["grid_size"]),
        spline_order=int(kan_meta["spline_order"]),
        base_fn=kan_meta["base_fn"],
        linear_basis=kan_meta["linear_basis"],
        conv_basis=kan_meta["conv_basis"],
    )
    input_shape = _dec(lines[3].split("=", 1)[1])
    if isinstance(input_shape, int):
        input_shape = (input_shape,)
    overrides = _untuple(json.loads(lines[4].split(" ", 1)[1]))
    layers = []
    for ln in lines[5:]:
        parts = ln.split()
        if parts[0] != "layer":
            raise ValueError(f"bad layer line: {ln!r}")
        kind = parts[1]
        kv = dict(part.split("=", 1) for part in parts[2:])
        block = kv.pop("block")
        config = {key: _dec(val) for key, val in kv.items()}
        layers.append(LayerSpec(kind, block, config))
    return ModelSpec(
        arch=meta["arch"], bands=int(meta["bands"]), classes=int(meta["classes"]),
        patch=int(meta["patch"]), scale=float(meta["scale"]), plan=plan, kan=kan,
        input_shape=tuple(input_shape), layers=tuple(layers), overrides=overrides,
    )


def _untuple(v):
    if isinstance(v, list):
        return tuple(_untuple(x) for x in v)
    if isinstance(v, dict):
        return {k: _untuple(x) for k, x in v.items()}
    return v
