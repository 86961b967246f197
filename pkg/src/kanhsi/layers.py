"""Network layers: classical and KAN variants with matching shape contracts.

Every forward pass is built from the autodiff ops in ``tensor``, so gradients
for all trainable parameters and inputs come from the recorded graph. KAN
variants are drop-in replacements: for matched configuration they accept and
produce exactly the shapes of their classical counterparts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import basis as _basis
from .basis import RbfGrid, SplineGrid, bspline_basis, bspline_values, rbf_basis, rbf_values
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    div,
    einsum,
    exp,
    matmul,
    maximum,
    mul,
    neg,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    sqrt,
    sub,
    take_per_sample,
    transpose,
    zero_pad,
)

__all__ = [
    "KanConfig",
    "Layer",
    "Linear",
    "KanLinear",
    "ConvSpec",
    "Conv",
    "KanConv",
    "BatchNorm",
    "PReLU",
    "ReLU",
    "MaxPool",
    "Dropout",
    "Flatten",
    "Attention",
    "softmax",
    "silu",
]


@dataclass(frozen=True)
class KanConfig:
    """Edge-function hyperparameters shared by all KAN layers."""

    grid_size: int = 2
    spline_order: int = 3
    basis_kind: str = "spline"  # spline | rbf
    base_fn: str = "prelu"  # prelu | identity | silu
    grid_range: tuple[float, float] = (-1.0, 1.0)
    scale_noise: float = 0.1
    scale_base: float = 1.0
    scale_spline: float = 1.0

    def __post_init__(self):
        if self.basis_kind not in ("spline", "rbf"):
            raise ValueError(f"unknown basis kind {self.basis_kind!r}")
        if self.base_fn not in ("prelu", "identity", "silu"):
            raise ValueError(f"unknown base function {self.base_fn!r}")

    @property
    def basis_count(self) -> int:
        return self.grid_size + self.spline_order

    def make_grid(self):
        if self.basis_kind == "spline":
            return _basis.make_grid(self.grid_size, self.spline_order, self.grid_range)
        return _basis.rbf_grid_for(self.grid_size, self.spline_order, self.grid_range)


def _eval_basis(grid, x: Tensor) -> Tensor:
    if isinstance(grid, SplineGrid):
        return bspline_basis(grid, x)
    return rbf_basis(grid, x)


def _basis_matrix(grid, pts: np.ndarray) -> np.ndarray:
    if isinstance(grid, SplineGrid):
        return bspline_values(grid, pts)
    return rbf_values(grid, pts)


def _uniform(rng, shape, bound: float, dtype) -> Tensor:
    vals = (rng.random(shape) * 2.0 - 1.0) * bound
    return Tensor(vals, requires_grad=True, dtype=dtype)


def silu(x: Tensor) -> Tensor:
    return div(x, add(exp(neg(x)), 1.0))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along an axis; rows sum to one."""
    m = reduce_max(x, axis=axis, keepdims=True)
    e = exp(sub(x, broadcast_to(m, x.shape)))
    s = reduce_sum(e, axis=axis, keepdims=True)
    return div(e, broadcast_to(s, x.shape))


class Layer:
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def num_params(self) -> int:
        return sum(p.size for _, p in self.params())

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.forward(x, train)


class _BaseFn:
    """The fixed-form component b(u) of an edge function; one shared PReLU slope."""

    def __init__(self, kind: str, rng, dtype):
        self.kind = kind
        self.slope = Tensor(np.array([0.25]), requires_grad=True, dtype=dtype) if kind == "prelu" else None

    def apply(self, x: Tensor) -> Tensor:
        if self.kind == "identity":
            return x
        if self.kind == "silu":
            return silu(x)
        pos = maximum(x, 0.0)
        return add(pos, mul(sub(x, pos), self.slope))

    def params(self) -> list[tuple[str, Tensor]]:
        return [("slope", self.slope)] if self.slope is not None else []


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        # ReLU-gain Kaiming bound keeps activation variance through deep stacks
        bound = math.sqrt(6.0 / n_in)
        self.w = _uniform(rng, (n_out, n_in), bound, dtype)
        self.b = Tensor(np.zeros(n_out), requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"linear layer expects [batch, {self.n_in}], got {x.shape}")
        y = matmul(x, transpose(self.w))
        return add(y, broadcast_to(reshape(self.b, (1, self.n_out)), y.shape))

    def params(self):
        return [("w", self.w), ("b", self.b)]


def _fit_noise_coefficients(rng, grid, cfg: KanConfig, n_in: int, n_out: int, dtype) -> Tensor:
    """Least-squares basis coefficients so each initial spline(u) traces
    uniform noise of amplitude scale_noise/G at the G+1 grid points."""
    lo, hi = cfg.grid_range
    pts = np.linspace(lo, hi, cfg.grid_size + 1)
    a = _basis_matrix(grid, pts)  # [G+1, T]
    y = (rng.random((cfg.grid_size + 1, n_in, n_out)) - 0.5) * (cfg.scale_noise / cfg.grid_size)
    coeff = np.einsum("tg,gio->oit", np.linalg.pinv(a), y)
    return Tensor(coeff, requires_grad=True, dtype=dtype)


class KanLinear(Layer):
    """Matrix of learnable edge functions phi(u) = w_b*b(u) + w_s*sum_t c_t B_t(u).

    One (w_b, w_s) pair and one coefficient vector per edge; grid and base
    function shared across the layer.
    """

    def __init__(
        self,
        n_in: int,
        n_out: int,
        cfg: KanConfig | None = None,
        batch_norm_input: bool = False,
        rng=None,
        dtype=np.float32,
    ):
        rng = rng or np.random.default_rng(0)
        cfg = cfg or KanConfig()
        self.n_in, self.n_out, self.cfg = n_in, n_out, cfg
        self.grid = cfg.make_grid()
        self.w_b = _uniform(rng, (n_out, n_in), cfg.scale_base / math.sqrt(n_in), dtype)
        self.w_s = Tensor(np.full((n_out, n_in), cfg.scale_spline), requires_grad=True, dtype=dtype)
        self.coeff = _fit_noise_coefficients(rng, self.grid, cfg, n_in, n_out, dtype)
        self.base = _BaseFn(cfg.base_fn, rng, dtype)
        self.input_norm = BatchNorm(n_in, dtype=dtype) if batch_norm_input else None

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"KAN linear layer expects [batch, {self.n_in}], got {x.shape}")
        if self.input_norm is not None:
            x = self.input_norm.forward(x, train)
        y = einsum("bi,oi->bo", self.base.apply(x), self.w_b)
        bas = _eval_basis(self.grid, x)  # [batch, n_in, T]
        t = self.coeff.shape[-1]
        ws = broadcast_to(reshape(self.w_s, (self.n_out, self.n_in, 1)), (self.n_out, self.n_in, t))
        return add(y, einsum("bit,oit->bo", bas, mul(ws, self.coeff)))

    def params(self):
        out = [("w_b", self.w_b), ("w_s", self.w_s), ("coeff", self.coeff)]
        out += [("base." + n, p) for n, p in self.base.params()]
        if self.input_norm is not None:
            out += [("input_norm." + n, p) for n, p in self.input_norm.params()]
        return out


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of an N-d cross-correlation (no kernel flip)."""

    dim: int
    in_channels: int
    out_channels: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...] = ()
    padding: str = "none"  # none | zero | reflect
    pad: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"conv dim must be 1, 2 or 3, got {self.dim}")
        kernel = tuple(int(k) for k in (self.kernel if hasattr(self.kernel, "__len__") else (self.kernel,)))
        if len(kernel) == 1 and self.dim > 1:
            kernel = kernel * self.dim
        stride = tuple(int(s) for s in (self.stride if hasattr(self.stride, "__len__") else (self.stride,))) or (1,) * self.dim
        if len(stride) == 1 and self.dim > 1:
            stride = stride * self.dim
        pad = tuple(int(p) for p in (self.pad if hasattr(self.pad, "__len__") else (self.pad,))) or (0,) * self.dim
        if len(pad) == 1 and self.dim > 1:
            pad = pad * self.dim
        if len(kernel) != self.dim or len(stride) != self.dim or len(pad) != self.dim:
            raise ValueError("kernel/stride/pad arity must match conv dim")
        if any(k < 1 for k in kernel) or any(s < 1 for s in stride):
            raise ValueError("kernel extents and strides must be positive")
        if self.padding not in ("none", "zero", "reflect"):
            raise ValueError(f"unknown padding mode {self.padding!r}")
        if self.padding == "none" and any(p != 0 for p in pad):
            raise ValueError("padding 'none' requires pad = 0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "pad", pad)

    @property
    def taps(self) -> int:
        return int(np.prod(self.kernel))

    def out_spatial(self, in_spatial: tuple[int, ...]) -> tuple[int, ...]:
        if len(in_spatial) != self.dim:
            raise ShapeError(f"expected {self.dim} spatial dims, got {in_spatial}")
        out = []
        for n, k, s, p in zip(in_spatial, self.kernel, self.stride, self.pad):
            if n + 2 * p < k:
                raise ShapeError(f"spatial extent {n} (+2*{p} pad) smaller than kernel {k}")
            out.append((n + 2 * p - k) // s + 1)
        return tuple(out)


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Mirror out-of-range coordinates without repeating the border sample."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


class _Unfolder:
    """im2col for an N-d conv: gathers sliding blocks as [batch, C*K, P] columns."""

    def __init__(self, spec: ConvSpec):
        self.spec = spec
        self._cache: dict[tuple[int, ...], tuple[np.ndarray, tuple[int, ...], bool]] = {}

    def _indices(self, in_spatial: tuple[int, ...]):
        cached = self._cache.get(in_spatial)
        if cached is not None:
            return cached
        s = self.spec
        out_sp = s.out_spatial(in_spatial)
        pad_spatial = tuple(n + 2 * p for n, p in zip(in_spatial, s.pad))
        gather_spatial = pad_spatial if s.padding == "zero" else in_spatial

        ker = np.stack(np.meshgrid(*[np.arange(k) for k in s.kernel], indexing="ij"), 0).reshape(s.dim, -1)
        pos = np.stack(
            np.meshgrid(*[np.arange(o) * st for o, st in zip(out_sp, s.stride)], indexing="ij"), 0
        ).reshape(s.dim, -1)
        coords = ker[:, :, None] + pos[:, None, :]  # padded-space coords [dim, K, P]
        if s.padding == "reflect":
            coords = np.stack(
                [_reflect_index(coords[d] - s.pad[d], in_spatial[d]) for d in range(s.dim)], 0
            )
        mult = np.array([int(np.prod(gather_spatial[d + 1 :])) for d in range(s.dim)])
        flat_sp = (coords * mult[:, None, None]).sum(axis=0)  # [K, P]
        chan = np.arange(s.in_channels) * int(np.prod(gather_spatial))
        idx = (chan[:, None, None] + flat_sp[None]).reshape(s.in_channels * s.taps, -1)
        entry = (idx.astype(np.intp), out_sp, s.padding == "zero")
        self._cache[in_spatial] = entry
        return entry

    def unfold(self, x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
        s = self.spec
        if x.values.ndim != s.dim + 2:
            raise ShapeError(f"{s.dim}-d conv expects rank {s.dim + 2} input, got {x.shape}")
        if x.shape[1] != s.in_channels:
            raise ShapeError(f"expected {s.in_channels} input channels, got {x.shape[1]}")
        idx, out_sp, needs_zero_pad = self._indices(tuple(x.shape[2:]))
        if needs_zero_pad:
            x = zero_pad(x, [(0, 0), (0, 0)] + [(p, p) for p in s.pad])
        return take_per_sample(x, idx), out_sp


class Conv(Layer):
    """Classical N-d convolution (cross-correlation) with bias."""

    def __init__(self, spec: ConvSpec, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        fan_in = spec.in_channels * spec.taps
        self.w = _uniform(rng, (spec.out_channels, fan_in), math.sqrt(6.0 / fan_in), dtype)
        self.b = Tensor(np.zeros(spec.out_channels), requires_grad=True, dtype=dtype)
        self._unfolder = _Unfolder(spec)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        cols, out_sp = self._unfolder.unfold(x)  # [N, C*K, P]
        y = einsum("bip,oi->bop", cols, self.w)
        y = add(y, broadcast_to(reshape(self.b, (1, self.spec.out_channels, 1)), y.shape))
        return reshape(y, (x.shape[0], self.spec.out_channels) + out_sp)

    def params(self):
        return [("w", self.w), ("b", self.b)]


class KanConv(Layer):
    """Convolution whose kernel taps are edge functions applied before summation.

    One phi per (out_channel, in_channel, kernel position); grid and base
    function shared across the layer. No bias term: each tap already carries
    its own affine freedom through w_b and the spline coefficients.
    """

    def __init__(self, spec: ConvSpec, cfg: KanConfig | None = None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        cfg = cfg or KanConfig(basis_kind="rbf")
        self.spec, self.cfg = spec, cfg
        self.grid = cfg.make_grid()
        fan_in = spec.in_channels * spec.taps
        self.w_b = _uniform(rng, (spec.out_channels, fan_in), cfg.scale_base / math.sqrt(fan_in), dtype)
        self.w_s = Tensor(np.full((spec.out_channels, fan_in), cfg.scale_spline), requires_grad=True, dtype=dtype)
        self.coeff = _fit_noise_coefficients(rng, self.grid, cfg, fan_in, spec.out_channels, dtype)
        self.base = _BaseFn(cfg.base_fn, rng, dtype)
        self._unfolder = _Unfolder(spec)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        cols, out_sp = self._unfolder.unfold(x)  # [N, C*K, P]
        y = einsum("bip,oi->bop", self.base.apply(cols), self.w_b)
        bas = _eval_basis(self.grid, cols)  # [N, C*K, P, T]
        o, i = self.w_s.shape
        t = self.coeff.shape[-1]
        ws = broadcast_to(reshape(self.w_s, (o, i, 1)), (o, i, t))
        y = add(y, einsum("bipt,oit->bop", bas, mul(ws, self.coeff)))
        return reshape(y, (x.shape[0], self.spec.out_channels) + out_sp)

    def params(self):
        out = [("w_b", self.w_b), ("w_s", self.w_s), ("coeff", self.coeff)]
        out += [("base." + n, p) for n, p in self.base.params()]
        return out


class BatchNorm(Layer):
    """Batch normalization over feature axis 1 (works for 2-d and conv inputs).

    Train mode normalizes by the biased batch statistics and updates the
    running buffers; eval mode is a pure function of the stored statistics.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        nd = x.values.ndim
        if nd < 2 or x.shape[1] != self.num_features:
            raise ShapeError(f"expected feature axis 1 of size {self.num_features}, got {x.shape}")
        perm = inv = None
        flat = x
        if nd > 2:
            perm = (0,) + tuple(range(2, nd)) + (1,)
            inv = tuple(np.argsort(perm))
            moved = transpose(x, perm)
            moved_shape = moved.shape
            flat = reshape(moved, (-1, self.num_features))
        f = self.num_features

        if train:
            if x.shape[0] < 2:
                raise ValueError("batch normalization in train mode requires batch >= 2")
            mu = reduce_mean(flat, axis=0)
            xc = sub(flat, broadcast_to(reshape(mu, (1, f)), flat.shape))
            var = reduce_mean(mul(xc, xc), axis=0)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu.values).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var.values).astype(self.running_var.dtype)
            denom = sqrt(add(var, self.eps))
            xn = div(xc, broadcast_to(reshape(denom, (1, f)), flat.shape))
        else:
            mean_c = Tensor(self.running_mean.reshape(1, f).copy())
            den_c = Tensor(np.sqrt(self.running_var.astype(np.float64) + self.eps).reshape(1, f), dtype=x.dtype)
            xn = div(sub(flat, broadcast_to(mean_c, flat.shape)), broadcast_to(den_c, flat.shape))

        out = add(
            mul(xn, broadcast_to(reshape(self.gamma, (1, f)), xn.shape)),
            broadcast_to(reshape(self.beta, (1, f)), xn.shape),
        )
        if nd > 2:
            out = transpose(reshape(out, moved_shape), inv)
        return out

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class PReLU(Layer):
    """x for x >= 0, a*x otherwise; one learnable slope per layer."""

    def __init__(self, init: float = 0.25, dtype=np.float32):
        self.slope = Tensor(np.array([init]), requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        pos = maximum(x, 0.0)
        return add(pos, mul(sub(x, pos), self.slope))

    def params(self):
        return [("slope", self.slope)]


class ReLU(Layer):
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return maximum(x, 0.0)


class MaxPool(Layer):
    """Non-overlapping window maxima (stride = window); remainder dropped."""

    def __init__(self, window: tuple[int, ...]):
        self.window = tuple(int(w) for w in (window if hasattr(window, "__len__") else (window,)))
        if any(w < 1 for w in self.window):
            raise ValueError("pool window extents must be positive")

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        d = len(self.window)
        if x.values.ndim != d + 2:
            raise ShapeError(f"{d}-d pool expects rank {d + 2} input, got {x.shape}")
        sp = x.shape[2:]
        if any(n < w for n, w in zip(sp, self.window)):
            raise ShapeError(f"pool window {self.window} larger than input {sp}")
        out_sp = tuple(n // w for n, w in zip(sp, self.window))
        cropped = tuple(o * w for o, w in zip(out_sp, self.window))
        if cropped != sp:
            sl = (slice(None), slice(None)) + tuple(slice(0, c) for c in cropped)
            x = x[sl]
        shape = (x.shape[0], x.shape[1]) + tuple(v for o, w in zip(out_sp, self.window) for v in (o, w))
        x = reshape(x, shape)
        for i in reversed(range(d)):
            x = reduce_max(x, axis=3 + 2 * i)
        return x


class Dropout(Layer):
    """Bernoulli mask with inverse scaling in train mode; identity in eval."""

    def __init__(self, p: float = 0.5, seed: int = 0):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self._rng = np.random.default_rng(seed)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if not train or self.p == 0.0:
            return x
        keep = (self._rng.random(x.shape) >= self.p).astype(x.values.dtype) / (1.0 - self.p)
        return mul(x, Tensor(keep, dtype=x.dtype))


class Flatten(Layer):
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return reshape(x, (x.shape[0], -1))


class Attention(Layer):
    """Scaled dot-product attention with classical or KAN Q/K/V projections.

    Per head: softmax(Q K^T / sqrt(d_k)) V; heads are concatenated. The two
    projection variants expose identical input/output shapes.
    """

    def __init__(self, d_model: int, heads: int = 1, kan: bool = False,
                 cfg: KanConfig | None = None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model, self.heads, self.kan = d_model, heads, kan
        self.d_k = d_model // heads
        if kan:
            cfg = cfg or KanConfig()
            self.phi_q = KanLinear(d_model, d_model, cfg, rng=rng, dtype=dtype)
            self.phi_k = KanLinear(d_model, d_model, cfg, rng=rng, dtype=dtype)
            self.phi_v = KanLinear(d_model, d_model, cfg, rng=rng, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(d_model)
            self.w_q = _uniform(rng, (d_model, d_model), bound, dtype)
            self.w_k = _uniform(rng, (d_model, d_model), bound, dtype)
            self.w_v = _uniform(rng, (d_model, d_model), bound, dtype)

    def _project(self, which: str, flat: Tensor, train: bool) -> Tensor:
        if self.kan:
            return getattr(self, f"phi_{which}").forward(flat, train)
        return matmul(flat, getattr(self, f"w_{which}"))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.values.ndim != 3 or x.shape[2] != self.d_model:
            raise ShapeError(f"attention expects [batch, tokens, {self.d_model}], got {x.shape}")
        n, t, d = x.shape
        flat = reshape(x, (n * t, d))
        parts = []
        for which in ("q", "k", "v"):
            p = self._project(which, flat, train)
            parts.append(transpose(reshape(p, (n, t, self.heads, self.d_k)), (0, 2, 1, 3)))
        q, k, v = parts
        scores = mul(einsum("bhtd,bhsd->bhts", q, k), 1.0 / math.sqrt(self.d_k))
        weights = softmax(scores, axis=-1)
        mixed = einsum("bhts,bhsd->bhtd", weights, v)
        return reshape(transpose(mixed, (0, 2, 1, 3)), (n, t, d))

    def attention_weights(self, x: Tensor) -> Tensor:
        """The row-stochastic mixing matrix, for inspection and tests."""
        n, t, d = x.shape
        flat = reshape(x, (n * t, d))
        q = transpose(reshape(self._project("q", flat, False), (n, t, self.heads, self.d_k)), (0, 2, 1, 3))
        k = transpose(reshape(self._project("k", flat, False), (n, t, self.heads, self.d_k)), (0, 2, 1, 3))
        return softmax(mul(einsum("bhtd,bhsd->bhts", q, k), 1.0 / math.sqrt(self.d_k)), axis=-1)

    def params(self):
        if self.kan:
            out = []
            for which in ("q", "k", "v"):
                out += [(f"phi_{which}." + n, p) for n, p in getattr(self, f"phi_{which}").params()]
            return out
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)]
