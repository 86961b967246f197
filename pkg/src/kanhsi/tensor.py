"""Dense N-d tensors on numpy arrays with a minimal reverse-mode autodiff tape.

Every operation is eager: it computes its numpy result immediately and, when
gradients are enabled and an input requires them, records the local gradient
rule on the output node. ``backward()`` on a scalar walks the recorded graph
in reverse topological order, accumulates gradients into ``.grad`` buffers,
and frees the graph (one backward pass per recorded forward).

Design constraints honoured here:
  * binary elementwise ops require identical shapes; the only implicit
    broadcast is a scalar operand (python number or single-element tensor),
  * explicit ``broadcast_to`` is provided for everything else,
  * reductions use numpy's fixed accumulation order, so identical inputs
    give bit-identical outputs and gradients,
  * float32 is the working precision, float64 the verification precision.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "NumericError",
    "no_grad",
    "full",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "ln",
    "sqrt",
    "maximum",
    "matmul",
    "einsum",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "zero_pad",
    "take_per_sample",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "gradcheck",
    "GradCheckResult",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """backward() called without a recorded graph, or on a consumed one."""


class NumericError(ArithmeticError):
    """A non-finite or out-of-domain value where a finite one is required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_grad_fn", "_freed")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.values: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self._freed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping -------------------------------------------
    def zero_grad(self) -> None:
        """Reset the gradient buffer to exact zeros."""
        self.grad = np.zeros_like(self.values)

    def backward(self) -> None:
        """Reverse-mode pass from this scalar; frees the recorded graph."""
        if self.values.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {self.shape}")
        if self._freed:
            raise GraphError("graph already consumed by a previous backward pass")
        if self._grad_fn is None:
            raise GraphError("backward requires a recorded graph (root is a leaf)")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p._grad_fn is not None:
                    stack.append((p, False))
                elif id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    order.append(p)

        self.grad = _accumulate(self.grad, np.ones_like(self.values))
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            parent_grads = node._grad_fn(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if parent.requires_grad or parent._grad_fn is not None:
                    parent.grad = _accumulate(parent.grad, pg)
        for node in order:
            if node._grad_fn is not None:
                node._grad_fn = None
                node._parents = ()
                node._freed = True

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _accumulate(buf: np.ndarray | None, g: np.ndarray) -> np.ndarray:
    if buf is None:
        return g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    return buf + g


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def apply_op(values: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap a computed array as a graph node with the given local rule.

    grad_fn receives the output gradient array and must return one gradient
    array (or None) per parent, each matching that parent's shape.
    """
    out = Tensor(values, dtype=values.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


# -- construction ---------------------------------------------------------

def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    return shape


def full(shape, fill, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """Tensor of the given shape filled with a scalar or a flat value sequence."""
    shape = _check_shape(shape)
    n = int(np.prod(shape))
    if np.isscalar(fill):
        arr = np.full(shape, fill, dtype=dtype)
    else:
        seq = np.asarray(fill, dtype=dtype).reshape(-1)
        if seq.size != n:
            raise ShapeError(f"{seq.size} values cannot fill shape {shape} ({n} elements)")
        arr = seq.reshape(shape)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return full(shape, 0.0, dtype, requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return full(shape, 1.0, dtype, requires_grad)


# -- elementwise ops --------------------------------------------------------

def _binary(a: Tensor, b, fwd, grad_a, grad_b) -> Tensor:
    """Elementwise binary op: identical shapes, or one scalar operand.

    grad_a/grad_b take (g, a_values, b_values) and return the parent grad
    *before* scalar-collapse; a scalar-shaped parent receives the sum.
    """
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype)
    b = _as_tensor(b, a.dtype)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"operand shapes {a.shape} and {b.shape} differ and neither is scalar")
    av, bv = a.values, b.values
    out = fwd(av, bv)

    def backward(g):
        ga = gb = None
        if a.requires_grad or a._grad_fn is not None:
            ga = _collapse(grad_a(g, av, bv), a.shape)
        if b.requires_grad or b._grad_fn is not None:
            gb = _collapse(grad_b(g, av, bv), b.shape)
        return ga, gb

    return apply_op(out, (a, b), backward)


def _collapse(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x / y, lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y))


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.values, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return apply_op(out, (a,), lambda g: (g * out,))


def ln(a: Tensor) -> Tensor:
    if not (a.values > 0).all():
        raise NumericError("ln requires strictly positive values")
    av = a.values
    return apply_op(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a: Tensor) -> Tensor:
    if not (a.values >= 0).all():
        raise NumericError("sqrt requires non-negative values")
    out = np.sqrt(a.values)
    return apply_op(out, (a,), lambda g: (g * (0.5 / np.maximum(out, np.finfo(out.dtype).tiny)),))


def maximum(a: Tensor, scalar: float) -> Tensor:
    """Elementwise max with a scalar; ties route gradient to the tensor."""
    s = a.dtype.type(scalar)
    mask = (a.values >= s).astype(a.dtype)
    return apply_op(np.maximum(a.values, s), (a,), lambda g: (g * mask,))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        ga = g @ bv.T if (a.requires_grad or a._grad_fn is not None) else None
        gb = av.T @ g if (b.requires_grad or b._grad_fn is not None) else None
        return ga, gb

    return apply_op(av @ bv, (a, b), backward)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum contraction with automatic gradients.

    Restricted so the backward pass is itself an einsum: no repeated index
    within one operand, and every index of each operand must appear in the
    output or in the other operand.
    """
    try:
        in_spec, out_sub = spec.replace(" ", "").split("->")
        a_sub, b_sub = in_spec.split(",")
    except ValueError as e:
        raise ShapeError(f"bad einsum spec {spec!r}") from e
    for sub in (a_sub, b_sub):
        if len(set(sub)) != len(sub):
            raise ShapeError(f"repeated index within one operand in {spec!r}")
    if not set(out_sub) <= set(a_sub) | set(b_sub):
        raise ShapeError(f"output index not present in inputs in {spec!r}")
    if not set(a_sub) <= set(out_sub) | set(b_sub) or not set(b_sub) <= set(out_sub) | set(a_sub):
        raise ShapeError(f"einsum spec {spec!r} is not reverse-differentiable here")
    av, bv = a.values, b.values
    try:
        out = np.einsum(f"{a_sub},{b_sub}->{out_sub}", av, bv, optimize=True)
    except ValueError as e:
        raise ShapeError(str(e)) from e

    def backward(g):
        ga = gb = None
        if a.requires_grad or a._grad_fn is not None:
            ga = np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, bv, optimize=True)
        if b.requires_grad or b._grad_fn is not None:
            gb = np.einsum(f"{out_sub},{a_sub}->{b_sub}", g, av, optimize=True)
        return ga, gb

    return apply_op(out, (a, b), backward)


# -- shape ops ----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    return apply_op(out, (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.values.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.values, shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    orig = a.shape
    lead = len(shape) - len(orig)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(orig) if s == 1 and shape[i + lead] != 1
    )

    def backward(g):
        if axes:
            g = g.sum(axis=axes, keepdims=False)
        return (g.reshape(orig),)

    return apply_op(np.ascontiguousarray(out), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_op(out, tensors, backward)


def zero_pad(a: Tensor, pad_width: Sequence[tuple[int, int]]) -> Tensor:
    pad_width = [tuple(p) for p in pad_width]
    if len(pad_width) != a.values.ndim:
        raise ShapeError("pad_width must give (lo, hi) per axis")
    out = np.pad(a.values, pad_width, mode="constant")
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return apply_op(out, (a,), lambda g: (g[sl],))


def _getitem(a: Tensor, key) -> Tensor:
    out = a.values[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    orig = a.shape

    def backward(g):
        buf = np.zeros(orig, dtype=g.dtype)
        buf[key] = g
        return (buf,)

    return apply_op(out, (a,), backward)


def take_per_sample(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather from each sample's flattened trailing axes: out[n, *I] = a[n].flat[idx].

    idx may repeat entries; the backward pass scatter-adds.
    """
    n = a.shape[0]
    flat = a.values.reshape(n, -1)
    idx = np.asarray(idx, dtype=np.intp)
    out = flat[:, idx.ravel()].reshape((n,) + idx.shape)
    orig = a.shape

    def backward(g):
        buf = np.zeros_like(flat)
        np.add.at(buf, (np.arange(n)[:, None], idx.ravel()[None, :]), g.reshape(n, -1))
        return (buf.reshape(orig),)

    return apply_op(out, (a,), backward)


# -- reductions ----------------------------------------------------------------

def _norm_axis(axis, ndim: int) -> int:
    axis = int(axis)
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    orig = a.shape
    if axis is None:
        out = a.values.sum()

        def backward(g):
            return (np.broadcast_to(g, orig).astype(g.dtype),)
    else:
        ax = _norm_axis(axis, a.values.ndim)
        out = a.values.sum(axis=ax, keepdims=keepdims)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.ascontiguousarray(np.broadcast_to(g, orig)),)

    return apply_op(np.asarray(out, dtype=a.dtype), (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[_norm_axis(axis, a.values.ndim)]
    s = reduce_sum(a, axis, keepdims)
    return mul(s, 1.0 / n)


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient flows to the first maximal element only."""
    orig = a.shape
    if axis is None:
        out = np.asarray(a.values.max(), dtype=a.dtype)
        flat_idx = int(a.values.argmax())

        def backward(g):
            buf = np.zeros(orig, dtype=g.dtype)
            buf.reshape(-1)[flat_idx] = g
            return (buf,)
    else:
        ax = _norm_axis(axis, a.values.ndim)
        out = a.values.max(axis=ax, keepdims=keepdims)
        arg = np.expand_dims(a.values.argmax(axis=ax), ax)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, ax)
            buf = np.zeros(orig, dtype=g.dtype)
            np.put_along_axis(buf, arg, g, axis=ax)
            return (buf,)

        out = np.asarray(out, dtype=a.dtype)
    return apply_op(out, (a,), backward)


# -- verification ----------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_err: float
    passed: bool
    note: str = ""

    def __bool__(self) -> bool:
        return self.passed


def gradcheck(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-5) -> GradCheckResult:
    """Compare the recorded gradient of scalar f(x) with central differences.

    x participates by reference: f receives x itself and may even ignore its
    argument, as long as the forward it runs reads x (this is how layer
    parameters are checked). x's values, grad, and requires_grad flag are
    restored on exit. Relative error uses max(1, |analytic|, |numeric|) as
    the denominator, so tiny gradients are compared absolutely. Non-finite
    intermediates are reported in the result instead of raising.
    """
    prior_values = x.values.copy()
    prior_grad = x.grad
    prior_req = x.requires_grad
    try:
        x.requires_grad = True
        x.grad = None
        try:
            with np.errstate(all="ignore"):
                out = f(x)
                if out.values.size != 1:
                    raise GraphError("gradcheck target must return a scalar")
                if not np.isfinite(out.values).all():
                    return GradCheckResult(np.inf, False, "non-finite forward value")
                out.backward()
        except NumericError as e:
            return GradCheckResult(np.inf, False, f"numeric error in forward/backward: {e}")
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.values)

        numeric = np.zeros_like(x.values)
        try:
            with no_grad(), np.errstate(all="ignore"):
                it = np.nditer(x.values, flags=["multi_index"])
                while not it.finished:
                    idx = it.multi_index
                    keep = x.values[idx]
                    x.values[idx] = keep + eps
                    hi = f(x).item()
                    x.values[idx] = keep - eps
                    lo = f(x).item()
                    x.values[idx] = keep
                    numeric[idx] = (hi - lo) / (2.0 * eps)
                    it.iternext()
        except NumericError as e:
            return GradCheckResult(np.inf, False, f"numeric error in finite differences: {e}")
        if not np.isfinite(numeric).all() or not np.isfinite(analytic).all():
            return GradCheckResult(np.inf, False, "non-finite gradient")

        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        rel = float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0
        return GradCheckResult(rel, rel < tol)
    finally:
        x.values[...] = prior_values
        x.requires_grad = prior_req
        x.grad = prior_grad
