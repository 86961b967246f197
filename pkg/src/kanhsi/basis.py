"""Uniform B-spline and Gaussian RBF bases for edge activation functions.

Plain-array evaluators (``*_values`` / ``*_derivs``) are the ground truth;
``bspline_basis`` / ``rbf_basis`` wrap them as differentiable tensor ops so
layers can backpropagate through the basis with respect to its input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor, apply_op

__all__ = [
    "SplineGrid",
    "RbfGrid",
    "make_grid",
    "matched_rbf_grid",
    "bspline_values",
    "bspline_derivs",
    "rbf_values",
    "rbf_derivs",
    "bspline_basis",
    "rbf_basis",
]


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knot layout over [low, high] extended by `order` intervals per side.

    grid_size intervals of width (high-low)/grid_size give grid_size+order
    complete basis functions on the range. grid_eps is stored for config
    fidelity only; grid adaptation is out of scope.
    """

    grid_size: int
    order: int = 3
    low: float = -1.0
    high: float = 1.0
    grid_eps: float = 0.02
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.order < 0:
            raise ValueError(f"order must be >= 0, got {self.order}")
        if not self.low < self.high:
            raise ValueError(f"grid range is empty: [{self.low}, {self.high}]")
        h = self.spacing
        idx = np.arange(-self.order, self.grid_size + self.order + 1, dtype=np.float64)
        object.__setattr__(self, "knots", self.low + h * idx)

    @property
    def spacing(self) -> float:
        return (self.high - self.low) / self.grid_size

    @property
    def basis_count(self) -> int:
        return self.grid_size + self.order


@dataclass(frozen=True)
class RbfGrid:
    """Gaussian centers with shared width; B_i(u) = exp(-(u - c_i)^2 / (2 h^2))."""

    centers: np.ndarray
    width: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("centers must be a non-empty 1-d sequence")
        if c.size > 1 and not (np.diff(c) > 0).all():
            raise ValueError("centers must be strictly increasing")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        object.__setattr__(self, "centers", c)

    @property
    def basis_count(self) -> int:
        return self.centers.size


def make_grid(grid_size: int, order: int = 3, grid_range=(-1.0, 1.0)) -> SplineGrid:
    lo, hi = grid_range
    return SplineGrid(grid_size=grid_size, order=order, low=float(lo), high=float(hi))


def rbf_grid_for(grid_size: int, order: int = 3, grid_range=(-1.0, 1.0)) -> RbfGrid:
    """Default RBF surrogate: grid_size+order centers over the extended knot span."""
    g = make_grid(grid_size, order, grid_range)
    n = g.basis_count
    if n == 1:
        centers = np.array([(g.knots[0] + g.knots[-1]) / 2.0])
    else:
        centers = np.linspace(g.knots[0], g.knots[-1], n)
    return RbfGrid(centers=centers, width=g.spacing)


def matched_rbf_grid(grid: SplineGrid) -> RbfGrid:
    """RBF grid whose centers sit at the peaks of the spline basis functions."""
    peaks = grid.knots[: grid.basis_count] + (grid.order + 1) * grid.spacing / 2.0
    return RbfGrid(centers=peaks, width=grid.spacing)


# -- plain-array evaluation ----------------------------------------------------


def _check_finite(u: np.ndarray) -> None:
    if not np.isfinite(u).all():
        raise NumericError("basis input must be finite")


def bspline_values(grid: SplineGrid, u) -> np.ndarray:
    """Cox-de Boor values of the grid_size+order basis functions at u.

    Output shape is u.shape + (basis_count,). Values decay to zero outside
    each function's support; inputs are never clamped.
    """
    u = np.asarray(u)
    _check_finite(u)
    t = grid.knots.astype(u.dtype if u.dtype in (np.float32, np.float64) else np.float64)
    x = u[..., None]
    b = ((x >= t[:-1]) & (x < t[1:])).astype(t.dtype)
    for d in range(1, grid.order + 1):
        left = (x - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)]) * b[..., :-1]
        right = (t[d + 1 :] - x) / (t[d + 1 :] - t[1:-d]) * b[..., 1:]
        b = left + right
    return b


def bspline_derivs(grid: SplineGrid, u) -> np.ndarray:
    """d/du of each basis function.

    On uniform knots the recurrence k/(t_{i+k}-t_i) B_{i,k-1} - k/(t_{i+k+1}-t_{i+1}) B_{i+1,k-1}
    collapses to (B_{i,k-1} - B_{i+1,k-1}) / h.
    """
    u = np.asarray(u)
    _check_finite(u)
    k = grid.order
    if k == 0:
        return np.zeros(u.shape + (grid.basis_count,), dtype=np.float64)
    lower = SplineGrid(grid.grid_size + 2, k - 1, grid.low - grid.spacing, grid.high + grid.spacing)
    # same knot vector, order k-1: basis_count = G+k+1
    bl = bspline_values(lower, u)
    return (bl[..., :-1] - bl[..., 1:]) / grid.spacing


def rbf_values(grid: RbfGrid, u) -> np.ndarray:
    u = np.asarray(u)
    _check_finite(u)
    c = grid.centers.astype(u.dtype if u.dtype in (np.float32, np.float64) else np.float64)
    z = (u[..., None] - c) / grid.width
    return np.exp(-0.5 * z * z)


def rbf_derivs(grid: RbfGrid, u) -> np.ndarray:
    u = np.asarray(u)
    _check_finite(u)
    c = grid.centers.astype(u.dtype if u.dtype in (np.float32, np.float64) else np.float64)
    z = (u[..., None] - c) / grid.width
    return np.exp(-0.5 * z * z) * (-z / grid.width)


# -- differentiable wrappers -----------------------------------------------------


def bspline_basis(grid: SplineGrid, u: Tensor) -> Tensor:
    """Basis values as a tensor op: u [*] -> [*, basis_count]."""
    vals = bspline_values(grid, u.values).astype(u.dtype)
    dvals = bspline_derivs(grid, u.values).astype(u.dtype)
    return apply_op(vals, (u,), lambda g: ((g * dvals).sum(axis=-1),))


def rbf_basis(grid: RbfGrid, u: Tensor) -> Tensor:
    """Gaussian basis values as a tensor op: u [*] -> [*, basis_count]."""
    vals = rbf_values(grid, u.values).astype(u.dtype)
    dvals = rbf_derivs(grid, u.values).astype(u.dtype)
    return apply_op(vals, (u,), lambda g: ((g * dvals).sum(axis=-1),))
