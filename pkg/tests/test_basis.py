"""Spline and RBF bases: construction, Cox-de Boor oracle, identities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanhsi.basis import (
    RbfGrid,
    SplineGrid,
    bspline_basis,
    bspline_derivs,
    bspline_values,
    make_grid,
    matched_rbf_grid,
    rbf_basis,
    rbf_derivs,
    rbf_grid_for,
    rbf_values,
)
from kanhsi.tensor import NumericError, Tensor, gradcheck, reduce_sum


def cox_de_boor(u, i, k, knots):
    """Straight-line recursive oracle for one basis function value."""
    if k == 0:
        return 1.0 if knots[i] <= u < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + k] != knots[i]:
        left = (u - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(u, i, k - 1, knots)
    right = 0.0
    if knots[i + k + 1] != knots[i + 1]:
        right = (knots[i + k + 1] - u) / (knots[i + k + 1] - knots[i + 1]) * cox_de_boor(u, i + 1, k - 1, knots)
    return left + right


class TestGridConstruction:
    def test_g2_k3_unit_range(self):
        g = make_grid(2, 3, (-1.0, 1.0))
        np.testing.assert_allclose(g.knots, np.arange(-4.0, 5.0))
        assert g.basis_count == 5
        assert g.spacing == 1.0

    def test_degenerate_g1_k0(self):
        g = make_grid(1, 0, (0.0, 2.0))
        np.testing.assert_allclose(g.knots, [0.0, 2.0])
        assert g.basis_count == 1
        # indicator of [lo, hi)
        np.testing.assert_array_equal(bspline_values(g, np.array([0.0, 1.0, 2.0])).ravel(),
                                      [1.0, 1.0, 0.0])

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            make_grid(0, 3)
        with pytest.raises(ValueError):
            make_grid(2, -1)
        with pytest.raises(ValueError):
            make_grid(2, 3, (1.0, -1.0))

    def test_knots_uniform_and_increasing(self):
        g = make_grid(5, 3, (-2.0, 3.0))
        d = np.diff(g.knots)
        assert (d > 0).all()
        np.testing.assert_allclose(d, g.spacing)

    def test_grid_eps_stored(self):
        assert make_grid(2, 3).grid_eps == 0.02


class TestBsplineValues:
    @pytest.mark.parametrize("grid_size", [2, 5, 8])
    def test_partition_of_unity(self, grid_size):
        g = make_grid(grid_size, 3)
        u = np.linspace(-1.0, 1.0, 1000)
        s = bspline_values(g, u).sum(axis=-1)
        assert np.abs(s - 1.0).max() < 1e-6

    def test_matches_recursive_oracle_at_knots_and_random(self):
        g = make_grid(2, 3)
        pts = list(g.knots[2:-2]) + list(np.random.default_rng(0).uniform(-3.5, 3.5, 25))
        for u in pts:
            mine = bspline_values(g, np.float64(u))
            oracle = [cox_de_boor(float(u), i, 3, g.knots) for i in range(g.basis_count)]
            np.testing.assert_allclose(mine, oracle, atol=1e-12)

    def test_order_zero_one_hot(self):
        g = make_grid(4, 0, (0.0, 4.0))
        for j in range(4):
            vals = bspline_values(g, np.float64(j + 0.5))
            expect = np.zeros(4)
            expect[j] = 1.0
            np.testing.assert_array_equal(vals, expect)

    def test_local_support_exact_zero(self):
        g = make_grid(3, 2)
        u = np.linspace(-3.0, 3.0, 400)
        vals = bspline_values(g, u)
        for i in range(g.basis_count):
            lo, hi = g.knots[i], g.knots[i + g.order + 1]
            outside = (u < lo) | (u > hi)
            assert (vals[outside, i] == 0.0).all()

    def test_non_negative(self):
        g = make_grid(4, 3)
        vals = bspline_values(g, np.linspace(-5, 5, 500))
        assert (vals >= 0).all()

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            bspline_values(make_grid(2, 3), np.array([np.nan]))

    def test_derivative_matches_finite_differences(self):
        g = make_grid(3, 3)
        rng = np.random.default_rng(4)
        u = rng.uniform(-1.0, 1.0, 50)
        eps = 1e-6
        num = (bspline_values(g, u + eps) - bspline_values(g, u - eps)) / (2 * eps)
        ana = bspline_derivs(g, u)
        denom = np.maximum(1.0, np.abs(num))
        assert (np.abs(ana - num) / denom).max() < 1e-4


class TestRbf:
    def test_center_value_one(self):
        g = rbf_grid_for(2, 3)
        vals = rbf_values(g, g.centers.copy())
        np.testing.assert_allclose(np.diag(vals), 1.0)

    def test_one_width_from_center(self):
        g = rbf_grid_for(2, 3)
        v = rbf_values(g, np.float64(g.centers[1] + g.width))
        assert abs(v[1] - math.exp(-0.5)) < 1e-9

    @given(st.floats(-2.0, 2.0))
    @settings(max_examples=30, deadline=None)
    def test_even_symmetry(self, d):
        g = rbf_grid_for(3, 3)
        left = rbf_values(g, g.centers - d)
        right = rbf_values(g, g.centers + d)
        np.testing.assert_allclose(np.diag(left), np.diag(right), atol=1e-12)

    def test_values_in_unit_interval(self):
        g = rbf_grid_for(4, 3)
        vals = rbf_values(g, np.linspace(-6, 6, 300))
        assert (vals > 0).all() and (vals <= 1.0).all()

    def test_center_count_matches_spline_basis(self):
        for grid_size, k in [(2, 3), (5, 3), (8, 2)]:
            assert rbf_grid_for(grid_size, k).basis_count == grid_size + k

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            RbfGrid(centers=np.array([1.0, 0.5]), width=1.0)
        with pytest.raises(ValueError):
            RbfGrid(centers=np.array([0.0, 1.0]), width=0.0)

    def test_derivative_matches_finite_differences(self):
        g = rbf_grid_for(3, 3)
        u = np.random.default_rng(8).uniform(-2, 2, 40)
        eps = 1e-6
        num = (rbf_values(g, u + eps) - rbf_values(g, u - eps)) / (2 * eps)
        assert np.abs(rbf_derivs(g, u) - num).max() < 1e-4


class TestRbfSplineAgreement:
    @pytest.mark.parametrize("grid_size", [2, 5, 8])
    def test_span_fit_within_008(self, grid_size):
        """Least-squares fit of each cubic spline basis function onto the
        peak-matched RBF span agrees pointwise within 0.08 over the range."""
        g = make_grid(grid_size, 3)
        r = matched_rbf_grid(g)
        u = np.linspace(g.low, g.high, 400)
        s = bspline_values(g, u)
        rb = rbf_values(r, u)
        coef, *_ = np.linalg.lstsq(rb, s, rcond=None)
        assert np.abs(rb @ coef - s).max() < 0.08


class TestDifferentiableWrappers:
    def test_bspline_gradcheck(self):
        g = make_grid(2, 3)
        for seed in range(3):
            u = Tensor(np.random.default_rng(seed).uniform(-1, 1, 6), dtype=np.float64)
            w = np.random.default_rng(seed + 100).normal(size=g.basis_count)
            r = gradcheck(
                lambda t: reduce_sum(bspline_basis(g, t) * Tensor(np.broadcast_to(w, (6, 5)).copy(), dtype=np.float64)),
                u, tol=1e-6)
            assert r.passed, r

    def test_rbf_gradcheck(self):
        g = rbf_grid_for(2, 3)
        u = Tensor(np.random.default_rng(2).uniform(-1, 1, 5), dtype=np.float64)
        r = gradcheck(lambda t: reduce_sum(rbf_basis(g, t)), u, tol=1e-6)
        assert r.passed, r

    def test_output_shape_appends_basis_axis(self):
        g = make_grid(2, 3)
        u = Tensor(np.zeros((4, 3)))
        assert bspline_basis(g, u).shape == (4, 3, 5)
