"""Tensor core: construction, op semantics, gradients, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanhsi.tensor import (
    GraphError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    apply_op,
    broadcast_to,
    concat,
    div,
    einsum,
    exp,
    full,
    gradcheck,
    ln,
    matmul,
    maximum,
    mul,
    neg,
    no_grad,
    ones,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    sqrt,
    sub,
    take_per_sample,
    transpose,
    zero_pad,
    zeros,
)


class TestConstruction:
    def test_zero_fill(self):
        t = full((2, 3), 0.0)
        assert t.shape == (2, 3)
        assert (t.values == 0).all()

    def test_scalar_like(self):
        t = full((1,), [7.0])
        assert t.values.tolist() == [7.0]

    def test_value_length_mismatch(self):
        with pytest.raises(ShapeError):
            full((2, 2), [1.0, 2.0, 3.0])

    def test_nonpositive_extent(self):
        with pytest.raises(ShapeError):
            zeros((0, 3))

    def test_default_dtype_and_flags(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32
        assert not t.requires_grad
        assert t.grad is None


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        x = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        np.testing.assert_array_equal(matmul(eye, x).values, x.values)

    def test_hand_product(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Tensor(np.array([[1.0], [1.0]]))
        np.testing.assert_array_equal(matmul(a, b).values, [[3.0], [7.0]])

    def test_inner_extent_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        b = Tensor(rng.normal(size=(3, 2)), dtype=np.float64)
        a = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
        assert gradcheck(lambda t: matmul(t, b).sum(), a, tol=1e-6).passed
        assert gradcheck(lambda _: matmul(a, b).sum(), b, tol=1e-6).passed


class TestElementwise:
    def test_add_zero_identity(self):
        x = Tensor(np.array([1.5, -2.0]))
        np.testing.assert_array_equal(add(x, 0.0).values, x.values)

    def test_exp_zero(self):
        np.testing.assert_allclose(exp(zeros((3,))).values, 1.0)

    def test_mul_gradcheck_random(self):
        rng = np.random.default_rng(11)
        a = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
        b = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
        assert gradcheck(lambda t: mul(t, b).sum(), a, tol=1e-6).passed

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_scalar_operand_broadcast(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
        s = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
        out = mul(x, s)
        np.testing.assert_array_equal(out.values, x.values * 2)
        out.sum().backward()
        assert s.grad.item() == pytest.approx(x.values.sum())

    def test_ln_domain_error(self):
        with pytest.raises(NumericError):
            ln(Tensor(np.array([1.0, -1.0])))

    def test_sqrt_domain_error(self):
        with pytest.raises(NumericError):
            sqrt(Tensor(np.array([-1.0])))

    def test_div_neg_maximum(self):
        x = Tensor(np.array([-2.0, 3.0]), dtype=np.float64)
        np.testing.assert_allclose(div(x, 2.0).values, [-1.0, 1.5])
        np.testing.assert_allclose(neg(x).values, [2.0, -3.0])
        np.testing.assert_allclose(maximum(x, 0.0).values, [0.0, 3.0])


class TestReduce:
    def test_sum_ones(self):
        assert reduce_sum(ones((3, 3))).item() == 9.0

    def test_mean_axis0(self):
        t = Tensor(np.array([[1.0, 3.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(reduce_mean(t, axis=0).values, [2.0, 4.0])

    def test_bit_identical_repeats(self):
        rng = np.random.default_rng(3)
        t = Tensor(rng.normal(size=(17, 13)))
        first = reduce_sum(t).values.copy()
        for _ in range(5):
            assert reduce_sum(t).values == first

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            reduce_sum(ones((2, 2)), axis=2)

    def test_max_axis_first_argmax(self):
        t = Tensor(np.array([[1.0, 5.0, 5.0]]), requires_grad=True, dtype=np.float64)
        out = reduce_max(t, axis=1)
        assert out.values.tolist() == [5.0]
        out.sum().backward()
        np.testing.assert_array_equal(t.grad, [[0.0, 1.0, 0.0]])


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
        (x * x).sum().backward()
        assert x.grad.item() == pytest.approx(6.0)

    def test_sum_exp_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
        reduce_sum(exp(x)).backward()
        np.testing.assert_allclose(x.grad, 1.0)

    def test_random_composite_vs_fd(self):
        rng = np.random.default_rng(21)
        for seed in range(5):
            x = Tensor(np.random.default_rng(seed).uniform(0.2, 2.0, (3, 4)), dtype=np.float64)
            r = gradcheck(lambda t: reduce_sum(mul(exp(t), ln(add(t, 1.0)))), x, tol=1e-5)
            assert r.passed, r

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(GraphError):
            (x * x).backward()

    def test_leaf_root_rejected(self):
        with pytest.raises(GraphError):
            Tensor(np.array([1.0]), requires_grad=True).backward()

    def test_double_backward_rejected(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = (x * x).sum()
        y.backward()
        with pytest.raises(GraphError):
            y.backward()

    def test_accumulation_and_zero_grad(self):
        x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
        (x * x).sum().backward()
        (x * x).sum().backward()
        assert x.grad.item() == pytest.approx(8.0)  # 4 + 4
        x.zero_grad()
        assert x.grad.item() == 0.0

    def test_no_grad_suppresses_recording(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert y._grad_fn is None and not y.requires_grad


class TestShapeOps:
    def test_reshape_transpose_roundtrip(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3, 4)), dtype=np.float64)
        assert gradcheck(lambda t: reduce_sum(mul(transpose(reshape(t, (6, 4))), 2.0)), x, tol=1e-6).passed

    def test_broadcast_to_grad_sums(self):
        x = Tensor(np.array([[1.0], [2.0]]), requires_grad=True, dtype=np.float64)
        broadcast_to(x, (2, 3)).sum().backward()
        np.testing.assert_array_equal(x.grad, [[3.0], [3.0]])

    def test_concat_split_grad(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (2, 5)
        mul(out, 2.0).sum().backward()
        np.testing.assert_array_equal(a.grad, 2 * np.ones((2, 2)))
        np.testing.assert_array_equal(b.grad, 2 * np.ones((2, 3)))

    def test_zero_pad_and_getitem(self):
        x = Tensor(np.arange(4.0).reshape(1, 4), requires_grad=True, dtype=np.float64)
        padded = zero_pad(x, [(0, 0), (1, 1)])
        assert padded.shape == (1, 6)
        assert padded.values[0, 0] == 0.0
        sliced = padded[:, 1:5]
        np.testing.assert_array_equal(sliced.values, x.values)
        sliced.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((1, 4)))

    def test_take_per_sample_scatter_adds(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True, dtype=np.float64)
        idx = np.array([0, 0, 2])
        out = take_per_sample(x, idx)
        np.testing.assert_array_equal(out.values, [[0, 0, 2], [3, 3, 5]])
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [[2, 0, 1], [2, 0, 1]])

    def test_einsum_matches_numpy_and_grads(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(2, 3, 4)), dtype=np.float64)
        b = Tensor(rng.normal(size=(5, 3, 4)), dtype=np.float64)
        out = einsum("bit,oit->bo", a, b)
        np.testing.assert_allclose(out.values, np.einsum("bit,oit->bo", a.values, b.values))
        assert gradcheck(lambda t: einsum("bit,oit->bo", t, b).sum(), a, tol=1e-6).passed
        assert gradcheck(lambda _: einsum("bit,oit->bo", a, b).sum(), b, tol=1e-6).passed

    def test_einsum_rejects_undifferentiable_spec(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.ones((3, 2)))
        with pytest.raises(ShapeError):
            einsum("ii,ij->j", a, b)


@st.composite
def _shapes(draw):
    rank = draw(st.integers(1, 3))
    return tuple(draw(st.integers(1, 5)) for _ in range(rank))


class TestShapeAlgebraProperties:
    @given(_shapes())
    @settings(max_examples=40, deadline=None)
    def test_elementwise_preserves_shape(self, shape):
        x = Tensor(np.ones(shape))
        for op in (lambda t: add(t, t), lambda t: mul(t, 2.0), neg, exp,
                   lambda t: maximum(t, 0.5)):
            assert op(x).shape == shape

    @given(_shapes(), st.integers(0, 2))
    @settings(max_examples=40, deadline=None)
    def test_reduce_shapes(self, shape, axis):
        x = Tensor(np.ones(shape))
        if axis >= len(shape):
            with pytest.raises(ShapeError):
                reduce_sum(x, axis=axis)
            return
        expect = tuple(s for i, s in enumerate(shape) if i != axis)
        assert reduce_sum(x, axis=axis).shape == expect
        keep = tuple(1 if i == axis else s for i, s in enumerate(shape))
        assert reduce_max(x, axis=axis, keepdims=True).shape == keep

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=30, deadline=None)
    def test_matmul_shape(self, m, k, n):
        out = matmul(Tensor(np.ones((m, k))), Tensor(np.ones((k, n))))
        assert out.shape == (m, n)


class TestDeterminism:
    def test_outputs_and_grads_bit_identical(self):
        def run():
            x = Tensor(np.random.default_rng(7).normal(size=(6, 6)), requires_grad=True, dtype=np.float64)
            y = reduce_sum(mul(exp(mul(x, 0.3)), x))
            y.backward()
            return y.values.copy(), x.grad.copy()
        v1, g1 = run()
        v2, g2 = run()
        assert (v1 == v2).all() and (g1 == g2).all()


class TestGradcheck:
    def test_linear_nearly_exact(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), dtype=np.float64)
        r = gradcheck(lambda t: reduce_sum(mul(t, 4.0)), x, tol=1e-9)
        assert r.passed and r.max_rel_err < 1e-9

    def test_wrong_gradient_rule_fails(self):
        def bad_square(t):
            # deliberately wrong local rule: d(x^2)/dx claimed to be x
            return apply_op(t.values * t.values, (t,), lambda g: (g * t.values,))
        x = Tensor(np.array([1.5, -0.5]), dtype=np.float64)
        r = gradcheck(lambda t: reduce_sum(bad_square(t)), x, tol=1e-5)
        assert not r.passed

    def test_nonfinite_reported_not_raised(self):
        x = Tensor(np.array([1000.0]), dtype=np.float64)
        r = gradcheck(lambda t: reduce_sum(exp(mul(t, t))), x)
        assert not r.passed
        assert "non-finite" in r.note

    def test_restores_tensor_state(self):
        x = Tensor(np.array([2.0]), dtype=np.float64)
        before = x.values.copy()
        gradcheck(lambda t: (t * t).sum(), x)
        assert (x.values == before).all()
        assert not x.requires_grad and x.grad is None
