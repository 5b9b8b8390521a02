import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frevl.errors import (
    DegenerateInputError,
    InvalidProbabilityError,
    ShapeError,
    ZeroNormError,
)
from frevl.kernel import (
    RngState,
    dropout_apply,
    finite_difference_gradient,
    fnv1a64,
    gelu,
    gelu_grad,
    l2_normalize,
    layer_norm,
    matmul,
    softmax_rows,
)

finite_floats = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False,
                          allow_infinity=False, width=32)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_basis_selection(self):
        out = matmul(np.array([[1.0, 0.0]]), np.array([[0.0], [5.0]]))
        assert np.array_equal(out, np.array([[0.0]]))

    def test_hand_arithmetic(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]),
                     np.array([[5.0], [6.0]]))
        assert np.array_equal(out, np.array([[17.0], [39.0]]))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
           st.integers(1, 4), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_associativity(self, m, k, n, q, seed):
        gen = np.random.default_rng(seed)
        a = gen.standard_normal((m, k))
        b = gen.standard_normal((k, n))
        c = gen.standard_normal((n, q))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        np.testing.assert_allclose(left, right, rtol=1e-4, atol=1e-12)


class TestGelu:
    def test_zero(self):
        assert gelu(np.array([0.0]))[0] == 0.0

    def test_asymptote(self):
        assert abs(gelu(np.array([10.0]))[0] - 10.0) < 1e-6

    def test_at_one(self):
        # 1 * Phi(1) via the erf definition
        expected = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert abs(gelu(np.array([1.0]))[0] - expected) < 1e-12
        assert abs(gelu(np.array([1.0]))[0] - 0.841345) < 1e-5

    def test_grad_matches_finite_differences(self):
        x = np.linspace(-3, 3, 13)
        fd = np.array([
            finite_difference_gradient(lambda z: float(gelu(z)[0]),
                                       np.array([xi]), 1e-5)[0]
            for xi in x])
        np.testing.assert_allclose(gelu_grad(x), fd, atol=1e-8)


class TestLayerNorm:
    def test_constant_row_normalizes_to_zero(self):
        out = layer_norm(np.array([[1.0, 1.0, 1.0]]), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_already_standardized(self):
        out = layer_norm(np.array([[-1.0, 1.0]]), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-4)

    def test_bias_pass_through(self):
        out = layer_norm(np.array([[0.0, 0.0]]), np.ones(2),
                         np.full(2, 3.0))
        np.testing.assert_allclose(out, [[3.0, 3.0]], atol=1e-12)

    def test_degenerate_width(self):
        with pytest.raises(DegenerateInputError):
            layer_norm(np.array([[1.0]]), np.ones(1), np.zeros(1))

    @given(arrays(np.float64, (3, 8),
                  elements=st.floats(-100, 100, allow_nan=False)))
    @settings(max_examples=50, deadline=None)
    def test_mean_and_variance(self, x):
        out = layer_norm(x, np.ones(8), np.zeros(8))
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
        # output variance is rowvar / (rowvar + eps), approaching 1 as the
        # row variance dominates eps
        rowvar = x.var(axis=-1)
        for i in range(x.shape[0]):
            if rowvar[i] > 1e-2:
                expected = rowvar[i] / (rowvar[i] + 1e-5)
                assert abs(out[i].var() - expected) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])),
                                   [[0.5, 0.5]])

    def test_large_logits_stable(self):
        np.testing.assert_allclose(
            softmax_rows(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])

    def test_closed_form(self):
        out = softmax_rows(np.array([[0.0, math.log(3.0)]]))
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-12)

    @given(arrays(np.float64, (4, 6), elements=finite_floats))
    @settings(max_examples=100, deadline=None)
    def test_rows_are_probability_vectors(self, x):
        out = softmax_rows(x)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


class TestL2Normalize:
    def test_already_unit(self):
        np.testing.assert_allclose(l2_normalize(np.array([0.0, 1.0, 0.0])),
                                   [0.0, 1.0, 0.0])

    def test_pythagoras(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])),
                                   [0.6, 0.8])

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroNormError):
            l2_normalize(np.array([0.0, 0.0]))

    @given(arrays(np.float64, (5,), elements=st.floats(-100, 100)))
    @settings(max_examples=100, deadline=None)
    def test_idempotent(self, x):
        if np.linalg.norm(x) < 1e-6:
            return
        once = l2_normalize(x)
        np.testing.assert_allclose(l2_normalize(once), once, atol=1e-6)


class TestDropout:
    def test_eval_identity(self):
        x = np.arange(6.0)
        out = dropout_apply(x, 0.5, RngState(0), training=False)
        assert np.array_equal(out, x)

    def test_p_zero_identity(self):
        x = np.arange(6.0)
        out = dropout_apply(x, 0.0, RngState(0), training=True)
        assert np.array_equal(out, x)

    def test_invalid_probability(self):
        with pytest.raises(InvalidProbabilityError):
            dropout_apply(np.ones(3), 1.0, RngState(0), training=True)

    def test_unbiased_at_scale(self):
        n = 100_000
        out = dropout_apply(np.ones(n), 0.1, RngState(42), training=True)
        # 3 sigma of the mean of inverted-dropout ones
        sigma = math.sqrt(0.1 / 0.9 / n)
        assert abs(out.mean() - 1.0) < 3 * sigma

    def test_identical_state_identical_mask(self):
        x = np.ones(1000)
        a = dropout_apply(x, 0.3, RngState(7, 5), training=True)
        b = dropout_apply(x, 0.3, RngState(7, 5), training=True)
        assert np.array_equal(a, b)

    def test_different_counter_different_mask(self):
        x = np.ones(1000)
        a = dropout_apply(x, 0.3, RngState(7, 5), training=True)
        b = dropout_apply(x, 0.3, RngState(7, 6), training=True)
        assert not np.array_equal(a, b)


class TestFiniteDifferences:
    def test_quadratic(self):
        grad = finite_difference_gradient(
            lambda x: float(np.sum(x * x)), np.array([1.0, 2.0]))
        np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        grad = finite_difference_gradient(lambda x: 3.0, np.array([1.0, 2.0]))
        np.testing.assert_allclose(grad, 0.0)

    def test_linear(self):
        grad = finite_difference_gradient(lambda x: float(x[0]),
                                          np.array([5.0]))
        np.testing.assert_allclose(grad, [1.0], atol=1e-10)


def test_fnv1a64_known_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_rng_state_reproducible():
    a = RngState(123, 9).generator().random(16)
    b = RngState(123, 9).generator().random(16)
    assert np.array_equal(a, b)
