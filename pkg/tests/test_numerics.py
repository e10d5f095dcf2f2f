import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sbnet.errors import DegenerateVectorError, DimensionError, NumericError
from sbnet.losses import Batch, ClassifierHead, ce_loss
from sbnet.numerics import (
    Rng,
    cosine,
    finite_diff_grad,
    gaussian,
    matmul,
    relative_error,
    row_l2_normalize,
    row_l2_normalize_backward,
    row_norms,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self, rng):
        m = gaussian(rng, 3, 5)
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]])), [[3], [7]])

    def test_matches_triple_loop(self, rng):
        a, b = gaussian(rng, 5, 7), gaussian(rng, 7, 3)
        np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite_result(self):
        with pytest.raises(NumericError):
            matmul(np.array([[1e308, 1e308]]), np.array([[1e308], [1e308]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_associative(self, seed):
        r = Rng(seed)
        a, b, c = gaussian(r, 4, 5), gaussian(r, 5, 3), gaussian(r, 3, 6)
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert relative_error(left, right) < 1e-9


class TestCosine:
    @pytest.mark.parametrize("u,v,want", [((1, 0), (0, 1), 0.0), ((1, 1), (2, 2), 1.0), ((1, 0), (-1, 0), -1.0)])
    def test_simple(self, u, v, want):
        assert cosine(u, v) == pytest.approx(want, abs=1e-15)

    def test_zero_vector_raises(self):
        with pytest.raises(DegenerateVectorError):
            cosine((0, 0), (1, 0))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite),
           st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariant(self, u, v, a, b):
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        c = cosine(u, v)
        assert -1.0 <= c <= 1.0
        assert cosine(a * u, b * v) == pytest.approx(c, abs=1e-12)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(row_l2_normalize(np.array([[3.0, 4.0]])), [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        m = np.array([[0.6, 0.8], [1.0, 0.0]])
        np.testing.assert_allclose(row_l2_normalize(m), m, atol=1e-12)

    def test_random_rows_unit(self, rng):
        n = row_l2_normalize(gaussian(rng, 10, 16))
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6)

    def test_degenerate_row_index(self):
        with pytest.raises(DegenerateVectorError, match="row 1"):
            row_norms(np.array([[1.0, 0.0], [0.0, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_idempotent(self, seed):
        n = row_l2_normalize(gaussian(Rng(seed), 5, 7))
        np.testing.assert_allclose(row_l2_normalize(n), n, atol=1e-12)

    def test_backward_matches_finite_differences(self, rng):
        m = gaussian(rng, 4, 5)
        w = gaussian(rng, 4, 5)
        norms = row_norms(m)
        n = m / norms[:, None]
        analytic = row_l2_normalize_backward(w, n, norms)
        numeric = finite_diff_grad(lambda v: float(np.sum(row_l2_normalize(v.reshape(4, 5)) * w)), m.ravel())
        assert relative_error(analytic.ravel(), numeric) < 1e-7


class TestFiniteDiff:
    def test_square(self):
        assert finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-5)[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda x: 4.0, np.ones(5)), np.zeros(5))

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda x: float("nan"), np.ones(2))

    def test_ce_gradient(self, rng):
        x = gaussian(rng, 6, 4)
        head = ClassifierHead(np.eye(4), np.zeros(4))
        y = np.array([0, 1, 2, 3, 0, 1])
        _, g, _ = ce_loss(head, Batch(x, y))
        numeric = finite_diff_grad(lambda v: ce_loss(head, Batch(v.reshape(6, 4), y))[0], x.ravel())
        assert relative_error(g.ravel(), numeric) < 1e-5


class TestRng:
    def test_fresh_state_repeats(self):
        np.testing.assert_array_equal(gaussian(Rng(5), 3, 4), gaussian(Rng(5), 3, 4))

    def test_std_zero(self):
        np.testing.assert_array_equal(gaussian(Rng(1), 3, 3, 2.5, 0.0), np.full((3, 3), 2.5))

    def test_normal_moments(self):
        z = Rng(2024).normal(100_000)
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02

    def test_uniform_range(self):
        u = Rng(3).uniform(10_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.01

    def test_counter_advances(self):
        r = Rng(9)
        a = r.uint64(4)
        b = r.uint64(4)
        assert r.state() == (9, 8)
        np.testing.assert_array_equal(np.concatenate([a, b]), Rng(9).uint64(8))

    def test_spawn_independent_and_stable(self):
        root = Rng(1)
        a1 = root.spawn("a").uint64(3)
        root.uint64(100)
        assert np.array_equal(root.spawn("a").uint64(3), a1)
        assert not np.array_equal(root.spawn("b").uint64(3), a1)

    def test_splitmix64_reference_value(self):
        # first output of the standard splitmix64 stream seeded with 0
        assert int(Rng(0).uint64(1)[0]) == 0xE220A8397B1DCDAF

    def test_permutation_is_permutation(self):
        p = Rng(4).permutation(50)
        assert sorted(p.tolist()) == list(range(50))

    def test_integers_bounds(self):
        x = Rng(8).integers(7, 5000)
        assert x.min() == 0 and x.max() == 6


def test_relative_error_zero_pair():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert math.isclose(relative_error(np.array([1.0]), np.array([2.0])), 0.5)
