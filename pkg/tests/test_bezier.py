from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boxplan.bezier import (BezierCurve, bernstein, bernstein_basis, de_casteljau,
                            difference_matrix, q_factor, q_form, q_matrix)


def gauss_l2(curve: BezierCurve, n: int = 40) -> float:
    x, w = np.polynomial.legendre.leggauss(n)
    t = curve.a + (x + 1) / 2 * curve.duration
    v = curve(t)
    return float(curve.duration / 2 * np.sum(w * np.sum(v * v, axis=1)))


def test_bernstein_partition_of_unity():
    s = np.linspace(0, 1, 11)
    for M in range(10):
        np.testing.assert_allclose(bernstein_basis(M, s).sum(axis=1), 1.0, atol=1e-15)


def test_bernstein_scalar_matches_basis():
    for M in range(6):
        for n in range(M + 1):
            assert bernstein(M, n, 2.0, 4.0, 3.0) == pytest.approx(bernstein_basis(M, 0.5)[0, n])
    with pytest.raises(ValueError):
        bernstein(3, 4, 0, 1, 0.5)
    with pytest.raises(ValueError):
        bernstein(3, 1, 1, 1, 0.5)


def test_endpoint_interpolation_exact(rng):
    for _ in range(50):
        M = int(rng.integers(0, 10))
        P = rng.normal(size=(M + 1, 3))
        a = rng.uniform(-2, 2)
        c = BezierCurve(P, a, a + rng.uniform(0.1, 3))
        assert np.array_equal(c(c.a), P[0])
        assert np.array_equal(c(c.b), P[-1])


def test_matches_de_casteljau(rng):
    for _ in range(50):
        M = int(rng.integers(1, 10))
        P = rng.normal(size=(M + 1, 2))
        c = BezierCurve(P, 0, 1)
        for s in rng.uniform(0, 1, 5):
            np.testing.assert_allclose(c(s), de_casteljau(P, s), atol=1e-12)


def test_derivative_vs_finite_differences(rng):
    for _ in range(30):
        M = int(rng.integers(1, 10))
        P = rng.uniform(-1, 1, (M + 1, 2))
        c = BezierCurve(P, 0.5, 2.0)
        dc = c.derivative()
        h = 1e-6
        for t in rng.uniform(0.6, 1.9, 5):
            fd = (c(t + h) - c(t - h)) / (2 * h)
            np.testing.assert_allclose(dc(t), fd, atol=1e-6)


def test_derivative_of_constant_is_zero_and_degree_zero_raises():
    c = BezierCurve([[1, 2]] * 4)
    np.testing.assert_array_equal(c.derivative().points, 0.0)
    with pytest.raises(ValueError):
        BezierCurve([[1, 2]]).derivative()


def test_squared_l2_vs_quadrature(rng):
    for _ in range(50):
        M = int(rng.integers(0, 10))
        c = BezierCurve(rng.normal(size=(M + 1, 2)), 0.0, rng.uniform(0.2, 4))
        ref = gauss_l2(c)
        assert abs(c.squared_l2() - ref) <= 1e-10 * max(ref, 1e-300)


def test_q_matrix_entries_and_factor():
    for M in range(12):
        Q = q_matrix(M)
        ref = np.array([[comb(M, m) * comb(M, n) / comb(2 * M, m + n) / (2 * M + 1)
                         for n in range(M + 1)] for m in range(M + 1)])
        np.testing.assert_allclose(Q, ref, rtol=1e-15)
        np.testing.assert_allclose(Q, Q.T)
        R = q_factor(M)
        np.testing.assert_allclose(R.T @ R, Q, atol=1e-13)
        assert np.allclose(R, np.triu(R))
    # integral of a single basis function: int b_n = 1/(M+1), so Q rows sum to it
    np.testing.assert_allclose(q_matrix(5).sum(axis=1), 1 / 6)
    with pytest.raises(ValueError):
        q_matrix(5)[0, 0] = 1.0


def test_q_form_scalar_and_vector():
    # constant curve of value 2 on [0, 1] has L2^2 = 4
    assert q_form([2, 2, 2]) == pytest.approx(4.0)
    assert q_form([[3, 4]] * 5) == pytest.approx(25.0)


def test_domain_checks():
    c = BezierCurve([[0.0], [1.0]], 1.0, 2.0)
    with pytest.raises(ValueError):
        c(0.5)
    with pytest.raises(ValueError):
        BezierCurve([[0.0]], 1.0, 1.0)


def test_control_bounds_contain_curve(rng):
    for _ in range(20):
        P = rng.normal(size=(6, 2))
        c = BezierCurve(P)
        lo, hi = c.control_bounds()
        v = c(np.linspace(0, 1, 200))
        assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)


def test_difference_matrix():
    P = np.arange(12.0).reshape(4, 3) ** 2
    np.testing.assert_array_equal(difference_matrix(3) @ P, np.diff(P, axis=0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.floats(0.05, 5), st.integers(0, 2**32 - 1))
def test_hypothesis_derivative_integral(M, T, seed):
    # integral of the derivative equals the increment
    P = np.random.default_rng(seed).normal(size=(M + 1, 2))
    c = BezierCurve(P, 0.0, T)
    dc = c.derivative()
    x, w = np.polynomial.legendre.leggauss(M + 2)
    integral = T / 2 * (w @ dc((x + 1) / 2 * T))
    np.testing.assert_allclose(integral, P[-1] - P[0], atol=1e-10)
