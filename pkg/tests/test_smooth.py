import numpy as np
import pytest
from math import factorial

from boxplan.geometry import BoxSet
from boxplan.planner import SafeSet, plan
from boxplan.polygonal import PolygonalCurve, optimal_curve
from boxplan.scenes import connected_grid, grid_query
from boxplan.smooth import (PiecewiseBezierPath, Query, SmoothParams, duration_floor,
                            init_traversal_times, projection, smooth_phase, trust_update)

from conftest import check_trace, random_boxes, sample_safety


def monomial_oracle(p0, p1, T, alpha, init, term, M):
    """Single-piece optimum over degree-M polynomials in the monomial basis:
    cost by Gauss-Legendre quadrature, equality-constrained KKT solve."""
    d = len(p0)
    x, w = np.polynomial.legendre.leggauss(M + 2)
    t = (x + 1) / 2 * T
    w = w * T / 2

    def drow(i, s):
        # row of d^i/dt^i t^m at time s
        return np.array([factorial(m) / factorial(m - i) * s ** (m - i) if m >= i else 0.0
                         for m in range(M + 1)])

    H = np.zeros((M + 1, M + 1))
    for i, a in enumerate(alpha, start=1):
        B = np.array([drow(i, s) for s in t])
        H += 2 * a * B.T @ (w[:, None] * B)
    rows = [drow(0, 0.0), drow(0, T)]
    rows += [drow(i, 0.0) for i in init] + [drow(i, T) for i in term]
    A = np.array(rows)
    cost = 0.0
    for c in range(d):
        rhs = [p0[c], p1[c]] + [v[c] for v in init.values()] + [v[c] for v in term.values()]
        K = np.block([[H, A.T], [A, np.zeros((len(A), len(A)))]])
        z = np.linalg.solve(K, np.concatenate([np.zeros(M + 1), rhs]))[:M + 1]
        cost += 0.5 * z @ H @ z
    return cost


def gauss_cost(path: PiecewiseBezierPath, alpha, n=30):
    x, w = np.polynomial.legendre.leggauss(n)
    total = 0.0
    t0 = 0.0
    for Tj in path.durations:
        t = t0 + (x + 1) / 2 * Tj
        t = np.clip(t, 0, path.T)
        for i, a in enumerate(alpha, start=1):
            v = path(t, i)
            total += a * Tj / 2 * np.sum(w * np.sum(v * v, axis=1))
        t0 += Tj
    return total


def test_straight_line_velocity_cost():
    S = BoxSet([[0, 0]], [[10, 10]])
    p, q = np.array([1.0, 2.0]), np.array([7.0, 5.0])
    for T in (0.5, 1.0, 3.0):
        query = Query(p, q, T, (1.0,))
        path, J = projection([0], [T], query, S)
        assert J == pytest.approx(np.sum((q - p) ** 2) / T, rel=1e-6)
        # constant speed along the chord
        np.testing.assert_allclose(path(T / 3), p + (q - p) / 3, atol=1e-6)


def test_projection_matches_monomial_oracle(rng):
    S = BoxSet([[-100, -100]], [[100, 100]])
    for _ in range(5):
        p, q = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        alpha = tuple(rng.uniform(0.1, 1, 3))
        init = {1: rng.normal(size=2), 2: rng.normal(size=2)}
        term = {1: rng.normal(size=2)}
        T = rng.uniform(0.5, 2)
        query = Query(p, q, T, alpha, dict(init), dict(term))
        _, J = projection([0], [T], query, S)
        ref = monomial_oracle(p, q, T, alpha, init, term, 7)
        assert J == pytest.approx(ref, rel=1e-5)


def test_cost_matches_quadrature():
    S, _ = connected_grid(5, 1)
    p, q, T, _ = grid_query(5)
    r = plan(SafeSet.from_boxset(S), p, q, T, (0.3, 0.2, 1.0))
    assert r.cost == pytest.approx(gauss_cost(r.path, (0.3, 0.2, 1.0)), rel=1e-8)


def test_mirror_symmetric_u_turn():
    # U-shaped corridor symmetric about x = 1.5: first and last times agree
    S = BoxSet([[0, 0], [0, 2], [2, 0]], [[1, 3], [3, 3], [3, 3]])
    p, q = np.array([0.5, 0.5]), np.array([2.5, 0.5])
    curve = optimal_curve([0, 1, 2], p, q, S)
    query = Query(p, q, 1.0, (0.0, 0.0, 1.0))
    res = smooth_phase(curve, query, S)
    t = res.path.durations
    assert t[0] == pytest.approx(t[-1], rel=1e-3)
    np.testing.assert_allclose(res.path(0.5)[0], 1.5, atol=1e-3)


def test_trust_update_arithmetic():
    assert trust_update(1.0, [1, 1], [1.5, 0.5], 3.0) == pytest.approx(1 / 3)
    assert trust_update(0.5, [1, 1], [1.5, 0.5], 3.0) == pytest.approx(0.5 / 3)
    # no movement pins the region
    assert trust_update(1.0, [0.5, 0.5], [0.5, 0.5], 3.0) == 0.0


def test_init_times_and_floor():
    curve = PolygonalCurve(np.array([[0, 0], [1, 0], [1, 3], [2, 3.0]]), [0, 1, 2])
    t = init_traversal_times(curve, 2.0)
    np.testing.assert_allclose(t, [0.4, 1.2, 0.4])
    t = init_traversal_times(curve, 2.0, boundary_derivs=True)
    np.testing.assert_allclose(t, np.array([0.4, 0.6, 0.4]) / 1.4 * 2.0)
    assert t.sum() == pytest.approx(2.0)
    f = duration_floor(1.0, 10, 7, 3, 5.0)
    assert 1e-6 <= f <= 0.05
    t = init_traversal_times(curve, 2.0, floor=0.5)
    assert t.min() >= 0.5 - 1e-15 and t.sum() == pytest.approx(2.0)


def test_query_validation():
    with pytest.raises(ValueError):
        Query([0, 0], [1, 1], 1.0, (0.0, 0.0))
    with pytest.raises(ValueError):
        Query([0, 0], [1, 1], 0.0, (1.0,))
    with pytest.raises(ValueError):
        Query([0, 0], [1, 1], 1.0, (1.0,), {2: [0, 0]})
    with pytest.raises(ValueError):
        Query([0, 0], [1, 1, 1], 1.0, (1.0,))
    with pytest.raises(ValueError):
        SmoothParams(omega=1.0)


def test_smooth_phase_properties_on_grids():
    params = SmoothParams()
    for seed in range(4):
        S, _ = connected_grid(5, seed)
        p, q, T, alpha = grid_query(5)
        r = plan(SafeSet.from_boxset(S), p, q, T, alpha)
        assert r.feasible
        check_trace(r.smooth, params)
        assert r.path.violations(S, p, q) == []
        assert sample_safety(r.path, S)


def test_boundary_derivatives_respected(rng):
    S, _ = connected_grid(5, 3)
    p, q, T, alpha = grid_query(5)
    v0, a1 = np.array([0.5, 0.0]), np.array([0.0, 0.0])
    r = plan(SafeSet.from_boxset(S), p, q, T, alpha, {1: v0}, {1: np.zeros(2), 2: a1})
    path = r.path
    assert path.violations(S, p, q, init_derivs={1: v0}, term_derivs={1: np.zeros(2), 2: a1}) == []
    np.testing.assert_allclose(path(0.0, 1), v0, atol=1e-7)
    np.testing.assert_allclose(path(path.T, 2), a1, atol=1e-7)


def test_violations_reports_problems():
    S = BoxSet([[0, 0], [1, 0]], [[2, 1], [3, 1]])
    pts = np.zeros((2, 4, 2))
    pts[0] = np.linspace([0.1, 0.5], [1.5, 0.5], 4)
    pts[1] = np.linspace([1.5, 0.5], [2.9, 0.5], 4)
    ok = PiecewiseBezierPath([0, 1], [0.5, 0.5], pts, 1)
    assert ok.violations(S, [0.1, 0.5], [2.9, 0.5]) == []
    bad = pts.copy()
    bad[1, 0, 1] += 1e-6
    msgs = PiecewiseBezierPath([0, 1], [0.5, 0.5], bad, 1).violations(S)
    assert any("derivative 0 discontinuous" in m for m in msgs)
    out = pts.copy()
    out[1, 2, 1] = 1.5
    assert any("leaves box" in m for m in PiecewiseBezierPath([0, 1], [0.5, 0.5], out, 1).violations(S))
    assert any("p_init" in m for m in ok.violations(S, [0.0, 0.5]))


def test_single_box_direct():
    S = BoxSet([[0, 0]], [[1, 1]])
    r = plan(SafeSet.from_boxset(S), [0.1, 0.1], [0.9, 0.8], 1.0, (0, 1.0))
    assert r.path.N == 1 and r.cost == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_random_scenes_valid(seed):
    rng = np.random.default_rng(100 + seed)
    done = 0
    while done < 3:
        S = random_boxes(rng, 10, integer=True, span=6, max_side=3)
        p, q = rng.uniform(0, 7, 2), rng.uniform(0, 7, 2)
        r = plan(SafeSet.from_boxset(S), p, q, rng.uniform(0.5, 3), (0.0, 0.1, 1.0))
        if not r.feasible:
            continue
        done += 1
        assert r.path.violations(S, p, q) == []
        assert sample_safety(r.path, S, seed=seed)
        check_trace(r.smooth, SmoothParams())
