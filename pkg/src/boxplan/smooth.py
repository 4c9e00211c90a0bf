"""Smooth phase: piecewise Bezier paths through a fixed box sequence.

The traversal times and the control points are optimized by alternating a
projection QP (times fixed) and a tangent SOCP (bilinear time/control-point
products linearized, times kept in a trust region).
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import conic
from .bezier import BezierCurve, bernstein_basis, q_factor, q_matrix
from .geometry import BoxSet
from .polygonal import PolygonalCurve

log = logging.getLogger(__name__)


class PathValidationError(ValueError):
    pass


@dataclass
class Query:
    p_init: np.ndarray
    p_term: np.ndarray
    T: float
    alpha: tuple
    # order i (1..D) -> prescribed p^(i)(0) / p^(i)(T)
    init_derivs: dict = field(default_factory=dict)
    term_derivs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p_init = np.asarray(self.p_init, dtype=float).reshape(-1)
        self.p_term = np.asarray(self.p_term, dtype=float).reshape(-1)
        self.alpha = tuple(float(a) for a in self.alpha)
        self.T = float(self.T)
        if self.p_init.shape != self.p_term.shape:
            raise ValueError("p_init and p_term must have the same dimension")
        if not self.T > 0:
            raise ValueError("final time must be positive")
        if len(self.alpha) < 1:
            raise ValueError("need at least one objective weight")
        if any(a < 0 for a in self.alpha) or not any(a > 0 for a in self.alpha):
            raise ValueError("weights must be nonnegative with at least one positive")
        for derivs in (self.init_derivs, self.term_derivs):
            for i, v in list(derivs.items()):
                if not 1 <= int(i) <= self.D:
                    raise ValueError(f"boundary derivative order {i} outside 1..{self.D}")
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.shape != self.p_init.shape:
                    raise ValueError("boundary derivative has wrong dimension")
                derivs[int(i)] = v

    @property
    def D(self) -> int:
        return len(self.alpha)

    @property
    def dim(self) -> int:
        return self.p_init.size

    @property
    def has_boundary_derivs(self) -> bool:
        return bool(self.init_derivs or self.term_derivs)


def derivative_points(points: np.ndarray, durations: np.ndarray, order: int) -> np.ndarray:
    """Control points of the order-th derivative of every piece.

    points has shape (N, M+1, d); the result has shape (N, M+1-order, d).
    """
    P = np.asarray(points, dtype=float)
    M = P.shape[1] - 1
    durations = np.asarray(durations, dtype=float)[:, None, None]
    for i in range(1, order + 1):
        P = (M - i + 1) / durations * np.diff(P, axis=1)
    return P


class PiecewiseBezierPath:
    """Piecewise Bezier path, one degree-M piece per box of the sequence."""

    def __init__(self, boxes, durations, points, D: int):
        self.boxes = [int(k) for k in boxes]
        self.durations = np.array(durations, dtype=float)
        self.points = np.array(points, dtype=float)
        self.D = int(D)
        if self.points.ndim != 3 or self.points.shape[0] != len(self.boxes):
            raise ValueError("points must have shape (N, M+1, d)")
        if self.durations.shape != (len(self.boxes),) or np.any(self.durations <= 0):
            raise ValueError("need one positive duration per piece")
        self.knots = np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def N(self) -> int:
        return len(self.boxes)

    @property
    def M(self) -> int:
        return self.points.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[2]

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    def derivative_points(self, order: int) -> np.ndarray:
        return derivative_points(self.points, self.durations, order)

    def pieces(self, order: int = 0) -> list[BezierCurve]:
        P = self.derivative_points(order)
        return [BezierCurve(P[j], self.knots[j], self.knots[j + 1]) for j in range(self.N)]

    def piece_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(j, 0, self.N - 1)

    def __call__(self, t, order: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t)
        if np.any(tt < -1e-12 * self.T) or np.any(tt > self.T * (1 + 1e-12)):
            raise ValueError(f"time outside [0, {self.T}]")
        if order > self.M:
            out = np.zeros((tt.size, self.dim))
            return out[0] if t.ndim == 0 else out
        P = self.derivative_points(order)
        j = self.piece_index(tt)
        s = np.clip((tt - self.knots[j]) / self.durations[j], 0.0, 1.0)
        B = bernstein_basis(self.M - order, s)
        out = np.einsum("tn,tnd->td", B, P[j])
        return out[0] if t.ndim == 0 else out

    def cost(self, alpha) -> float:
        return float(sum(a * c for a, c in zip(alpha, self.cost_terms(len(alpha))) if a))

    def cost_terms(self, D: int | None = None) -> list[float]:
        """Per derivative order i = 1..D: int_0^T ||p^(i)||^2 dt."""
        D = self.D if D is None else D
        out = []
        for i in range(1, D + 1):
            P = self.derivative_points(i)
            Q = q_matrix(self.M - i)
            per_piece = np.einsum("mn,jmd,jnd->j", Q, P, P)
            out.append(float(np.dot(self.durations, per_piece)))
        return out

    def piece_costs(self, alpha) -> np.ndarray:
        total = np.zeros(self.N)
        for i, a in enumerate(alpha, start=1):
            if a:
                P = self.derivative_points(i)
                total += a * self.durations * np.einsum("mn,jmd,jnd->j", q_matrix(self.M - i), P, P)
        return total

    def violations(self, S: BoxSet, p_init=None, p_term=None, cont_tol: float = 1e-7,
                   box_tol: float = 1e-9, init_derivs=None, term_derivs=None) -> list[str]:
        """Checks boundary, continuity of derivatives 0..D and control-point
        containment; returns human-readable violations (empty when valid)."""
        out = []
        if p_init is not None and not np.array_equal(self.points[0, 0], np.asarray(p_init, dtype=float)):
            out.append("path does not start at p_init")
        if p_term is not None and not np.array_equal(self.points[-1, -1], np.asarray(p_term, dtype=float)):
            out.append("path does not end at p_term")
        for i in range(self.D + 1):
            P = self.derivative_points(i)
            if self.N > 1:
                jump = np.abs(P[:-1, -1] - P[1:, 0])
                bad = jump > cont_tol
                if np.any(bad):
                    j = int(np.argwhere(bad.any(axis=1))[0, 0])
                    out.append(f"derivative {i} discontinuous at knot {j + 1} (jump {jump[j].max():.3e})")
            for derivs, end, name in ((init_derivs or {}, 0, "initial"), (term_derivs or {}, -1, "terminal")):
                if i in derivs:
                    v = P[0, 0] if end == 0 else P[-1, -1]
                    if np.max(np.abs(v - derivs[i])) > cont_tol:
                        out.append(f"{name} derivative {i} off by {np.max(np.abs(v - derivs[i])):.3e}")
        for j, k in enumerate(self.boxes):
            if k < 0 or k >= S.K:
                out.append(f"piece {j} refers to unknown box {k}")
                continue
            if np.any(self.points[j] < S.L[k] - box_tol) or np.any(self.points[j] > S.U[k] + box_tol):
                out.append(f"piece {j} leaves box {k}")
        return out


def default_degree(D: int) -> int:
    return 2 * D + 1


@dataclass
class SmoothParams:
    degree: int | None = None
    kappa0: float = 1.0
    omega: float = 3.0
    eps: float = 1e-2
    max_iter: int = 30
    time_floor: float = 1e-6       # T_j >= time_floor * T inside the tangent problem
    init_floor: float = 1e-3       # initial T_j >= init_floor * T / N
    continuity_target: float = 1e-8   # derivative jumps float64 must be able to resolve
    boundary_inflation: float = 2.0
    tol: float = conic.TOL_SMOOTH

    def __post_init__(self):
        if not self.kappa0 > 0 or not self.omega > 1 or not self.eps > 0:
            raise ValueError("need kappa0 > 0, omega > 1, eps > 0")


def duration_floor(T: float, N: int, M: int, D: int, scale: float,
                   params: SmoothParams | None = None) -> float:
    """Smallest admissible piece duration.

    Control points are stored as absolute positions, so a piece of duration
    t carries an order-i rounding error of about M!/(M-i)! (2/t)^i eps scale
    in its derivative control points. Pieces shorter than the returned value
    could not meet ``continuity_target`` in float64 whatever the solver did.
    The floor never exceeds half the average duration.
    """
    params = params or SmoothParams()
    eps = np.finfo(float).eps * max(scale, 1.0)
    rep = max([(math.perm(M, i) * 2.0 ** i * eps / params.continuity_target) ** (1 / i)
               for i in range(1, D + 1)], default=0.0)
    return min(max(params.time_floor * T, rep), 0.5 * T / N)


def _scene_scale(S: BoxSet, boxes) -> float:
    return float(max(np.abs(S.L[boxes]).max(), np.abs(S.U[boxes]).max()))


def _apply_floor(times: np.ndarray, T: float, floor: float) -> np.ndarray:
    # raise short pieces to the floor, shrink the rest proportionally
    times = T * times / times.sum()
    for _ in range(len(times)):
        low = times < floor
        if not low.any():
            break
        rest = T - floor * low.sum()
        times = np.where(low, floor, times * rest / times[~low].sum())
    return times


def init_traversal_times(curve: PolygonalCurve, T: float, boundary_derivs: bool = False,
                         params: SmoothParams | None = None, floor: float = 0.0) -> np.ndarray:
    """Constant-speed time allocation along the polygonal curve.

    With boundary derivative conditions the first and last segments get
    ``boundary_inflation`` times their share before renormalizing.
    """
    params = params or SmoothParams()
    if not T > 0:
        raise ValueError("final time must be positive")
    N = curve.N
    if N == 1:
        return np.array([float(T)])
    lengths = curve.segment_lengths()
    total = lengths.sum()
    if total <= 0:
        raise ValueError("polygonal curve has zero length but several segments")
    w = lengths / total
    if boundary_derivs:
        w = w.copy()
        w[0] *= params.boundary_inflation
        w[-1] *= params.boundary_inflation
        w /= w.sum()
    w = np.maximum(w, params.init_floor / N)
    return _apply_floor(T * w / w.sum(), T, floor)


def _add_rows(b: conic.ConicBuilder, terms, rhs):
    """Adds m equality rows sum_t coef_t * x[cols_t] = rhs, with every cols_t
    an index array of shape (m,) and coef_t a scalar or (m,) array."""
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    m = rhs.size
    rows, cols, vals = [], [], []
    for cidx, coef in terms:
        cidx = np.asarray(cidx).reshape(-1)
        rows.append(np.arange(m))
        cols.append(cidx)
        vals.append(np.broadcast_to(np.asarray(coef, dtype=float), (m,)).ravel())
    b.add_equalities(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs)


def _box_bounds(S: BoxSet, k: int, count: int):
    return np.tile(S.L[k], count), np.tile(S.U[k], count)


def _shape_variables(b, boxes, S, D, M, d):
    """Per piece, blocks w[j][i] of shape (M-i+1, d); block 0 holds the box
    bounded control points."""
    w = []
    for k in boxes:
        blocks = []
        for i in range(D + 1):
            m = M - i + 1
            if i == 0:
                lb, ub = _box_bounds(S, k, m)
                blocks.append(b.add_variables(m * d, lb=lb, ub=ub).reshape(m, d))
            else:
                blocks.append(b.add_variables(m * d).reshape(m, d))
        w.append(blocks)
    return w


def _common_constraints(b, w, ref, query, M):
    """Boundary conditions and continuity of derivatives 0..D.

    The variables are scaled derivative points w_i = ref_j^i p^(i), so all
    of them live in position units whatever the piece durations; continuity
    rows are divided through by the larger of the two factors.
    """
    D = query.D
    N = len(w)
    _add_rows(b, [(w[0][0][0], 1.0)], query.p_init)
    _add_rows(b, [(w[N - 1][0][M], 1.0)], query.p_term)
    for i, v in query.init_derivs.items():
        _add_rows(b, [(w[0][i][0], 1.0)], ref[0] ** i * np.asarray(v, dtype=float))
    for i, v in query.term_derivs.items():
        _add_rows(b, [(w[N - 1][i][M - i], 1.0)], ref[N - 1] ** i * np.asarray(v, dtype=float))
    for j in range(N - 1):
        for i in range(D + 1):
            a, c = 1.0 / ref[j] ** i, 1.0 / ref[j + 1] ** i
            top = max(a, c)
            _add_rows(b, [(w[j][i][M - i], a / top), (w[j + 1][i][0], -c / top)], np.zeros(query.dim))


def _finish_points(X: np.ndarray, boxes, query: Query, S: BoxSet) -> np.ndarray:
    """Snaps solver output: exact box containment, exact endpoints, exactly
    shared junction points."""
    X = X.copy()
    for j, k in enumerate(boxes):
        X[j] = np.minimum(np.maximum(X[j], S.L[k]), S.U[k])
    for j in range(len(boxes) - 1):
        k1, k2 = boxes[j], boxes[j + 1]
        lo = np.maximum(S.L[k1], S.L[k2])
        hi = np.minimum(S.U[k1], S.U[k2])
        mid = np.minimum(np.maximum((X[j, -1] + X[j + 1, 0]) / 2, lo), hi)
        X[j, -1] = mid
        X[j + 1, 0] = mid
    X[0, 0] = query.p_init
    X[-1, -1] = query.p_term
    return X


def _diff_row(M: int, i: int, T: float, first: bool) -> tuple[np.ndarray, np.ndarray]:
    # columns and weights of the first (or last) order-i derivative control point
    w = math.perm(M, i) / T ** i * np.array([(-1) ** (i - r) * math.comb(i, r) for r in range(i + 1)])
    cols = np.arange(i + 1) if first else np.arange(M - i, M + 1)
    return cols, w


def _equality_system(durations, query: Query, M: int, D: int):
    """Boundary and continuity equalities on the flattened control points of
    one coordinate, rows scaled to unit norm. Returns (A, B) with B of shape
    (rows, d): column c is the right-hand side for coordinate c."""
    N = len(durations)
    m1 = M + 1
    rows, cols, vals, rhs = [], [], [], []

    def add(terms, r):
        k = len(rhs)
        for c, w in terms:
            rows.extend([k] * len(c))
            cols.extend(c)
            vals.extend(w)
        rhs.append(r)

    ends = [(0, True, query.p_init, query.init_derivs), (N - 1, False, query.p_term, query.term_derivs)]
    spec = []
    for j, first, p0, derivs in ends:
        spec.append((j, first, 0, p0))
        for i, v in derivs.items():
            spec.append((j, first, i, v))
    for j, first, i, v in spec:
        c, w = _diff_row(M, i, durations[j], first) if i else (np.array([0 if first else M]), np.ones(1))
        nrm = np.linalg.norm(w)
        add([(j * m1 + c, w / nrm)], np.asarray(v, dtype=float) / nrm)
    for j in range(N - 1):
        for i in range(D + 1):
            c1, w1 = _diff_row(M, i, durations[j], False)
            c2, w2 = _diff_row(M, i, durations[j + 1], True)
            nrm = math.hypot(np.linalg.norm(w1), np.linalg.norm(w2))
            add([(j * m1 + c1, w1 / nrm), ((j + 1) * m1 + c2, -w2 / nrm)], np.zeros(query.dim))
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(rhs), N * m1))
    return A, np.array(rhs)


def _cost_hessian(durations, alpha, M: int):
    """H with cost = x' H x / 2 summed over coordinates (x = one coordinate
    of all control points, piece after piece)."""
    blocks = []
    for Tj in durations:
        H = np.zeros((M + 1, M + 1))
        Dm = np.eye(M + 1)
        for i, a in enumerate(alpha, start=1):
            Dm = np.diff(Dm, axis=0)
            if a:
                c = math.perm(M, i) / Tj ** i
                H += 2 * a * Tj * c * c * Dm.T @ q_matrix(M - i) @ Dm
        blocks.append(H)
    return sparse.block_diag(blocks, format="csr")


def _refined_solve(lu, K, rhs):
    """Solves K z = rhs with a factorization of a nearby matrix, refining
    while the residual at least halves."""
    z = lu.solve(rhs)
    res = np.abs(rhs - K @ z).max()
    for _ in range(30):
        trial = z + lu.solve(rhs - K @ z)
        res_t = np.abs(rhs - K @ trial).max()
        if res_t >= 0.5 * res:
            return trial if res_t < res else z
        z, res = trial, res_t
    return z


def _active_set_qp(H, F, A, B, lo, hi, X0, scale: float):
    """min x'Hx/2 + f'x  s.t.  A x = b, lo <= x <= hi, one column of F, B,
    lo, hi and X0 per coordinate (the coordinates share H and A).

    Primal active-set method started from X0, which must be within the
    bounds but need not meet the equalities. The bounds X0 touches form the
    working set; each round solves the equality-constrained QP exactly and
    either steps to the first blocking bound or drops the bound with the
    worst multiplier. Returns None if the round limit is hit."""
    n, d = X0.shape
    absH = abs(H)
    hs = max(absH.max(), 1.0)
    out = np.empty((n, d))
    for c in range(d):
        lo_c, hi_c, f = lo[:, c], hi[:, c], F[:, c]
        x = np.minimum(np.maximum(X0[:, c], lo_c), hi_c)
        at_lo, at_hi = x <= lo_c, (x >= hi_c) & (x > lo_c)
        fixed = lo_c == hi_c
        for _ in range(4 * n + 20):
            W = at_lo | at_hi
            Fr = ~W
            AF = A[:, Fr]
            keep = np.diff(AF.tocsr().indptr) > 0    # rows without free variables
            AF = AF[keep]
            nf, me = int(Fr.sum()), AF.shape[0]
            grad = H @ x + f
            rhs = np.concatenate([-grad[Fr], B[keep, c] - A[keep] @ x])
            if nf == 0:
                # every variable sits on a bound, so no row keeps a free one
                z = rhs
            else:
                # proximal term: zero-cost directions the equalities leave free
                # (one cubic through the ends under a jerk cost, say) get no step
                K = sparse.bmat([[H[Fr][:, Fr] + 1e-10 * hs * sparse.identity(nf), AF.T],
                                 [AF, None]], format="csc")
                # the -delta block only guards against redundant rows; refining
                # against the exact system keeps it out of the equality residual
                lu = splu((K - sparse.block_diag([sparse.csc_matrix((nf, nf)),
                                                   1e-13 * sparse.identity(me)])).tocsc())
                z = _refined_solve(lu, K, rhs)
            step = np.zeros(n)
            step[Fr] = z[:nf]
            gain = -(step @ grad) - 0.5 * step @ (H @ step)
            # rounding level of that gain
            noise = 1e-13 * (np.abs(step) @ (absH @ np.abs(x) + np.abs(f)))
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ratio = np.where(step < 0, (lo_c - x) / step, np.where(step > 0, (hi_c - x) / step, np.inf))
            ratio[W] = np.inf
            k = int(np.argmin(ratio))
            t = min(1.0, max(ratio[k], 0.0))
            x += t * step
            # the gain test only means something once the equalities hold;
            # before that a step can raise the cost to restore them
            feasible = me == 0 or np.abs(rhs[nf:]).max() <= 1e-9 * scale
            if feasible and (np.abs(step).max() <= 1e-13 * scale or gain <= noise):
                y = np.zeros(A.shape[0])
                y[keep] = z[nf:]
                g = H @ x + f + A.T @ y
                # multipliers: g >= 0 on a lower bound, g <= 0 on an upper one
                bad = np.where(at_lo & ~fixed, -g, 0.0) + np.where(at_hi, g, 0.0)
                k = int(np.argmax(bad))
                if bad[k] <= 1e-9 * max(np.abs(g).max(), 1.0):
                    break
                at_lo[k] = at_hi[k] = False
            elif t < 1.0:
                if step[k] < 0:
                    x[k], at_lo[k] = lo_c[k], True
                else:
                    x[k], at_hi[k] = hi_c[k], True
        else:
            return None
        out[:, c] = np.minimum(np.maximum(x, lo_c), hi_c)
    return out


def _stacked_bounds(S: BoxSet, boxes, m1: int):
    lo = np.concatenate([np.broadcast_to(S.L[k], (m1, S.dim)) for k in boxes])
    hi = np.concatenate([np.broadcast_to(S.U[k], (m1, S.dim)) for k in boxes])
    return lo, hi


def _polish_projection(X, durations, boxes, query: Query, S: BoxSet, M: int):
    """Exact projection by active set, started from a feasible solver answer.

    Short pieces amplify position errors by about (M/T_j)^i in the order-i
    derivatives, and thin or zero-width boxes leave the interior-point method
    without a strictly feasible point, so its answer can be off by 1e-6 in
    position, which is a lot of cost."""
    N, m1, d = X.shape
    A, B = _equality_system(durations, query, M, query.D)
    H = _cost_hessian(durations, query.alpha, M)
    lo, hi = _stacked_bounds(S, boxes, m1)
    x = _active_set_qp(H, np.zeros((N * m1, d)), A, B, lo, hi, X.reshape(-1, d),
                       1.0 + _scene_scale(S, boxes))
    return None if x is None else x.reshape(N, m1, d)


def _tangent_model(Tbar, wbar, sigma, query: Query, M: int):
    """The tangent problem with the relative times sigma held fixed, as a QP
    in the positions: returns H, F, A, B and the constant, so that the model
    value is sum_c (x_c'H x_c/2 + F_c'x_c) + const."""
    D, d = query.D, query.dim
    N = len(Tbar)
    m1 = M + 1
    Hs, Fs, const = [], [], 0.0
    maps = []
    for j in range(N):
        Wm, cv = [np.eye(m1)], [np.zeros((m1, d))]
        Hj, Fj = np.zeros((m1, m1)), np.zeros((m1, d))
        for i in range(1, D + 1):
            Dm = (M - i + 1) * np.diff(np.eye(M - i + 2), axis=0)
            U, cu = Dm @ Wm[-1], Dm @ cv[-1]
            # u = sigma wbar + w - wbar, so w = u - (sigma - 1) wbar
            Wm.append(U)
            cv.append(cu - (sigma[j] - 1) * wbar[i][j])
            a = query.alpha[i - 1]
            if a:
                k = a * Tbar[j] ** (1 - 2 * i) / sigma[j]
                Q = q_matrix(M - i)
                Hj += 2 * k * U.T @ Q @ U
                Fj += 2 * k * U.T @ Q @ cu
                const += k * np.einsum("md,mn,nd->", cu, Q, cu)
        Hs.append(Hj)
        Fs.append(Fj)
        maps.append((Wm, cv))
    rows, rhs = [], []

    def add(terms, r):
        # terms: (piece, coefficient row over that piece's points)
        vec = np.zeros(N * m1)
        for j, row in terms:
            vec[j * m1:(j + 1) * m1] += row
        nrm = np.linalg.norm(vec)
        rows.append(vec / nrm)
        rhs.append(np.asarray(r, dtype=float) / nrm)

    ends = [(0, 0, query.p_init, query.init_derivs), (N - 1, -1, query.p_term, query.term_derivs)]
    for j, at, p0, derivs in ends:
        Wm, cv = maps[j]
        add([(j, Wm[0][at])], p0)
        for i, v in derivs.items():
            add([(j, Wm[i][at])], Tbar[j] ** i * np.asarray(v, dtype=float) - cv[i][at])
    for j in range(N - 1):
        (W1, c1), (W2, c2) = maps[j], maps[j + 1]
        for i in range(D + 1):
            a, b = 1.0 / Tbar[j] ** i, 1.0 / Tbar[j + 1] ** i
            add([(j, a * W1[i][-1]), (j + 1, -b * W2[i][0])], b * c2[i][0] - a * c1[i][-1])
    A = sparse.csr_matrix(np.array(rows))
    return sparse.block_diag(Hs, format="csr"), np.concatenate(Fs), A, np.array(rhs), const


def tangent_model_value(boxes, Tbar, path: PiecewiseBezierPath, Tstar, query: Query, S: BoxSet,
                        start=None):
    """Exact optimal value of the tangent problem with the times fixed at
    Tstar (None if the active-set solve does not settle)."""
    Tbar = np.asarray(Tbar, dtype=float)
    M, D = path.M, query.D
    wbar = [Tbar[:, None, None] ** i * path.derivative_points(i) for i in range(D + 1)]
    H, F, A, B, const = _tangent_model(Tbar, wbar, np.asarray(Tstar) / Tbar, query, M)
    lo, hi = _stacked_bounds(S, boxes, M + 1)
    X0 = path.points.reshape(-1, query.dim) if start is None else np.asarray(start).reshape(-1, query.dim)
    x = _active_set_qp(H, F, A, B, lo, hi, X0, 1.0 + _scene_scale(S, boxes))
    if x is None:
        return None
    return float(0.5 * np.einsum("nc,nc->", x, H @ x) + np.sum(F * x) + const)


def _repair_equalities(X: np.ndarray, durations, boxes, query: Query, S: BoxSet, D: int,
                       bound_tol: float = 1e-12, passes: int = 4) -> np.ndarray:
    """Minimum-norm correction restoring boundary and continuity equalities.

    Solver residuals are amplified by (M/T_j)^i in the derivative control
    points, so a position error of 1e-11 can break continuity of the third
    derivative by 1e-7. Coordinates sitting on a box face stay fixed; the
    rest move by the least-squares correction, which is tiny by construction.
    """
    N, m1, d = X.shape
    n = N * m1
    A, B = _equality_system(durations, query, m1 - 1, D)
    lo = np.stack([np.broadcast_to(S.L[k], (m1, d)) for k in boxes]).reshape(n, d)
    hi = np.stack([np.broadcast_to(S.U[k], (m1, d)) for k in boxes]).reshape(n, d)
    x = X.reshape(n, d).copy()
    for c, _ in itertools.product(range(d), range(passes)):
        free = (x[:, c] > lo[:, c] + bound_tol) & (x[:, c] < hi[:, c] - bound_tol)
        r = B[:, c] - A @ x[:, c]
        if not free.any() or np.max(np.abs(r)) == 0:
            continue   # nothing to move, or already exact
        Af = A[:, free].tocsr()
        # minimum-norm step Af' y with (Af Af' + delta I) y = r; Af Af' is
        # banded (rows couple neighbouring pieces only), so this is linear in N
        G = (Af @ Af.T).tocsc()
        reg = 1e-14 * max(G.diagonal().max(), 1.0)
        y = splu((G + reg * sparse.identity(G.shape[0], format="csc")).tocsc()).solve(r)
        delta = Af.T @ y
        trial = x[:, c].copy()
        trial[free] += delta
        trial = np.minimum(np.maximum(trial, lo[:, c]), hi[:, c])
        if np.max(np.abs(B[:, c] - A @ trial)) < np.max(np.abs(r)):
            x[:, c] = trial
    return x.reshape(N, m1, d)


def projection(boxes, durations, query: Query, S: BoxSet, params: SmoothParams | None = None):
    """Optimal path for fixed traversal times (a convex QP).

    Returns (path, cost)."""
    params = params or SmoothParams()
    D, d = query.D, query.dim
    M = params.degree or default_degree(D)
    if M < D + 1:
        raise ValueError(f"degree {M} too small for {D} continuous derivatives")
    N = len(boxes)
    durations = np.asarray(durations, dtype=float)
    b = conic.ConicBuilder()
    w = _shape_variables(b, boxes, S, D, M, d)
    b.stages = (N, b.n // N)
    _common_constraints(b, w, durations, query, M)
    for j in range(N):
        for i in range(1, D + 1):
            prev = w[j][i - 1]
            _add_rows(b, [(w[j][i], 1.0), (prev[1:], -(M - i + 1)), (prev[:-1], M - i + 1)],
                      np.zeros(w[j][i].size))
            a = query.alpha[i - 1]
            if a:
                H = 2 * a * durations[j] ** (1 - 2 * i) * np.kron(q_matrix(M - i), np.eye(d))
                b.add_quadratic_cost(w[j][i].ravel(), H)
    sol = conic.solve_or_raise(b.build(), params.tol, "projection problem")
    X = np.stack([sol.x[w[j][0]] for j in range(N)])
    X = _finish_points(X, boxes, query, S)
    X = _repair_equalities(X, durations, boxes, query, S, D)
    polished = _polish_projection(X, durations, boxes, query, S, M)
    if polished is None:
        log.debug("active-set polish of the projection did not settle")
    else:
        X = _repair_equalities(_finish_points(polished, boxes, query, S), durations, boxes, query, S, D)
    path = PiecewiseBezierPath(boxes, durations, X, D)
    return path, path.cost(query.alpha)


def tangent(boxes, durations, path: PiecewiseBezierPath, kappa: float, query: Query,
            S: BoxSet, params: SmoothParams | None = None):
    """Convex local model of the joint time/shape problem around (durations, path).

    Returns (candidate times, optimal value of the local model)."""
    params = params or SmoothParams()
    D, d = query.D, query.dim
    M = path.M
    N = len(boxes)
    Tbar = np.asarray(durations, dtype=float)
    T = query.T
    floor = duration_floor(T, N, M, D, _scene_scale(S, boxes), params)
    lo = np.maximum(Tbar / (1 + kappa), floor)
    hi = np.maximum(Tbar * (1 + kappa), lo)
    # relative times sigma = T / Tbar; scaled points w_i = Tbar^i p^(i) and
    # u_i = Tbar^(i-1) q_i, where q_i = T p^(i) is linearized around Tbar
    wbar = [Tbar[:, None, None] ** i * path.derivative_points(i) for i in range(D + 1)]
    b = conic.ConicBuilder()
    sig = b.add_variables(N, lb=lo / Tbar, ub=hi / Tbar)
    w = _shape_variables(b, boxes, S, D, M, d)
    b.add_equalities(np.zeros(N, dtype=int), sig, Tbar / T, np.array([1.0]))
    _common_constraints(b, w, Tbar, query, M)
    for j in range(N):
        for i in range(1, D + 1):
            m = M - i + 1
            u = b.add_variables(m * d).reshape(m, d)
            prev = w[j][i - 1]
            # u = (M-i+1) * diff(w_(i-1))
            _add_rows(b, [(u, 1.0), (prev[1:], -(M - i + 1)), (prev[:-1], M - i + 1)], np.zeros(u.size))
            # u = sigma wbar + w_i - wbar
            wb = wbar[i][j].ravel()
            _add_rows(b, [(u, 1.0), (np.full(u.size, sig[j]), -wb), (w[j][i], -1.0)], -wb)
            a = query.alpha[i - 1]
            if a:
                # s sigma >= Q(u):  (s + sigma, s - sigma, 2 R u) in SOC
                s = int(b.add_variables(1, lb=0.0)[0])
                R = q_factor(M - i)
                rr, cc = np.triu_indices(m)
                rows = [0, 0, 1, 1]
                cols = [s, sig[j], s, sig[j]]
                vals = [1.0, 1.0, 1.0, -1.0]
                for c in range(d):
                    rows.extend(2 + c * m + rr)
                    cols.extend(u[cc, c])
                    vals.extend(2.0 * R[rr, cc])
                b.add_soc(rows, cols, vals, np.zeros(2 + m * d))
                b.add_linear_cost([s], a * Tbar[j] ** (1 - 2 * i))
    sol = conic.solve_or_raise(b.build(), params.tol, "tangent problem")
    Tstar = np.clip(Tbar * sol.x[sig], lo, hi)
    Tstar *= T / Tstar.sum()
    # The interior-point value is as inexact as the projection's (a few
    # percent on short pieces), too coarse for the termination test, so
    # the model is solved again exactly at the returned times.
    X0 = np.stack([sol.x[w[j][0]] for j in range(N)])
    value = tangent_model_value(boxes, Tbar, path, Tstar, query, S, start=X0)
    if value is None:
        log.debug("exact tangent value did not settle; keeping the solver objective")
        value = float(sol.objective)
    return Tstar, value


def trust_update(kappa: float, Tbar, Tstar, omega: float) -> float:
    """Shrinks the trust region so that the last tangent step would have
    touched its boundary, and never by less than a factor omega."""
    Tbar = np.asarray(Tbar, dtype=float)
    Tstar = np.asarray(Tstar, dtype=float)
    ratio = float(np.max(np.maximum(Tbar / Tstar, Tstar / Tbar)))
    return min((ratio - 1) / omega, kappa / omega)


@dataclass
class SmoothResult:
    path: PiecewiseBezierPath
    cost: float
    first_cost: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def smooth_phase(curve: PolygonalCurve, query: Query, S: BoxSet,
                 params: SmoothParams | None = None) -> SmoothResult:
    params = params or SmoothParams()
    boxes = curve.boxes
    M = params.degree or default_degree(query.D)
    floor = duration_floor(query.T, len(boxes), M, query.D, _scene_scale(S, boxes), params)
    times = init_traversal_times(curve, query.T, query.has_boundary_derivs, params, floor)
    path, J = projection(boxes, times, query, S, params)
    first = J
    kappa = params.kappa0
    trace = []
    converged = False
    it = 0
    while it < params.max_iter:
        it += 1
        rec = {"iteration": it, "kappa": kappa, "J_proj": J}
        try:
            Tstar, Jtan = tangent(boxes, times, path, kappa, query, S, params)
        except conic.ConicSolveError as err:
            log.debug("tangent problem failed at iteration %d: %s", it, err)
            rec.update(J_tan=np.nan, J_new=np.nan, accepted=False)
            trace.append(rec)
            kappa /= params.omega
            continue
        # the model at the current times is the projection itself, so its
        # optimum is at most min(value at T*, J)
        rec["J_tan_candidate"] = Jtan
        Jtan = min(Jtan, J)
        rec["J_tan"] = Jtan
        stop = J - Jtan <= params.eps * J + 1e-12
        try:
            new_path, new_J = projection(boxes, Tstar, query, S, params)
        except conic.ConicSolveError as err:
            log.warning("projection failed at candidate times: %s", err)
            new_path, new_J = None, np.inf
        accepted = new_J < J
        rec.update(J_new=new_J, accepted=accepted)
        trace.append(rec)
        Tbar = times
        if accepted:
            path, J, times = new_path, new_J, Tstar
        if stop:
            converged = True
            break
        kappa = trust_update(kappa, Tbar, Tstar, params.omega)
        if kappa <= 0:
            # pinned trust region: the next local model equals the projection
            converged = True
            break
    if not converged:
        log.warning("smooth phase hit the iteration cap (%d)", params.max_iter)
    return SmoothResult(path=path, cost=J, first_cost=first, iterations=it,
                        converged=converged, trace=trace)
