"""Sparse conic problems and a Clarabel-backed solver.

A ConicProblem is

    minimize    (1/2) x'Px + q'x + c0
    subject to  A_eq x = b_eq
                lb <= x <= ub                 (entries may be +-inf)
                F_i x + g_i in SOC_i          (first entry >= norm of the rest)

Callers build problems with ConicBuilder, which keeps COO triplets until
``build`` is called.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

# Default accuracy targets per problem family.
TOL_REP_POINTS = 1e-4
TOL_SHORTENING = 1e-7
TOL_SMOOTH = 1e-6


@dataclass
class SOCBlock:
    """count stacked cones of equal dimension: rows c*dim .. c*dim+dim-1 of
    F x + g belong to cone c."""

    F: sp.csr_matrix
    g: np.ndarray
    dim: int

    @property
    def count(self) -> int:
        return self.g.size // self.dim


class ConicSolveError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class ConicProblem:
    n: int
    P: sp.csc_matrix
    q: np.ndarray
    A_eq: sp.csc_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: list[SOCBlock]
    c0: float = 0.0
    # stage count and per-stage variable span, for banded optimal-control problems
    stages: tuple[int, int] | None = None

    def validate(self):
        if self.P.shape != (self.n, self.n) or self.q.shape != (self.n,):
            raise ValueError("objective has wrong shape")
        if self.A_eq.shape[1] != self.n or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("equality block has wrong shape")
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bounds have wrong shape")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        for c in self.cones:
            if c.F.shape != (c.g.size, self.n) or c.dim < 1 or c.g.size % c.dim:
                raise ValueError("cone block has wrong shape")
        if (abs(self.P - self.P.T) > 1e-12 * max(1.0, abs(self.P).max() if self.P.nnz else 1.0)).nnz:
            raise ValueError("quadratic term must be symmetric")


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    objective: float
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # multipliers of lb <= x and x <= ub (nonnegative; zero for infinite bounds)
    z_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_prim: float = np.nan
    r_dual: float = np.nan
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class ConicBuilder:
    """Incremental assembly of a ConicProblem."""

    def __init__(self):
        self.n = 0
        self._lb = []
        self._ub = []
        self._q = []
        self._P = ([], [], [])
        self._eq = ([], [], [])
        self._b_eq = []
        self._cones = []
        self.c0 = 0.0
        self.stages = None

    def add_variables(self, count: int, lb=-np.inf, ub=np.inf) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (count,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (count,)).copy())
        self._q.append(np.zeros(count))
        return idx

    def set_bounds(self, idx, lb=None, ub=None):
        lbv, ubv = self._flat_bounds()
        if lb is not None:
            lbv[idx] = lb
        if ub is not None:
            ubv[idx] = ub
        self._lb, self._ub = [lbv], [ubv]

    def _flat_bounds(self):
        lbv = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ubv = np.concatenate(self._ub) if self._ub else np.zeros(0)
        return lbv, ubv

    def add_linear_cost(self, idx, coef):
        q = np.concatenate(self._q) if self._q else np.zeros(0)
        np.add.at(q, np.asarray(idx), coef)
        self._q = [q]

    def add_quadratic_cost(self, idx, H):
        """Adds (1/2) x[idx]' H x[idx]; H must be symmetric."""
        idx = np.asarray(idx)
        H = np.asarray(H, dtype=float)
        r, c = np.meshgrid(idx, idx, indexing="ij")
        self._P[0].append(r.ravel())
        self._P[1].append(c.ravel())
        self._P[2].append(H.ravel())

    def add_equality(self, idx, coef, rhs: float):
        row = len(self._b_eq)
        idx = np.atleast_1d(np.asarray(idx))
        self._eq[0].append(np.full(idx.size, row))
        self._eq[1].append(idx)
        self._eq[2].append(np.broadcast_to(np.asarray(coef, dtype=float), idx.shape))
        self._b_eq.append(float(rhs))

    def add_equalities(self, rows, cols, vals, rhs):
        """Vectorized: rows are local (0..m-1) row ids of the new block."""
        base = len(self._b_eq)
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._eq[0].append(np.asarray(rows) + base)
        self._eq[1].append(np.asarray(cols))
        self._eq[2].append(np.asarray(vals, dtype=float))
        self._b_eq.extend(rhs.tolist())

    def add_soc(self, rows, cols, vals, g, dim: int | None = None):
        """Adds (F x + g) in SOC with F given as COO triplets. With ``dim``
        smaller than len(g) the rows form len(g)/dim stacked cones."""
        g = np.asarray(g, dtype=float)
        self._cones.append((np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float),
                            g, g.size if dim is None else dim))

    def build(self) -> ConicProblem:
        n = self.n
        lb, ub = self._flat_bounds()
        q = np.concatenate(self._q) if self._q else np.zeros(0)
        if self._P[0]:
            P = sp.coo_matrix((np.concatenate(self._P[2]),
                               (np.concatenate(self._P[0]), np.concatenate(self._P[1]))),
                              shape=(n, n)).tocsc()
        else:
            P = sp.csc_matrix((n, n))
        m_eq = len(self._b_eq)
        if self._eq[0]:
            A = sp.coo_matrix((np.concatenate(self._eq[2]),
                               (np.concatenate(self._eq[0]), np.concatenate(self._eq[1]))),
                              shape=(m_eq, n)).tocsc()
        else:
            A = sp.csc_matrix((0, n))
        cones = []
        for rows, cols, vals, g, dim in self._cones:
            F = sp.coo_matrix((vals, (rows, cols)), shape=(g.size, n)).tocsr()
            cones.append(SOCBlock(F, g, dim))
        prob = ConicProblem(n=n, P=P, q=q, A_eq=A, b_eq=np.asarray(self._b_eq, dtype=float),
                            lb=lb, ub=ub, cones=cones, c0=self.c0, stages=self.stages)
        return prob


def _threads() -> int:
    try:
        return max(0, int(os.environ.get("BOXPLAN_THREADS", "0")))
    except ValueError:
        return 0


def solve(problem: ConicProblem, tol: float = TOL_SMOOTH, max_iter: int = 200) -> ConicSolution:
    """Solves the problem with Clarabel; returns a ConicSolution whose
    status is one of OPTIMAL, INFEASIBLE, NUMERICAL_FAILURE."""
    n = problem.n
    rows_A, rhs, cone_spec = [], [], []
    if problem.A_eq.shape[0]:
        rows_A.append(problem.A_eq)
        rhs.append(problem.b_eq)
        cone_spec.append(clarabel.ZeroConeT(problem.A_eq.shape[0]))
    eye = sp.identity(n, format="csr")
    # lb == ub goes into the zero cone; a pair of opposite inequalities with
    # no interior slows the interior-point method down badly
    fixed = np.nonzero(problem.lb == problem.ub)[0]
    if fixed.size:
        rows_A.append(eye[fixed])
        rhs.append(problem.lb[fixed])
        cone_spec.append(clarabel.ZeroConeT(fixed.size))
    free = problem.lb != problem.ub
    fin_lo = np.nonzero(np.isfinite(problem.lb) & free)[0]
    fin_hi = np.nonzero(np.isfinite(problem.ub) & free)[0]
    if fin_lo.size + fin_hi.size:
        # -x <= -lb and x <= ub
        rows_A.append(sp.vstack([-eye[fin_lo], eye[fin_hi]]))
        rhs.append(np.concatenate([-problem.lb[fin_lo], problem.ub[fin_hi]]))
        cone_spec.append(clarabel.NonnegativeConeT(fin_lo.size + fin_hi.size))
    for c in problem.cones:
        # F x + g = s in K  <=>  -F x + s = g
        rows_A.append(-c.F)
        rhs.append(c.g)
        cone_spec.extend(clarabel.SecondOrderConeT(c.dim) for _ in range(c.count))
    A = sp.vstack(rows_A, format="csc") if rows_A else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    P = sp.triu(problem.P, format="csc")

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol * 1e-2
    settings.tol_gap_rel = tol
    settings.tol_feas = min(1e-8, tol)
    settings.tol_ktratio = min(1e-6, tol)
    settings.presolve_enable = False
    threads = _threads()
    if threads:
        settings.max_threads = threads

    res = clarabel.DefaultSolver(P, problem.q, A, b, cone_spec, settings).solve()
    status = str(res.status)
    if status in ("Solved", "AlmostSolved"):
        code = OPTIMAL
    elif "Infeasible" in status:
        code = INFEASIBLE
    else:
        code = NUMERICAL_FAILURE
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    m_eq = problem.A_eq.shape[0]
    y_eq = -z[:m_eq] if m_eq else np.zeros(0)
    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    off = m_eq
    if fixed.size:
        # a free multiplier splits into its lower and upper parts
        zf = -z[off:off + fixed.size]
        z_lower[fixed] = np.maximum(zf, 0.0)
        z_upper[fixed] = np.maximum(-zf, 0.0)
        off += fixed.size
    z_lower[fin_lo] = z[off:off + fin_lo.size]
    off += fin_lo.size
    z_upper[fin_hi] = z[off:off + fin_hi.size]
    obj = float(res.obj_val) + problem.c0 if code == OPTIMAL else np.nan
    return ConicSolution(x=x, status=code, objective=obj, y_eq=y_eq, z_lower=z_lower,
                         z_upper=z_upper, r_prim=float(res.r_prim), r_dual=float(res.r_dual),
                         iterations=int(res.iterations), solve_time=float(res.solve_time))


def solve_or_raise(problem: ConicProblem, tol: float, what: str) -> ConicSolution:
    sol = solve(problem, tol)
    if not sol.ok:
        raise ConicSolveError(
            f"{what}: solver returned {sol.status} after {sol.iterations} iterations "
            f"(r_prim={sol.r_prim:.2e}, r_dual={sol.r_dual:.2e})", sol)
    return sol
