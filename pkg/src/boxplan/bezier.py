"""Bernstein polynomials and Bezier curves."""
from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np

MAX_DEGREE = 20


def bernstein(M: int, n: int, a: float, b: float, t: float) -> float:
    if not b > a:
        raise ValueError("Bernstein basis needs b > a")
    if not 0 <= n <= M:
        raise ValueError("need 0 <= n <= M")
    s = (t - a) / (b - a)
    return comb(M, n) * s**n * (1 - s) ** (M - n)


def bernstein_basis(M: int, s) -> np.ndarray:
    """All M+1 basis values at normalized times s in [0, 1]; shape (len(s), M+1)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))[:, None]
    n = np.arange(M + 1)
    coef = np.array([comb(M, k) for k in n], dtype=float)
    return coef * s**n * (1 - s) ** (M - n)


@lru_cache(maxsize=None)
def _q_matrix(M: int) -> np.ndarray:
    if M > MAX_DEGREE:
        raise ValueError(f"degree {M} exceeds supported maximum {MAX_DEGREE}")
    Q = np.empty((M + 1, M + 1))
    for m in range(M + 1):
        for n in range(M + 1):
            # exact integer binomials, one division
            Q[m, n] = comb(M, m) * comb(M, n) / comb(2 * M, m + n)
    Q /= 2 * M + 1
    Q.flags.writeable = False
    return Q


def q_matrix(M: int) -> np.ndarray:
    """Gram matrix of the degree-M Bernstein basis on [0, 1].

    For control points G (rows), Q(G) = sum_mn Q[m, n] G_m . G_n and
    int_a^b ||gamma(t)||^2 dt = (b - a) Q(G).
    """
    return _q_matrix(M)


@lru_cache(maxsize=None)
def q_factor(M: int) -> np.ndarray:
    """Upper-triangular R with R'R = q_matrix(M)."""
    R = np.linalg.cholesky(_q_matrix(M)).T
    R.flags.writeable = False
    return R


def q_form(points) -> float:
    G = np.asarray(points, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    Q = q_matrix(G.shape[0] - 1)
    return float(np.sum(Q * (G @ G.T)))


class BezierCurve:
    def __init__(self, points, a: float = 0.0, b: float = 1.0):
        if not b > a:
            raise ValueError("Bezier curve needs b > a")
        P = np.array(points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.shape[0] < 1:
            raise ValueError("a Bezier curve needs at least one control point")
        P.flags.writeable = False
        self.points = P
        self.a = float(a)
        self.b = float(b)

    @property
    def degree(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def duration(self) -> float:
        return self.b - self.a

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        span = self.b - self.a
        if np.any(t < self.a - 1e-12 * span) or np.any(t > self.b + 1e-12 * span):
            raise ValueError(f"time outside curve domain [{self.a}, {self.b}]")
        return t

    def __call__(self, t) -> np.ndarray:
        t = self._check(t)
        s = np.clip((t - self.a) / (self.b - self.a), 0.0, 1.0)
        out = bernstein_basis(self.degree, s) @ self.points
        return out[0] if t.ndim == 0 else out

    def start_point(self) -> np.ndarray:
        return self.points[0]

    def end_point(self) -> np.ndarray:
        return self.points[-1]

    def derivative(self) -> BezierCurve:
        M = self.degree
        if M == 0:
            raise ValueError("cannot differentiate a degree-0 Bezier curve")
        pts = M / (self.b - self.a) * np.diff(self.points, axis=0)
        return BezierCurve(pts, self.a, self.b)

    def squared_l2(self) -> float:
        return (self.b - self.a) * q_form(self.points)

    def control_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def de_casteljau(points, s: float) -> np.ndarray:
    """Reference evaluation at normalized time s by repeated interpolation."""
    P = np.array(points, dtype=float)
    while P.shape[0] > 1:
        P = (1 - s) * P[:-1] + s * P[1:]
    return P[0]


def difference_matrix(M: int) -> np.ndarray:
    """D with D @ G = diff(G) for M+1 control points (no time scaling)."""
    D = np.zeros((M, M + 1))
    i = np.arange(M)
    D[i, i] = -1.0
    D[i, i + 1] = 1.0
    return D
