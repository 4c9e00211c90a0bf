"""Polygonal phase: shorten a safe polygonal curve for a fixed box sequence,
then splice in boxes whose dual certificate proves a strict shortening."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .geometry import BoxSet, box_intersection
from .linegraph import LineGraph, shortest_box_path

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-7
DEDUP_TOL = 1e-9
# ||lambda*|| must exceed 1 by this much before a splice is worth a re-solve
NORM_TOL = 1e-6


class IterationLimitError(RuntimeError):
    pass


@dataclass
class PolygonalCurve:
    nodes: np.ndarray   # (N+1, d), nodes[0] = p_init, nodes[-1] = p_term
    boxes: list         # N box indices; segment j runs nodes[j] -> nodes[j+1] in boxes[j]

    def __post_init__(self):
        self.nodes = np.array(self.nodes, dtype=float)
        self.boxes = [int(k) for k in self.boxes]
        if self.nodes.ndim != 2 or self.nodes.shape[0] != len(self.boxes) + 1:
            raise ValueError("a curve with N boxes needs N+1 nodes")

    @property
    def N(self) -> int:
        return len(self.boxes)

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def is_safe(self, S: BoxSet) -> bool:
        """Both endpoints of every segment lie in its box (so the segment does)."""
        return all(S.contains(k, self.nodes[j]) and S.contains(k, self.nodes[j + 1])
                   for j, k in enumerate(self.boxes))

    def copy(self) -> PolygonalCurve:
        return PolygonalCurve(self.nodes.copy(), list(self.boxes))


@dataclass
class InsertionCertificate:
    j: int
    k: int
    lambda1: np.ndarray
    lambda2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    lam: np.ndarray
    insert: bool

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.lam))

    @property
    def consistent(self) -> bool:
        return bool(np.all(self.c1 <= self.c2))

    @property
    def score(self) -> float:
        return self.norm if self.consistent else np.inf


def merge_repeated_boxes(curve: PolygonalCurve) -> PolygonalCurve:
    """Drops the node between two consecutive segments in the same box."""
    nodes = [curve.nodes[0]]
    boxes = []
    for j, k in enumerate(curve.boxes):
        if boxes and boxes[-1] == k:
            nodes[-1] = curve.nodes[j + 1]
        else:
            boxes.append(k)
            nodes.append(curve.nodes[j + 1])
    return PolygonalCurve(np.array(nodes), boxes)


def dedup(curve: PolygonalCurve, S: BoxSet, tol: float | None = None) -> PolygonalCurve:
    """Merges (near-)coincident consecutive nodes, removing the box of the
    zero-length segment, whenever the merged curve stays exactly safe."""
    if tol is None:
        tol = DEDUP_TOL * max(S.diameter(), 1e-300)
    nodes = [np.array(p) for p in curve.nodes]
    boxes = list(curve.boxes)
    changed = True
    while changed and len(boxes) > 1:
        changed = False
        for j in range(len(boxes)):
            a, b = nodes[j], nodes[j + 1]
            if np.linalg.norm(b - a) > tol:
                continue
            last = len(boxes) - 1
            # keep a, segment j+1 now starts at a and stays in boxes[j+1]
            if j < last and j + 1 < len(nodes) - 1 and S.contains(boxes[j + 1], a):
                del nodes[j + 1]
                del boxes[j]
                changed = True
                break
            # keep b, segment j-1 now ends at b and stays in boxes[j-1]
            if j > 0 and S.contains(boxes[j - 1], b):
                del nodes[j]
                del boxes[j]
                changed = True
                break
            # replace both by one point in boxes[j-1] & boxes[j+1]
            if 0 < j < last:
                both = box_intersection(S[boxes[j - 1]], S[boxes[j + 1]])
                if both is not None:
                    nodes[j] = both.clip(a)
                    del nodes[j + 1]
                    del boxes[j]
                    changed = True
                    break
    return PolygonalCurve(np.array(nodes), boxes)


def _solve_nodes(nodes0: np.ndarray, boxes: list, S: BoxSet, tol: float):
    """Minimum-length nodes for a fixed box sequence (endpoints fixed)."""
    N = len(boxes)
    d = S.dim
    ks = np.asarray(boxes)
    lo = np.maximum(S.L[ks[:-1]], S.L[ks[1:]])
    hi = np.minimum(S.U[ks[:-1]], S.U[ks[1:]])
    if np.any(lo > hi):
        raise ValueError("consecutive boxes in the sequence do not intersect")
    b = conic.ConicBuilder()
    y = b.add_variables((N - 1) * d, lb=lo.ravel(), ub=hi.ravel()).reshape(N - 1, d)
    t = b.add_variables(N, lb=0.0)
    b.add_linear_cost(t, 1.0)
    b.stages = (N, d + 1)
    dim = d + 1
    rows, cols, vals = [], [], []
    g = np.zeros(N * dim)
    for j in range(N):
        r = j * dim
        rows.append(r)
        cols.append(t[j])
        vals.append(1.0)
        for c in range(d):
            # y_j - y_{j-1}, with constant endpoints moved into g
            if j < N - 1:
                rows.append(r + 1 + c)
                cols.append(y[j, c])
                vals.append(1.0)
            else:
                g[r + 1 + c] += nodes0[-1, c]
            if j > 0:
                rows.append(r + 1 + c)
                cols.append(y[j - 1, c])
                vals.append(-1.0)
            else:
                g[r + 1 + c] -= nodes0[0, c]
    b.add_soc(rows, cols, vals, g, dim=dim)
    sol = conic.solve_or_raise(b.build(), tol, "polygonal shortening")
    inner = np.minimum(np.maximum(sol.x[y], lo), hi)
    return _polish(np.vstack([nodes0[:1], inner, nodes0[-1:]]), lo, hi)


def _polish(nodes, lo, hi, iters=20):
    """Newton refinement of the interior-point nodes. The length is flat
    along an optimal straight run, so the solver only pins those nodes to
    about sqrt(tol); here coordinates on a bound stay put and the rest take
    damped Newton steps on the exact length until it stops decreasing."""
    Y = nodes.copy()
    n, d = Y.shape[0] - 2, Y.shape[1]
    if n == 0:
        return Y
    gap = 1e-12 * (1.0 + np.abs(Y).max())

    def length(Z):
        return np.linalg.norm(np.diff(Z, axis=0), axis=1).sum()

    best = length(Y)
    for _ in range(iters):
        V = np.diff(Y, axis=0)
        r = np.linalg.norm(V, axis=1)
        if r.min() <= 1e6 * gap:
            break
        U = V / r[:, None]
        g = U[:-1] - U[1:]
        # a coordinate on a bound is fixed when the gradient pushes it outward
        free = ~(((Y[1:-1] - lo) <= gap) & (g > 0) | ((hi - Y[1:-1]) <= gap) & (g < 0))
        grad = g[free]
        if grad.size == 0 or np.abs(grad).max() <= 1e-15:
            break
        H = np.zeros((n * d, n * d))
        for s in range(n + 1):
            Hs = (np.eye(d) - np.outer(U[s], U[s])) / r[s]
            for a in (s - 1, s):
                if 0 <= a < n:
                    H[a * d:(a + 1) * d, a * d:(a + 1) * d] += Hs
            if 1 <= s < n:
                H[(s - 1) * d:s * d, s * d:(s + 1) * d] -= Hs
                H[s * d:(s + 1) * d, (s - 1) * d:s * d] -= Hs
        f = free.ravel()
        Hf = H[np.ix_(f, f)]
        # straight runs make H singular along the run; least squares picks the
        # minimum-norm step, which leaves nodes where they are along the line
        step = np.zeros(n * d)
        step[f] = -np.linalg.lstsq(Hf, grad, rcond=1e-8)[0]
        step = step.reshape(n, d)
        # projected backtracking: clip onto the junction boxes
        t = 1.0
        for _ in range(40):
            Z = Y.copy()
            Z[1:-1] = np.clip(Y[1:-1] + t * step, lo, hi)
            if length(Z) < best:
                break
            t *= 0.5
        else:
            break
        Y, best = Z, length(Z)
    return Y


def optimal_curve(boxes: list, p_init, p_term, S: BoxSet,
                  tol: float = conic.TOL_SHORTENING) -> PolygonalCurve:
    """Deterministic minimum-length curve through a feasible box sequence,
    depending only on the sequence and the endpoints."""
    d = S.dim
    nodes = np.zeros((len(boxes) + 1, d))
    nodes[0] = p_init
    nodes[-1] = p_term
    cur = PolygonalCurve(nodes, boxes)
    for _ in range(len(boxes) + 1):
        if cur.N == 1:
            return cur
        cur_nodes = _solve_nodes(cur.nodes, cur.boxes, S, tol)
        merged = dedup(PolygonalCurve(cur_nodes, cur.boxes), S)
        if merged.N == cur.N:
            return merged
        cur = merged
    return cur


def shorten_fixed_sequence(curve: PolygonalCurve, S: BoxSet,
                           tol: float = conic.TOL_SHORTENING) -> PolygonalCurve:
    """Minimizes curve length over the nodes with the box sequence fixed,
    then merges coincident nodes. Never returns a longer curve."""
    cur = curve
    for _ in range(curve.N + 1):
        if cur.N == 1:
            return cur
        nodes = _solve_nodes(cur.nodes, cur.boxes, S, tol)
        new = PolygonalCurve(nodes, cur.boxes)
        if new.length() > cur.length():
            new = cur
        merged = dedup(new, S)
        if merged.N == new.N:
            return merged
        cur = merged
    return cur


def insertion_test(curve: PolygonalCurve, j: int, k: int, S: BoxSet,
                   active_tol: float = ACTIVE_TOL, norm_tol: float = NORM_TOL) -> InsertionCertificate:
    """Checks whether splicing box k at interior node j (1 <= j <= N-1)
    strictly shortens the curve, by testing dual feasibility of the split
    problem at z1 = z2 = y_j."""
    if not 1 <= j <= curve.N - 1:
        raise IndexError("node index must be interior")
    a, y, b = curve.nodes[j - 1], curve.nodes[j], curve.nodes[j + 1]
    n1 = np.linalg.norm(y - a)
    n2 = np.linalg.norm(b - y)
    if n1 == 0 or n2 == 0:
        raise ValueError("zero-length segment next to node; dedup the curve first")
    lam1 = (y - a) / n1
    lam2 = (b - y) / n2
    box1 = box_intersection(S[curve.boxes[j - 1]], S[k])
    box2 = box_intersection(S[k], S[curve.boxes[j]])
    if box1 is None or box2 is None:
        raise ValueError(f"box {k} does not contain node {j}")

    def inactive(bound):
        return np.abs(y - bound) > active_tol * (1 + np.abs(bound))

    d = y.size
    c1 = np.full(d, -np.inf)
    c2 = np.full(d, np.inf)
    # first split box: lambda >= lam1 where the lower bound is slack,
    # lambda <= lam1 where the upper bound is slack
    c1 = np.where(inactive(box1.l), np.maximum(c1, lam1), c1)
    c2 = np.where(inactive(box1.u), np.minimum(c2, lam1), c2)
    # second split box, signs mirrored
    c2 = np.where(inactive(box2.l), np.minimum(c2, lam2), c2)
    c1 = np.where(inactive(box2.u), np.maximum(c1, lam2), c1)
    lam = np.minimum(c2, np.maximum(c1, 0.0))
    infeasible_bounds = bool(np.any(c1 > c2 + norm_tol))
    insert = infeasible_bounds or float(np.linalg.norm(lam)) > 1 + norm_tol
    return InsertionCertificate(j, k, lam1, lam2, c1, c2, lam, insert)


def improve_sequence(curve: PolygonalCurve, S: BoxSet, active_tol: float = ACTIVE_TOL,
                     norm_tol: float = NORM_TOL) -> tuple[PolygonalCurve, bool]:
    """Splices, at every interior node, the stabbing box with the largest
    certificate norm among those that certify a shortening."""
    tol = DEDUP_TOL * max(S.diameter(), 1e-300)
    seg = curve.segment_lengths()
    picks = {}
    for j in range(1, curve.N):
        if seg[j - 1] <= tol or seg[j] <= tol:
            continue
        best = None
        for k in S.stab(curve.nodes[j]):
            if k == curve.boxes[j - 1] or k == curve.boxes[j]:
                continue
            cert = insertion_test(curve, j, k, S, active_tol, norm_tol)
            if cert.insert and (best is None or cert.score > best.score):
                best = cert
        if best is not None:
            picks[j] = best.k
    if not picks:
        return curve, False
    nodes = [curve.nodes[0]]
    boxes = []
    for j in range(1, curve.N + 1):
        boxes.append(curve.boxes[j - 1])
        if j in picks:
            nodes.append(curve.nodes[j])
            boxes.append(picks[j])
        nodes.append(curve.nodes[j])
    return PolygonalCurve(np.array(nodes), boxes), True


@dataclass
class PolygonalResult:
    curve: PolygonalCurve
    iterations: int
    insertions: int
    lengths: list = field(default_factory=list)
    initial: PolygonalCurve | None = None


def polygonal_phase(G: LineGraph, p_init, p_term, max_iter: int | None = None,
                    tol: float = conic.TOL_SHORTENING) -> PolygonalResult | None:
    """Shortest path in the line graph followed by alternating shortening and
    box insertion. Returns None when the endpoints are not connected."""
    S = G.boxes
    path = shortest_box_path(G, p_init, p_term)
    if path is None:
        return None
    start = merge_repeated_boxes(PolygonalCurve(path.nodes, path.boxes))
    curve = shorten_fixed_sequence(start, S, tol)
    lengths = [start.length(), curve.length()]
    cap = 2 * S.K + 10 if max_iter is None else max_iter
    iterations = insertions = 0
    while True:
        spliced, inserted = improve_sequence(curve, S)
        if not inserted:
            break
        if iterations >= cap:
            raise IterationLimitError(f"polygonal phase did not converge in {cap} iterations")
        new = shorten_fixed_sequence(spliced, S, tol)
        if new.length() >= curve.length() * (1 - 1e-12):
            # certificate fired inside solver noise; nothing left to gain
            log.debug("insertion round %d gave no shortening; stopping", iterations + 1)
            break
        iterations += 1
        insertions += spliced.N - curve.N
        lengths.append(new.length())
        curve = new
    return PolygonalResult(curve=curve, iterations=iterations, insertions=insertions,
                           lengths=lengths, initial=start)
