"""Brute-force reference planners for small scenes.

Nothing here reuses the sweep, the line graph or the certificates; the
checks are meant to be independent of the planner's own machinery.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import conic
from .geometry import BoxSet
from .polygonal import PolygonalCurve, optimal_curve
from .smooth import Query, SmoothParams, smooth_phase

MAX_BOXES = 8
MAX_LENGTH = 10
MAX_SEQUENCES = 200_000


class GuardError(ValueError):
    pass


def all_pairs_intersections(S: BoxSet) -> list[tuple[int, int]]:
    out = []
    for k in range(S.K):
        for l in range(k + 1, S.K):
            if np.all(np.maximum(S.L[k], S.L[l]) <= np.minimum(S.U[k], S.U[l])):
                out.append((k, l))
    return out


def linear_stab(S: BoxSet, x) -> list[int]:
    x = np.asarray(x, dtype=float)
    return [k for k in range(S.K) if np.all(S.L[k] <= x) and np.all(x <= S.U[k])]


def flood_connected(S: BoxSet, p_init, p_term) -> bool:
    """Breadth-first search over the box intersection graph."""
    start = linear_stab(S, p_init)
    goal = set(linear_stab(S, p_term))
    if not start or not goal:
        return False
    nbrs = [[] for _ in range(S.K)]
    for k, l in all_pairs_intersections(S) if S.K <= 600 else _pairs_fast(S):
        nbrs[k].append(l)
        nbrs[l].append(k)
    seen = set(start)
    todo = deque(start)
    while todo:
        k = todo.popleft()
        if k in goal:
            return True
        for l in nbrs[k]:
            if l not in seen:
                seen.add(l)
                todo.append(l)
    return False


def _pairs_fast(S: BoxSet):
    # row-blocked all-pairs, still independent of the sweep
    L, U = S.L, S.U
    for k in range(S.K - 1):
        ok = np.all(np.maximum(L[k], L[k + 1:]) <= np.minimum(U[k], U[k + 1:]), axis=1)
        for l in np.nonzero(ok)[0]:
            yield k, k + 1 + int(l)


def feasible_sequences(S: BoxSet, p_init, p_term, L_max: int):
    """All box sequences of length <= L_max without immediate repeats that
    cover the endpoints and whose consecutive boxes intersect."""
    inter = np.zeros((S.K, S.K), dtype=bool)
    for k, l in all_pairs_intersections(S):
        inter[k, l] = inter[l, k] = True
    start = linear_stab(S, p_init)
    goal = set(linear_stab(S, p_term))
    out = []
    stack = [[k] for k in reversed(start)]
    while stack:
        seq = stack.pop()
        if seq[-1] in goal:
            out.append(tuple(seq))
            if len(out) > MAX_SEQUENCES:
                raise GuardError("too many sequences to enumerate")
        if len(seq) < L_max:
            for l in reversed(range(S.K)):
                if l != seq[-1] and inter[seq[-1], l]:
                    stack.append(seq + [l])
    return sorted(out, key=lambda s: (len(s), s))


@dataclass
class EnumerationResult:
    cost: float
    sequence: tuple
    evaluated: int
    costs: dict


def sequence_cost(seq, query: Query, S: BoxSet, params: SmoothParams | None = None,
                  memo: dict | None = None) -> float:
    """Shortest curve through the sequence, then the smooth phase on it.

    Many sequences shorten to the same merged curve; ``memo`` maps merged
    curves (boxes and exact nodes) to their smooth cost."""
    curve = optimal_curve(list(seq), query.p_init, query.p_term, S)
    key = (tuple(curve.boxes), curve.nodes.tobytes())
    if memo is not None and key in memo:
        return memo[key]
    try:
        cost = smooth_phase(curve, query, S, params).cost
    except conic.ConicSolveError:
        cost = np.inf
    if memo is not None:
        memo[key] = cost
    return cost


def enumerate_plan(S: BoxSet, query: Query, L_max: int | None = None,
                   params: SmoothParams | None = None) -> EnumerationResult | None:
    """Best smooth-phase cost over every feasible box sequence; None when no
    sequence covers both endpoints."""
    if S.K > MAX_BOXES:
        raise GuardError(f"enumeration limited to {MAX_BOXES} boxes")
    L_max = S.K + 2 if L_max is None else L_max
    if L_max > MAX_LENGTH:
        raise GuardError(f"enumeration limited to sequences of length {MAX_LENGTH}")
    seqs = feasible_sequences(S, query.p_init, query.p_term, L_max)
    if not seqs:
        return None
    costs, memo = {}, {}
    for seq in seqs:
        # the merged curve may drop boxes; evaluate what is actually traversed
        costs[seq] = sequence_cost(seq, query, S, params, memo)
    best = min(seqs, key=lambda s: (costs[s], len(s), s))
    return EnumerationResult(costs[best], best, len(seqs), costs)


def resolve_with_insertion(curve: PolygonalCurve, j: int, k: int, S: BoxSet,
                           tol: float = conic.TOL_SHORTENING) -> float:
    """Length decrease obtained by splicing box k at node j and re-solving
    for the minimum-length curve through the new sequence."""
    if not S.contains(k, curve.nodes[j]):
        raise ValueError(f"box {k} does not contain node {j}")
    boxes = curve.boxes[:j] + [k] + curve.boxes[j:]
    new = optimal_curve(boxes, curve.nodes[0], curve.nodes[-1], S, tol)
    return curve.length() - new.length()
