import itertools

import numpy as np
import pytest

from boxplan.geometry import BoxSet
from boxplan.linegraph import build_line_graph, shortest_box_path
from boxplan.oracle import (GuardError, enumerate_plan, feasible_sequences, flood_connected,
                            resolve_with_insertion)
from boxplan.planner import SafeSet, plan
from boxplan.polygonal import PolygonalCurve
from boxplan.smooth import Query, projection

from conftest import random_boxes


def product_sequences(S, p, q, L_max):
    """Plain product enumeration, filtered by the feasibility conditions."""
    out = []
    for n in range(1, L_max + 1):
        for seq in itertools.product(range(S.K), repeat=n):
            if not S.contains(seq[0], p) or not S.contains(seq[-1], q):
                continue
            if any(a == b or S.intersection(a, b) is None for a, b in zip(seq, seq[1:])):
                continue
            out.append(seq)
    return sorted(out, key=lambda s: (len(s), s))


def test_sequences_match_product_enumeration(rng):
    for _ in range(20):
        S = random_boxes(rng, 4, integer=True, span=4, max_side=3)
        p, q = rng.uniform(0, 5, 2), rng.uniform(0, 5, 2)
        assert feasible_sequences(S, p, q, 5) == product_sequences(S, p, q, 5)


def test_single_box_direct_solve():
    S = BoxSet([[0, 0], [3, 3]], [[2, 2], [4, 4]])
    query = Query([0.2, 0.3], [1.8, 1.1], 1.0, (0.0, 1.0))
    res = enumerate_plan(S, query, L_max=3)
    assert res.sequence == (0,)
    _, J = projection([0], [1.0], query, S)
    assert res.cost == pytest.approx(J, abs=1e-9)


def test_disconnected_infeasible():
    S = BoxSet([[0, 0], [3, 3]], [[2, 2], [4, 4]])
    query = Query([0.5, 0.5], [3.5, 3.5], 1.0, (0.0, 1.0))
    assert enumerate_plan(S, query) is None
    assert shortest_box_path(build_line_graph(S), query.p_init, query.p_term) is None


def test_guards():
    S = BoxSet(np.zeros((9, 2)), np.ones((9, 2)))
    query = Query([0.5, 0.5], [0.6, 0.6], 1.0, (1.0,))
    with pytest.raises(GuardError):
        enumerate_plan(S, query)
    S = BoxSet(np.zeros((3, 2)), np.ones((3, 2)))
    with pytest.raises(GuardError):
        enumerate_plan(S, query, L_max=11)


def test_feasibility_agrees_with_line_graph(rng):
    for _ in range(40):
        S = random_boxes(rng, int(rng.integers(2, 9)), integer=True, span=5, max_side=2)
        p, q = rng.integers(0, 11, 2) / 2.0, rng.integers(0, 11, 2) / 2.0
        has_seq = bool(feasible_sequences(S, p, q, S.K + 2))
        assert has_seq == (shortest_box_path(build_line_graph(S), p, q) is not None)
        assert has_seq == flood_connected(S, p, q)


def test_dominance_small(rng):
    done = 0
    while done < 4:
        S = random_boxes(rng, 4, integer=True, span=4, max_side=3)
        p, q = rng.uniform(0, 5, 2), rng.uniform(0, 5, 2)
        query = Query(p, q, 1.0, (0.0, 0.0, 1.0))
        ref = enumerate_plan(S, query, L_max=5)
        r = plan(SafeSet.from_boxset(S), p, q, 1.0, query.alpha)
        assert (ref is None) == (not r.feasible)
        if ref is None:
            continue
        done += 1
        assert r.cost >= ref.cost - 1e-6 * max(1.0, ref.cost)


def test_resolve_positive_on_corner():
    # L-shaped corridor; a box over the corner lets the curve cut it
    S = BoxSet([[0, 0], [2, 0], [1, 0]], [[3, 1], [3, 4], [3, 2]])
    curve = PolygonalCurve(np.array([[0.5, 0.5], [2.5, 0.5], [2.5, 3.5]]), [0, 1])
    assert resolve_with_insertion(curve, 1, 2, S) > 1e-3
    with pytest.raises(ValueError):
        resolve_with_insertion(curve, 1, 2, BoxSet([[0, 0], [2, 0], [5, 5]], [[3, 1], [3, 4], [6, 6]]))
