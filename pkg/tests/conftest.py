import numpy as np
import pytest

from boxplan.geometry import BoxSet
from boxplan.polygonal import optimal_curve


def random_boxes(rng, K, d=2, span=10.0, max_side=3.0, integer=False):
    """K random boxes in [0, span]^d. With integer=True the corners lie on a
    half-unit lattice, which makes touching faces and shared corners common."""
    if integer:
        lo = rng.integers(0, int(2 * span), (K, d)) / 2.0
        side = rng.integers(0, int(2 * max_side) + 1, (K, d)) / 2.0
    else:
        lo = rng.uniform(0, span, (K, d))
        side = rng.uniform(0, max_side, (K, d))
    return BoxSet(lo, lo + side)


def corridor(n=4, width=1.0, length=2.0):
    """A straight horizontal chain of overlapping boxes."""
    L = np.array([[i * length * 0.75, 0.0] for i in range(n)])
    U = L + [length, width]
    return BoxSet(L, U)


def local_configuration(rng, d=2):
    """Random curve optimal for its two-box sequence with a candidate box
    holding the interior node."""
    while True:
        L = rng.integers(0, 8, (3, d)) / 2.0
        U = L + rng.integers(1, 8, (3, d)) / 2.0
        S = BoxSet(L, U)
        if S.intersection(0, 1) is None:
            continue
        p = rng.uniform(S.L[0], S.U[0])
        q = rng.uniform(S.L[1], S.U[1])
        c = optimal_curve([0, 1], p, q, S)
        if c.N != 2 or not S.contains(2, c.nodes[1]):
            continue
        if min(c.segment_lengths()) < 1e-6:
            continue
        return S, c


def check_trace(res, params):
    accepted = [res.first_cost]
    for rec in res.trace:
        if np.isfinite(rec["J_tan"]):
            assert rec["J_tan"] <= rec["J_proj"] * (1 + 1e-5) + 1e-6
        if rec["accepted"]:
            accepted.append(rec["J_new"])
    assert all(b <= a for a, b in zip(accepted, accepted[1:]))
    assert res.cost == accepted[-1]
    kappas = [rec["kappa"] for rec in res.trace]
    for a, b in zip(kappas, kappas[1:]):
        assert b <= a / params.omega * (1 + 1e-12)
    assert res.iterations <= params.max_iter


def sample_safety(path, S, n=10_000, seed=0):
    t = np.random.default_rng(seed).uniform(0, path.T, n)
    t = np.concatenate([t, [0.0, path.T], np.cumsum(path.durations)[:-1]])
    x = path(t)
    k = np.asarray(path.boxes)[path.piece_index(t)]
    return np.all(x >= S.L[k] - 1e-9) and np.all(x <= S.U[k] + 1e-9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
