"""Scene generators.

Randomness comes from ``numpy.random.Generator(PCG64(seed))``, so a scene
is a pure function of its parameters and seed on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxSet


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def gen_grid(P: int, seed: int = 0) -> BoxSet:
    """P x P boxes centred on the integer grid {1..P}^2.

    Each box is elongated horizontally or vertically with probability 1/2;
    its short side is U[0, 0.5] and its long side U[0, 2]. The sampled values
    are half-extents (distance from centre to face); read as full widths the
    scenes come out far sparser than the reference line-graph sizes. Box k
    sits at centre (k // P + 1, k % P + 1).
    """
    if P < 2:
        raise ValueError("grid side must be at least 2")
    rng = rng_for(seed)
    K = P * P
    horizontal = rng.random(K) < 0.5
    short = rng.uniform(0.0, 0.5, K)
    long = rng.uniform(0.0, 2.0, K)
    k = np.arange(K)
    centers = np.stack([k // P + 1, k % P + 1], axis=1).astype(float)
    half = np.where(horizontal[:, None], np.stack([long, short], 1), np.stack([short, long], 1))
    return BoxSet(centers - half, centers + half)


def grid_query(P: int):
    """Endpoints, final time and weights of the scaling study."""
    return np.array([1.0, 1.0]), np.array([float(P), float(P)]), float(P), (0.0, 1.0, 1.0)


def connected_grid(P: int, seed: int = 0, max_tries: int = 1000) -> tuple[BoxSet, int]:
    """First grid scene, trying seeds seed, seed+1, ..., whose corner
    endpoints are connected. Returns (scene, seed used)."""
    from .oracle import flood_connected

    p_init, p_term, _, _ = grid_query(P)
    for s in range(seed, seed + max_tries):
        S = gen_grid(P, s)
        if flood_connected(S, p_init, p_term):
            return S, s
    raise RuntimeError(f"no connected grid scene in {max_tries} seeds")


@dataclass
class VillageParams:
    walk_length: int = 5
    anchor_spacing: int = 5
    building_height: float = 5.0
    ceiling: float = 6.0
    radius: float = 0.1
    bush_side: tuple = (0.2, 0.7)
    foliage_side: float = 0.8
    foliage_center_height: tuple = (1.0, 4.5)
    trunk_side: float = 0.2


@dataclass
class Village:
    boxes: BoxSet
    buildings: set            # occupied cells (i, j), 1-based lower-left corners
    cell_kind: dict = field(default_factory=dict)   # (i, j) -> "building" | "bush" | "tree"
    box_cell: list = field(default_factory=list)    # cell of every box
    params: VillageParams = field(default_factory=VillageParams)


def gen_village(P: int = 50, seed: int = 0, params: VillageParams | None = None) -> Village:
    """3-D village on (P-1)^2 unit cells: buildings from random walks, a bush
    or a tree in every other cell, five safe boxes per free cell.

    Cell (i, j) spans [i, i+1] x [j, j+1]. Buildings grow by a random walk of
    ``walk_length`` unit steps (uniform over the four neighbours, clipped to
    the grid) from each anchor cell in {s, 2s, ...} with s the anchor spacing.
    Obstacles are inflated by the collision radius; buildings are kept that
    radius inside their cells so that free cells can use their full extent.
    """
    if P < 10:
        raise ValueError("village side must be at least 10")
    par = params or VillageParams()
    rng = rng_for(seed)
    n = P - 1
    buildings = set()
    anchors = range(par.anchor_spacing, P - par.anchor_spacing + 1, par.anchor_spacing)
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    for ai in anchors:
        for aj in anchors:
            i, j = ai, aj
            buildings.add((i, j))
            for _ in range(par.walk_length):
                di, dj = steps[rng.integers(4)]
                i = min(max(i + di, 1), n)
                j = min(max(j + dj, 1), n)
                buildings.add((i, j))
    r = par.radius
    H = par.ceiling
    L, U, kinds, owner = [], [], {}, []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if (i, j) in buildings:
                kinds[(i, j)] = "building"
                continue
            cx, cy = i + 0.5, j + 0.5
            if rng.random() < 0.5:
                kinds[(i, j)] = "bush"
                side = rng.uniform(*par.bush_side)
                half = side / 2 + r
                low_top = H              # side boxes span the full height
                top_floor = 2 * side + r
            else:
                kinds[(i, j)] = "tree"
                zc = rng.uniform(*par.foliage_center_height)
                half = par.trunk_side / 2 + r
                low_top = zc - par.foliage_side / 2 - r   # under the foliage
                top_floor = zc + par.foliage_side / 2 + r
            cell = [
                ([i, j, 0.0], [cx - half, j + 1, low_top]),        # west
                ([cx + half, j, 0.0], [i + 1, j + 1, low_top]),    # east
                ([i, j, 0.0], [i + 1, cy - half, low_top]),        # south
                ([i, cy + half, 0.0], [i + 1, j + 1, low_top]),    # north
                ([i, j, top_floor], [i + 1, j + 1, H]),            # top
            ]
            for lo, hi in cell:
                L.append(lo)
                U.append(hi)
                owner.append((i, j))
    boxes = BoxSet(np.array(L), np.array(U))
    return Village(boxes, buildings, kinds, owner, par)


def village_query(P: int = 50):
    """Take-off and landing corners, final time and snap-only weights, with
    zero velocity, acceleration and jerk at both ends."""
    zeros = np.zeros(3)
    derivs = {1: zeros, 2: zeros, 3: zeros}
    return (np.array([1.0, 1.0, 0.0]), np.array([float(P), float(P), 0.0]), float(P),
            (0.0, 0.0, 0.0, 1.0), derivs, dict(derivs))


def running_example():
    """Small 2-D demo scene: nine boxes whose line graph has 11 vertices and
    20 edges. The shortest box path misses one box that the polygonal phase
    splices in. The jerk weight makes the planned cost come out near one.

    Returns (boxes, p_init, p_term, T, alpha)."""
    L = [[1.0, 1.5], [0.5, 4.0], [1.5, 2.5], [1.0, 2.0], [4.5, 4.0],
         [5.5, 2.0], [4.5, 3.5], [5.5, 1.0], [2.5, 3.5]]
    U = [[2.5, 2.5], [3.5, 7.0], [4.5, 3.5], [3.5, 5.0], [6.5, 4.5],
         [8.0, 4.0], [5.0, 6.0], [7.5, 2.0], [3.5, 5.5]]
    return (BoxSet(np.array(L), np.array(U)), np.array([1.375, 1.75]), np.array([7.0, 1.25]),
            1.0, (0.0, 0.0, 1.7e-4))
