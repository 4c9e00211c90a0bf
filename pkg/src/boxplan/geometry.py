"""Axis-aligned boxes, pairwise intersection enumeration and point stabbing.

All boxes are closed: touching faces, edges or corners count as an
intersection. Comparisons are exact on the stored bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        l = np.array(self.l, dtype=float).reshape(-1)
        u = np.array(self.u, dtype=float).reshape(-1)
        if l.shape != u.shape or l.size == 0:
            raise DimensionError("lower and upper bounds must be nonempty vectors of equal length")
        if np.any(l > u):
            raise ValueError("box bounds must satisfy l <= u")
        l.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.l.size

    @property
    def center(self) -> np.ndarray:
        return (self.l + self.u) / 2

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.l - tol <= x) and np.all(x <= self.u + tol))

    def clip(self, x) -> np.ndarray:
        return np.minimum(np.maximum(x, self.l), self.u)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.l, other.l) and np.array_equal(self.u, other.u)

    def __hash__(self):
        return hash((self.l.tobytes(), self.u.tobytes()))


def box_intersection(a: Box, b: Box) -> Box | None:
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    l = np.maximum(a.l, b.l)
    u = np.minimum(a.u, b.u)
    if np.any(l > u):
        return None
    return Box(l, u)


class BoxSet:
    """Immutable collection of K boxes in R^d, stored as K x d bound arrays.

    Box indices are 0-based. A per-dimension sorted index of the lower
    bounds (stable argsort, ties broken by box index) backs the sweep and
    the stabbing queries.
    """

    def __init__(self, L, U):
        L = np.array(L, dtype=float)
        U = np.array(U, dtype=float)
        if L.ndim != 2 or L.shape != U.shape:
            raise DimensionError("L and U must be K x d arrays of equal shape")
        if L.shape[0] < 1 or L.shape[1] < 1:
            raise ValueError("a BoxSet needs at least one box of dimension >= 1")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(U))):
            raise ValueError("box bounds must be finite")
        if np.any(L > U):
            bad = int(np.argwhere(np.any(L > U, axis=1))[0, 0])
            raise ValueError(f"box {bad} violates l <= u")
        L.flags.writeable = False
        U.flags.writeable = False
        self.L = L
        self.U = U
        self._order = [np.argsort(L[:, i], kind="stable") for i in range(self.dim)]
        self._sorted_l = [L[o, i] for i, o in enumerate(self._order)]
        self._max_width = (U - L).max(axis=0)

    @property
    def K(self) -> int:
        return self.L.shape[0]

    @property
    def dim(self) -> int:
        return self.L.shape[1]

    def __len__(self):
        return self.K

    def __getitem__(self, k) -> Box:
        return Box(self.L[k], self.U[k])

    def __iter__(self):
        return (self[k] for k in range(self.K))

    @classmethod
    def from_boxes(cls, boxes) -> BoxSet:
        boxes = list(boxes)
        return cls([b.l for b in boxes], [b.u for b in boxes])

    def contains(self, k: int, x) -> bool:
        return bool(np.all(self.L[k] <= x) and np.all(x <= self.U[k]))

    def intersection(self, k: int, l: int) -> Box | None:
        return box_intersection(self[k], self[l])

    def diameter(self) -> float:
        return float(np.linalg.norm(self.U.max(axis=0) - self.L.min(axis=0)))

    def stab(self, x) -> list[int]:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DimensionError(f"point has dimension {x.size}, boxes have {self.dim}")
        # Any box containing x has l_i in [x_i - max_width_i, x_i] on every axis;
        # use the axis whose window holds the fewest candidates.
        best = None
        for i in range(self.dim):
            lo = np.searchsorted(self._sorted_l[i], x[i] - self._max_width[i], side="left")
            hi = np.searchsorted(self._sorted_l[i], x[i], side="right")
            if best is None or hi - lo < best[2] - best[1]:
                best = (i, lo, hi)
        i, lo, hi = best
        cand = self._order[i][lo:hi]
        inside = np.all(self.L[cand] <= x, axis=1) & np.all(x <= self.U[cand], axis=1)
        return sorted(int(k) for k in cand[inside])

    def enumerate_intersections(self) -> list[tuple[int, int, Box]]:
        """All pairs k < l of intersecting boxes with their intersection box,
        in lexicographic (k, l) order."""
        pairs = self.intersecting_pairs()
        lo = np.maximum(self.L[pairs[:, 0]], self.L[pairs[:, 1]])
        hi = np.minimum(self.U[pairs[:, 0]], self.U[pairs[:, 1]])
        return [(int(k), int(l), Box(a, b)) for (k, l), a, b in zip(pairs, lo, hi)]

    def intersecting_pairs(self) -> np.ndarray:
        """Sweep along the axis of the sorted index: box k is only compared
        with boxes whose lower bound falls in [l_k, u_k] on that axis.

        Returns an (m, 2) integer array of pairs (k, l), k < l, sorted
        lexicographically.
        """
        axis = self._sweep_axis()
        order = self._order[axis]
        sl = self._sorted_l[axis]
        su = self.U[order, axis]
        ends = np.searchsorted(sl, su, side="right")
        Ls = self.L[order]
        Us = self.U[order]
        out_a, out_b = [], []
        for pos in range(self.K):
            stop = ends[pos]
            if stop <= pos + 1:
                continue
            cand = slice(pos + 1, stop)
            ok = np.all(Ls[cand] <= Us[pos], axis=1) & np.all(Ls[pos] <= Us[cand], axis=1)
            if ok.any():
                hits = np.nonzero(ok)[0] + pos + 1
                out_a.append(np.full(hits.size, order[pos]))
                out_b.append(order[hits])
        if not out_a:
            return np.zeros((0, 2), dtype=np.int64)
        a = np.concatenate(out_a)
        b = np.concatenate(out_b)
        pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1).astype(np.int64)
        idx = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[idx]

    def _sweep_axis(self) -> int:
        # Fewest expected candidates: smallest mean width relative to the spread.
        spread = self.U.max(axis=0) - self.L.min(axis=0)
        mean_w = (self.U - self.L).mean(axis=0)
        ratio = np.where(spread > 0, mean_w / np.where(spread > 0, spread, 1.0), np.inf)
        return int(np.argmin(ratio))
