"""End-to-end planning: offline preprocessing once, then online queries."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxSet
from .linegraph import LineGraph, build_line_graph, optimize_representative_points
from .polygonal import PolygonalResult, polygonal_phase
from .smooth import PiecewiseBezierPath, Query, SmoothParams, SmoothResult, smooth_phase


class SafeSet:
    """Safe boxes plus their preprocessed line graph.

    >>> S = SafeSet([[0, 0], [1, 0]], [[2, 1], [3, 1]])
    >>> S.graph.num_vertices, S.graph.num_edges
    (1, 0)
    """

    def __init__(self, L, U, optimize: bool = True, graph: LineGraph | None = None):
        self.boxes = L if isinstance(L, BoxSet) else BoxSet(L, U)
        t0 = time.perf_counter()
        if graph is None:
            graph = build_line_graph(self.boxes)
            if optimize:
                optimize_representative_points(graph)
        self.graph = graph
        self.preprocess_time = time.perf_counter() - t0

    @classmethod
    def from_boxset(cls, boxes: BoxSet, optimize: bool = True) -> SafeSet:
        return cls(boxes, None, optimize=optimize)

    @property
    def K(self) -> int:
        return self.boxes.K

    @property
    def dim(self) -> int:
        return self.boxes.dim


@dataclass
class PlanResult:
    query: Query
    polygonal: PolygonalResult | None
    smooth: SmoothResult | None
    times: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.polygonal is not None

    @property
    def path(self) -> PiecewiseBezierPath | None:
        return None if self.smooth is None else self.smooth.path

    @property
    def cost(self) -> float:
        return np.inf if self.smooth is None else self.smooth.cost

    def __call__(self, t, order: int = 0):
        if self.path is None:
            raise ValueError("planning problem is infeasible; there is no path to evaluate")
        return self.path(t, order)


def plan(S: SafeSet, p_init, p_term, T: float, alpha, init_derivs=None, term_derivs=None,
         params: SmoothParams | None = None) -> PlanResult:
    """Plans a smooth safe path; ``result.feasible`` is False exactly when the
    endpoints cannot be connected inside the safe set."""
    query = Query(p_init, p_term, T, alpha, dict(init_derivs or {}), dict(term_derivs or {}))
    if query.dim != S.dim:
        raise ValueError(f"endpoints have dimension {query.dim}, safe set has {S.dim}")
    t0 = time.perf_counter()
    poly = polygonal_phase(S.graph, query.p_init, query.p_term)
    t1 = time.perf_counter()
    times = {"polygonal": t1 - t0}
    if poly is None:
        return PlanResult(query, None, None, times)
    sm = smooth_phase(poly.curve, query, S.boxes, params)
    times["smooth"] = time.perf_counter() - t1
    return PlanResult(query, poly, sm, times)
