"""Smooth, provably safe path planning through collections of axis-aligned boxes."""
from .bezier import BezierCurve, bernstein, q_matrix
from .geometry import Box, BoxSet, box_intersection
from .linegraph import LineGraph, build_line_graph, optimize_representative_points, shortest_box_path
from .planner import PlanResult, SafeSet, plan
from .polygonal import PolygonalCurve, insertion_test, polygonal_phase
from .smooth import PiecewiseBezierPath, Query, SmoothParams, smooth_phase

__all__ = [
    "BezierCurve", "bernstein", "q_matrix",
    "Box", "BoxSet", "box_intersection",
    "LineGraph", "build_line_graph", "optimize_representative_points", "shortest_box_path",
    "PlanResult", "SafeSet", "plan",
    "PolygonalCurve", "insertion_test", "polygonal_phase",
    "PiecewiseBezierPath", "Query", "SmoothParams", "smooth_phase",
]

__version__ = "0.1.0"
