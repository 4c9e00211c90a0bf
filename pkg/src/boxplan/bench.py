"""Timing study on random grid scenes, one CSV row per grid side."""
from __future__ import annotations

import csv
import io
import time

from .planner import SafeSet, plan
from .scenes import connected_grid, grid_query

COLUMNS = ["P", "K", "seed", "V", "E", "offline_s", "polygonal_s", "smooth_s", "N",
           "polygonal_iters", "insertions", "smooth_iters", "first_cost", "cost"]


def bench_side(P: int, seed: int = 0) -> dict:
    S_boxes, used = connected_grid(P, seed)
    t0 = time.perf_counter()
    S = SafeSet.from_boxset(S_boxes)
    offline = time.perf_counter() - t0
    p_init, p_term, T, alpha = grid_query(P)
    r = plan(S, p_init, p_term, T, alpha)
    return {
        "P": P, "K": S.K, "seed": used, "V": S.graph.num_vertices, "E": S.graph.num_edges,
        "offline_s": offline, "polygonal_s": r.times["polygonal"], "smooth_s": r.times["smooth"],
        "N": r.path.N, "polygonal_iters": r.polygonal.iterations, "insertions": r.polygonal.insertions,
        "smooth_iters": r.smooth.iterations, "first_cost": r.smooth.first_cost, "cost": r.cost,
    }


def run(sides, seed: int = 0, out=None) -> list[dict]:
    """Runs every side in order and writes the CSV to ``out`` (a text
    stream) as rows complete."""
    rows = []
    writer = csv.DictWriter(out, COLUMNS) if out is not None else None
    if writer:
        writer.writeheader()
    for P in sides:
        row = bench_side(int(P), seed)
        rows.append(row)
        if writer:
            writer.writerow(_fmt_row(row))
            out.flush()
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, COLUMNS)
    w.writeheader()
    for row in rows:
        w.writerow(_fmt_row(row))
    return buf.getvalue()


def _fmt_row(row: dict) -> dict:
    return {k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()}
