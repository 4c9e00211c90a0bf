"""Command-line interface: ``boxplan <command> ...``.

Exit status is 0 on success, 2 when ``plan`` certifies that no path exists,
and 1 for any error (bad flags, malformed files, dimension mismatches).
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench, io, oracle, plot, scenes
from .geometry import DimensionError
from .linegraph import build_line_graph, optimize_representative_points
from .planner import SafeSet, plan
from .smooth import Query, SmoothParams

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    # argparse uses status 2 for usage errors; 2 is reserved for "infeasible"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not np.all(np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"non-finite value in {text!r}")
    return v


def _deriv(text: str):
    # "i:v1,v2,..." -> (i, vector)
    order, sep, vec = text.partition(":")
    if not sep or not order.strip().isdigit():
        raise argparse.ArgumentTypeError(f"expected ORDER:V1,V2,..., got {text!r}")
    return int(order), _vector(vec)


def _sides(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_preprocess(args) -> int:
    S = io.load_scene(args.scene)
    G = build_line_graph(S)
    if not args.no_optimize:
        optimize_representative_points(G)
    io.save_cache(args.output, G)
    print(f"K={S.K} V={G.num_vertices} E={G.num_edges} -> {args.output}")
    return EXIT_OK


def cmd_plan(args) -> int:
    G = io.load_cache(args.cache)
    S = SafeSet(G.boxes, None, graph=G)
    init_derivs = dict(args.init_deriv or [])
    term_derivs = dict(args.term_deriv or [])
    params = SmoothParams(degree=args.degree) if args.degree else None
    r = plan(S, args.init, args.term, args.T, args.alpha, init_derivs, term_derivs, params)
    if not r.feasible:
        print("infeasible: the endpoints are not connected through the safe boxes")
        return EXIT_INFEASIBLE
    io.save_path(args.output, r.path, S.boxes, r.query.p_init, r.query.p_term, args.alpha,
                 init_derivs, term_derivs)
    print(f"N={r.path.N} cost={r.cost:.10g} polygonal_iters={r.polygonal.iterations} "
          f"smooth_iters={r.smooth.iterations} -> {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    f = io.load_path(args.path)
    t = args.t
    if not 0 <= t <= f.path.T:
        raise ValueError(f"time {t} outside [0, {f.path.T}]")
    for i in range(f.path.D + 1):
        v = f.path(t, i)
        print(f"p{i}(t) = " + " ".join(repr(float(x)) for x in v))
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.kind == "grid":
        S = scenes.gen_grid(args.side, args.seed)
    else:
        par = scenes.VillageParams(walk_length=args.walk_length, anchor_spacing=args.anchor_spacing,
                                   ceiling=args.ceiling, radius=args.radius)
        S = scenes.gen_village(args.side, args.seed, par).boxes
    io.save_scene(args.output, S)
    print(f"K={S.K} d={S.dim} -> {args.output}")
    return EXIT_OK


def cmd_plot(args) -> int:
    S = io.load_scene(args.scene)
    path = None
    if args.path:
        f = io.load_path(args.path)
        if f.path.dim != S.dim:
            raise DimensionError(f"path is {f.path.dim}-D, scene is {S.dim}-D")
        path = f.path
    plot.save_svg(args.output, S, path, controls=not args.no_controls)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.output:
        with open(args.output, "w", newline="") as fh:
            bench.run(args.sides, args.seed, fh)
    else:
        bench.run(args.sides, args.seed, sys.stdout)
    return EXIT_OK


def cmd_verify(args) -> int:
    f = io.load_path(args.path, validate=False)
    bad = f.violations()
    if args.scene:
        S = io.load_scene(args.scene)
        bad += f.path.violations(S)
    for msg in bad:
        print(msg)
    print("ok" if not bad else f"{len(bad)} violation(s)")
    if bad:
        return EXIT_ERROR
    if args.oracle:
        if not args.scene:
            raise ValueError("--oracle needs --scene")
        query = Query(f.p_init, f.p_term, f.T, f.alpha, dict(f.init_derivs), dict(f.term_derivs))
        params = SmoothParams(degree=f.path.M)
        ref = oracle.enumerate_plan(S, query, params=params)
        if ref is None:
            print("oracle: no feasible box sequence")
            return EXIT_ERROR
        cost = f.path.cost(f.alpha)
        gap = (cost - ref.cost) / max(abs(ref.cost), 1e-300)
        print(f"oracle: best cost {ref.cost:.10g} over {ref.evaluated} sequences, "
              f"sequence {list(ref.sequence)}; path cost {cost:.10g}, relative gap {gap:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="boxplan", description="Smooth safe path planning through axis-aligned boxes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="build and optimize the line graph of a scene")
    s.add_argument("scene")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--no-optimize", action="store_true", help="keep intersection centres as representative points")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("plan", help="plan a path with a preprocessed scene")
    s.add_argument("cache")
    s.add_argument("--init", type=_vector, required=True)
    s.add_argument("--term", type=_vector, required=True)
    s.add_argument("-T", type=float, required=True, help="final time")
    s.add_argument("--alpha", type=_vector, required=True, help="weights of derivatives 1..D")
    s.add_argument("--init-deriv", type=_deriv, action="append", metavar="I:V", help="initial derivative")
    s.add_argument("--term-deriv", type=_deriv, action="append", metavar="I:V", help="terminal derivative")
    s.add_argument("--degree", type=int, help="Bezier degree (default 2D+1)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("eval", help="evaluate a path and its derivatives")
    s.add_argument("path")
    s.add_argument("--t", type=float, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen", help="generate a benchmark scene")
    s.add_argument("kind", choices=["grid", "village"])
    s.add_argument("--side", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    d = scenes.VillageParams()
    s.add_argument("--walk-length", type=int, default=d.walk_length)
    s.add_argument("--anchor-spacing", type=int, default=d.anchor_spacing)
    s.add_argument("--ceiling", type=float, default=d.ceiling)
    s.add_argument("--radius", type=float, default=d.radius)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("plot", help="draw a scene and optionally a path as SVG")
    s.add_argument("scene")
    s.add_argument("path", nargs="?")
    s.add_argument("--no-controls", action="store_true")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("bench", help="timing table on grid scenes as CSV")
    s.add_argument("--sides", type=_sides, default=[5, 10, 20, 40])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("verify", help="check a path file (and its safety in a scene)")
    s.add_argument("path")
    s.add_argument("--scene")
    s.add_argument("--oracle", action="store_true",
                   help=f"compare with exhaustive sequence search (at most {oracle.MAX_BOXES} boxes)")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.FileFormatError, DimensionError, ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
