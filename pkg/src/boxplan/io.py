"""Scene, path and preprocessing-cache files.

Every file is canonical JSON: sorted keys, no insignificant whitespace,
floats written with 17 significant digits. Writing the same object twice
gives byte-identical files, and reading a file back gives bitwise-equal
arrays.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .geometry import BoxSet
from .linegraph import LineGraph
from .smooth import PiecewiseBezierPath

VERSION = 1
SCENE_FORMAT = "boxplan-scene"
PATH_FORMAT = "boxplan-path"
CACHE_FORMAT = "boxplan-cache"
DURATION_TOL = 1e-9


class FileFormatError(ValueError):
    pass


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise FileFormatError(f"cannot store non-finite value {x!r}")
    s = "%.17g" % x
    # keep a float marker so integers and floats stay distinct on reload
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, out: list):
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON text of a tree of dicts, lists, numbers and arrays."""
    out = []
    _encode(obj, out)
    return "".join(out) + "\n"


def _write(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


def _read(path, fmt: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as err:
        raise FileFormatError(f"{path}: {err}") from None
    except json.JSONDecodeError as err:
        raise FileFormatError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(data, dict) or data.get("format") != fmt:
        raise FileFormatError(f"{path}: not a {fmt} file")
    if data.get("version") != VERSION:
        raise FileFormatError(f"{path}: unsupported version {data.get('version')!r}")
    return data


def _array(data: dict, key: str, ndim: int, dtype=float) -> np.ndarray:
    if key not in data:
        raise FileFormatError(f"missing field {key!r}")
    try:
        a = np.array(data[key], dtype=dtype)
    except (TypeError, ValueError):
        raise FileFormatError(f"field {key!r} is not a rectangular numeric array") from None
    if a.ndim != ndim and a.size:
        raise FileFormatError(f"field {key!r} should have {ndim} dimensions")
    return a


# ---- scenes

def scene_to_dict(S: BoxSet) -> dict:
    return {"format": SCENE_FORMAT, "version": VERSION, "dim": S.dim, "L": S.L, "U": S.U}


def scene_from_dict(data: dict) -> BoxSet:
    L = _array(data, "L", 2)
    U = _array(data, "U", 2)
    d = data.get("dim")
    if not isinstance(d, int) or L.shape[1:] != (d,) or U.shape != L.shape:
        raise FileFormatError("scene arrays do not match the declared dimension")
    try:
        return BoxSet(L, U)
    except ValueError as err:
        raise FileFormatError(f"invalid scene: {err}") from None


def save_scene(path, S: BoxSet):
    _write(path, scene_to_dict(S))


def load_scene(path) -> BoxSet:
    return scene_from_dict(_read(path, SCENE_FORMAT))


def scene_hash(S: BoxSet) -> str:
    return hashlib.sha256(dumps(scene_to_dict(S)).encode()).hexdigest()


# ---- preprocessing cache

def save_cache(path, G: LineGraph):
    """Stores the optimized line graph together with its scene, so that
    ``plan`` needs a single file."""
    _write(path, {
        "format": CACHE_FORMAT, "version": VERSION,
        "scene_hash": scene_hash(G.boxes), "scene": scene_to_dict(G.boxes),
        "pairs": G.pairs, "rep_points": G.rep_points,
        "edges": G.edges, "edge_box": G.edge_box, "weights": G.weights,
    })


def load_cache(path, scene: BoxSet | None = None) -> LineGraph:
    """Reads a cache; raises FileFormatError when it is stale, i.e. when
    its hash does not match its embedded scene or the given one."""
    data = _read(path, CACHE_FORMAT)
    S = scene_from_dict(data.get("scene") or {})
    h = scene_hash(S)
    if data.get("scene_hash") != h:
        raise FileFormatError(f"{path}: stale cache (hash does not match its scene)")
    if scene is not None and scene_hash(scene) != h:
        raise FileFormatError(f"{path}: stale cache (built for a different scene)")
    d = S.dim
    pairs = _array(data, "pairs", 2, np.int64).reshape(-1, 2)
    rep = _array(data, "rep_points", 2).reshape(-1, d)
    edges = _array(data, "edges", 2, np.int64).reshape(-1, 2)
    edge_box = _array(data, "edge_box", 1, np.int64)
    weights = _array(data, "weights", 1)
    if rep.shape[0] != pairs.shape[0] or edge_box.shape[0] != edges.shape[0] \
            or weights.shape[0] != edges.shape[0]:
        raise FileFormatError(f"{path}: inconsistent graph arrays")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= S.K):
        raise FileFormatError(f"{path}: pair refers to an unknown box")
    if edges.size and (edges.min() < 0 or edges.max() >= pairs.shape[0]):
        raise FileFormatError(f"{path}: edge refers to an unknown vertex")
    inter_l = np.maximum(S.L[pairs[:, 0]], S.L[pairs[:, 1]]) if pairs.size else np.zeros((0, d))
    inter_u = np.minimum(S.U[pairs[:, 0]], S.U[pairs[:, 1]]) if pairs.size else np.zeros((0, d))
    return LineGraph(S, pairs, inter_l, inter_u, edges, edge_box, rep, weights)


# ---- paths

def _derivs_to_json(derivs: dict) -> dict:
    return {str(i): np.asarray(v, dtype=float) for i, v in sorted(derivs.items())}


def _derivs_from_json(data) -> dict:
    try:
        return {int(i): np.array(v, dtype=float) for i, v in (data or {}).items()}
    except (TypeError, ValueError):
        raise FileFormatError("malformed boundary derivatives") from None


def save_path(path, P: PiecewiseBezierPath, S: BoxSet, p_init=None, p_term=None, alpha=(),
              init_derivs=None, term_derivs=None):
    """The file keeps the bounds of every traversed box so that safety can
    be rechecked on load without the scene."""
    segs = [{"box": k, "duration": float(t), "points": P.points[j],
             "lower": S.L[k], "upper": S.U[k]}
            for j, (k, t) in enumerate(zip(P.boxes, P.durations))]
    _write(path, {
        "format": PATH_FORMAT, "version": VERSION, "dim": P.dim, "D": P.D, "M": P.M,
        "T": P.T, "alpha": [float(a) for a in alpha],
        "p_init": P.points[0, 0] if p_init is None else np.asarray(p_init, dtype=float),
        "p_term": P.points[-1, -1] if p_term is None else np.asarray(p_term, dtype=float),
        "init_derivs": _derivs_to_json(init_derivs or {}),
        "term_derivs": _derivs_to_json(term_derivs or {}),
        "segments": segs,
    })


class PathFile:
    """A loaded path with its query data."""

    def __init__(self, path: PiecewiseBezierPath, boxes: BoxSet, T: float, alpha, p_init, p_term,
                 init_derivs, term_derivs):
        self.path = path
        self.boxes = boxes          # traversed boxes, one per segment
        self.T = T
        self.alpha = tuple(alpha)
        self.p_init = p_init
        self.p_term = p_term
        self.init_derivs = init_derivs
        self.term_derivs = term_derivs

    def violations(self) -> list[str]:
        local = PiecewiseBezierPath(range(self.path.N), self.path.durations, self.path.points, self.path.D)
        out = local.violations(self.boxes, self.p_init, self.p_term,
                               init_derivs=self.init_derivs, term_derivs=self.term_derivs)
        if abs(self.path.T - self.T) > DURATION_TOL * self.T:
            out.append(f"durations sum to {self.path.T!r}, not T = {self.T!r}")
        return out


def load_path(path, validate: bool = True) -> PathFile:
    data = _read(path, PATH_FORMAT)
    try:
        d, D, M, T = int(data["dim"]), int(data["D"]), int(data["M"]), float(data["T"])
        segs = data["segments"]
        boxes = [int(s["box"]) for s in segs]
        durations = np.array([s["duration"] for s in segs], dtype=float)
        points = np.array([s["points"] for s in segs], dtype=float)
        L = np.array([s["lower"] for s in segs], dtype=float)
        U = np.array([s["upper"] for s in segs], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise FileFormatError(f"{path}: malformed path file") from None
    if not segs or points.shape != (len(segs), M + 1, d) or L.shape != (len(segs), d):
        raise FileFormatError(f"{path}: segment arrays do not match dim={d}, M={M}")
    try:
        P = PiecewiseBezierPath(boxes, durations, points, D)
        B = BoxSet(L, U)
    except ValueError as err:
        raise FileFormatError(f"{path}: {err}") from None
    out = PathFile(P, B, T, data.get("alpha", ()),
                   np.array(data["p_init"], dtype=float), np.array(data["p_term"], dtype=float),
                   _derivs_from_json(data.get("init_derivs")), _derivs_from_json(data.get("term_derivs")))
    if validate:
        bad = out.violations()
        if bad:
            raise FileFormatError(f"{path}: invalid path: " + "; ".join(bad))
    return out
