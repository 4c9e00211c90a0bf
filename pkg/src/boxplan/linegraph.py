"""Line graph of a box collection and endpoint-augmented shortest paths.

Vertices are pairs {k, l} of intersecting boxes, edges join vertices that
share a box. Each vertex carries a representative point inside its
intersection; edge weights are Euclidean distances between these points.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from . import conic
from .geometry import BoxSet, DimensionError

log = logging.getLogger(__name__)


@dataclass
class LineGraph:
    boxes: BoxSet
    pairs: np.ndarray        # (V, 2) box indices k < l, lexicographic
    inter_l: np.ndarray      # (V, d) intersection lower bounds
    inter_u: np.ndarray      # (V, d) intersection upper bounds
    edges: np.ndarray        # (E, 2) vertex ids v < w, lexicographic
    edge_box: np.ndarray     # (E,) the box shared by the two endpoint pairs
    rep_points: np.ndarray   # (V, d)
    weights: np.ndarray      # (E,)

    @property
    def num_vertices(self) -> int:
        return self.pairs.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def total_length(self, points=None) -> float:
        x = self.rep_points if points is None else points
        if self.num_edges == 0:
            return 0.0
        return float(np.linalg.norm(x[self.edges[:, 0]] - x[self.edges[:, 1]], axis=1).sum())

    def refresh_weights(self):
        if self.num_edges:
            self.weights = np.linalg.norm(
                self.rep_points[self.edges[:, 0]] - self.rep_points[self.edges[:, 1]], axis=1)
        else:
            self.weights = np.zeros(0)
        self._adjacency = None

    def vertices_of_box(self, k: int) -> np.ndarray:
        inc = self._incidence()
        return inc[1][inc[0][k]:inc[0][k + 1]]

    def _incidence(self):
        # CSR map from box index to the vertices whose pair contains it
        cached = getattr(self, "_inc", None)
        if cached is not None:
            return cached
        K = self.boxes.K
        V = self.num_vertices
        box = np.concatenate([self.pairs[:, 0], self.pairs[:, 1]])
        vert = np.concatenate([np.arange(V), np.arange(V)])
        order = np.lexsort((vert, box))
        indptr = np.zeros(K + 1, dtype=np.int64)
        np.add.at(indptr, box + 1, 1)
        indptr = np.cumsum(indptr)
        self._inc = (indptr, vert[order])
        return self._inc

    def adjacency(self):
        """Per-vertex neighbour lists (neighbour, weight, shared box), sorted by neighbour."""
        cached = getattr(self, "_adjacency", None)
        if cached is not None:
            return cached
        V = self.num_vertices
        adj = [[] for _ in range(V)]
        for (v, w), wt, k in zip(self.edges.tolist(), self.weights.tolist(), self.edge_box.tolist()):
            adj[v].append((w, wt, k))
            adj[w].append((v, wt, k))
        for lst in adj:
            lst.sort()
        self._adjacency = adj
        return adj


def build_line_graph(S: BoxSet) -> LineGraph:
    pairs = S.intersecting_pairs()
    V = pairs.shape[0]
    inter_l = np.maximum(S.L[pairs[:, 0]], S.L[pairs[:, 1]]) if V else np.zeros((0, S.dim))
    inter_u = np.minimum(S.U[pairs[:, 0]], S.U[pairs[:, 1]]) if V else np.zeros((0, S.dim))
    G = LineGraph(S, pairs, inter_l, inter_u, np.zeros((0, 2), dtype=np.int64),
                  np.zeros(0, dtype=np.int64), (inter_l + inter_u) / 2, np.zeros(0))
    indptr, verts = G._incidence()
    ea, eb, ek = [], [], []
    # Two distinct pairs share at most one box, so cliques over boxes never
    # produce duplicate edges.
    for k in range(S.K):
        vs = verts[indptr[k]:indptr[k + 1]]
        if vs.size < 2:
            continue
        i, j = np.triu_indices(vs.size, 1)
        ea.append(vs[i])
        eb.append(vs[j])
        ek.append(np.full(i.size, k))
    if ea:
        a = np.concatenate(ea)
        b = np.concatenate(eb)
        edges = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1).astype(np.int64)
        edge_box = np.concatenate(ek).astype(np.int64)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        G.edges = edges[order]
        G.edge_box = edge_box[order]
    G.refresh_weights()
    return G


def optimize_representative_points(G: LineGraph, tol: float = conic.TOL_REP_POINTS) -> LineGraph:
    """Moves the representative points to (approximately) minimize the total
    edge length, each point staying in its box intersection."""
    V, E, d = G.num_vertices, G.num_edges, G.boxes.dim
    if E == 0:
        return G
    b = conic.ConicBuilder()
    x = b.add_variables(V * d, lb=G.inter_l.ravel(), ub=G.inter_u.ravel())
    t = b.add_variables(E, lb=0.0)
    b.add_linear_cost(t, 1.0)
    # cone e: (t_e, x_v - x_w)
    dim = d + 1
    e = np.arange(E)
    rows = [e * dim]
    cols = [t]
    vals = [np.ones(E)]
    for c in range(d):
        rows += [e * dim + 1 + c, e * dim + 1 + c]
        cols += [x[G.edges[:, 0] * d + c], x[G.edges[:, 1] * d + c]]
        vals += [np.ones(E), -np.ones(E)]
    b.add_soc(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
              np.zeros(E * dim), dim=dim)
    sol = conic.solve_or_raise(b.build(), tol, "representative-point optimization")
    pts = sol.x[x].reshape(V, d)
    pts = np.minimum(np.maximum(pts, G.inter_l), G.inter_u)
    if G.total_length(pts) <= G.total_length():
        G.rep_points = pts
        G.refresh_weights()
    else:
        log.warning("optimized representative points are no shorter than the seeds; keeping seeds")
    return G


@dataclass
class BoxPath:
    nodes: np.ndarray   # (N+1, d): p_init, representative points..., p_term
    boxes: list         # N covering box indices
    vertices: list      # line-graph vertex ids along the path


def shortest_box_path(G: LineGraph, p_init, p_term) -> BoxPath | None:
    """Shortest path from p_init to p_term in the line graph augmented with
    the two endpoints. Returns None when no path exists, which certifies that
    the endpoints are not connected through the safe set."""
    S = G.boxes
    p_init = np.asarray(p_init, dtype=float).reshape(-1)
    p_term = np.asarray(p_term, dtype=float).reshape(-1)
    if p_init.size != S.dim or p_term.size != S.dim:
        raise DimensionError("endpoint dimension does not match the boxes")
    ki = S.stab(p_init)
    kt = S.stab(p_term)
    if not ki or not kt:
        return None
    common = sorted(set(ki) & set(kt))
    V = G.num_vertices
    src, dst = V, V + 1
    X = G.rep_points

    def endpoint_links(p, stabbed):
        # vertex -> covering box (smallest stabbed box of the pair)
        links = {}
        for k in stabbed:
            for v in G.vertices_of_box(k).tolist():
                if v not in links or k < links[v]:
                    links[v] = k
        return links

    init_links = endpoint_links(p_init, ki)
    term_links = endpoint_links(p_term, kt)
    adj = G.adjacency()

    def neighbours(u):
        if u == src:
            out = [(v, float(np.linalg.norm(X[v] - p_init)), k) for v, k in sorted(init_links.items())]
            if common:
                out.append((dst, float(np.linalg.norm(p_term - p_init)), common[0]))
            return out
        if u == dst:
            return []
        out = adj[u]
        if u in term_links:
            out = out + [(dst, float(np.linalg.norm(p_term - X[u])), term_links[u])]
        return out

    dist = {src: 0.0}
    pred = {src: (-1, -1)}
    done = set()
    heap = [(0.0, src)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            break
        for v, wt, k in neighbours(u):
            if v in done:
                continue
            nd = du + wt
            old = dist.get(v)
            if old is None or nd < old or (nd == old and u < pred[v][0]):
                dist[v] = nd
                pred[v] = (u, k)
                heapq.heappush(heap, (nd, v))
    if dst not in done:
        return None
    verts, boxes = [], []
    u = dst
    while u != src:
        p, k = pred[u]
        boxes.append(k)
        if p != src:
            verts.append(p)
        u = p
    verts.reverse()
    boxes.reverse()
    nodes = np.vstack([p_init] + [X[v] for v in verts] + [p_term])
    return BoxPath(nodes=nodes, boxes=boxes, vertices=verts)
