"""Finite metric measure graphs.

A :class:`MetricGraph` is an undirected multigraph whose edges carry a
positive length and a positive mass; the mass is spread uniformly along the
edge.  Points may sit anywhere on an edge (:class:`GraphPoint`), and all
distance queries are exact path-metric distances between such points.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

Number = Union[int, float, Fraction]

__all__ = [
    "AdmissibilityProfile",
    "Edge",
    "GraphError",
    "GraphPoint",
    "GraphPoints",
    "MetricGraph",
    "ball_measure",
    "path_distance",
    "star",
    "subdivide",
    "subdivided_point",
]


class GraphError(ValueError):
    """Raised for invalid graphs, points or queries."""


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    length: Number
    mass: Number


@dataclass(frozen=True)
class GraphPoint:
    """A point at offset ``s`` (length units, measured from ``u``) on ``edge``."""

    edge: int
    s: Number


@dataclass(frozen=True)
class AdmissibilityProfile:
    """Parameters ``(m, Delta, C, theta)`` of an admissible inverse system."""

    m: int
    Delta: int = 6
    C: Number = 2
    theta: Number = 1

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise GraphError(f"m must be an integer >= 2, got {self.m}")
        if self.Delta < 2:
            raise GraphError(f"Delta must be >= 2, got {self.Delta}")
        if self.C < 1:
            raise GraphError(f"C must be >= 1, got {self.C}")
        if self.theta <= 0:
            raise GraphError(f"theta must be > 0, got {self.theta}")


class GraphPoints:
    """A batch of points given by parallel arrays of edge ids and offsets."""

    __slots__ = ("edges", "offsets")

    def __init__(self, edges, offsets):
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        if self.edges.shape != self.offsets.shape:
            raise GraphError("edges and offsets must have the same length")

    @classmethod
    def of(cls, points: Iterable[GraphPoint]) -> "GraphPoints":
        pts = list(points)
        return cls([p.edge for p in pts], [float(p.s) for p in pts])

    def __len__(self) -> int:
        return len(self.edges)

    def __getitem__(self, i) -> "GraphPoint | GraphPoints":
        if isinstance(i, (int, np.integer)):
            return GraphPoint(int(self.edges[i]), float(self.offsets[i]))
        return GraphPoints(self.edges[i], self.offsets[i])

    def concat(self, other: "GraphPoints") -> "GraphPoints":
        return GraphPoints(
            np.concatenate([self.edges, other.edges]),
            np.concatenate([self.offsets, other.offsets]),
        )

    def __repr__(self) -> str:
        return f"GraphPoints(n={len(self)})"


def _exact(x) -> Number:
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    return float(x)


def _encode(x: Number):
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else x.numerator
    return x


class MetricGraph:
    """Immutable finite metric measure graph.

    Parameters
    ----------
    n_vertices:
        Vertices are ``0 .. n_vertices - 1``.
    edges:
        Sequence of :class:`Edge` (or ``(u, v, length, mass)`` tuples).
        Parallel edges and self-loops are allowed and told apart by edge id.
    level:
        Level tag ``i`` (edge length ``m**-i`` in admissible use).
    """

    def __init__(self, n_vertices: int, edges: Sequence, level: int = 0):
        self.n_vertices = int(n_vertices)
        es = []
        for e in edges:
            if not isinstance(e, Edge):
                e = Edge(int(e[0]), int(e[1]), _exact(e[2]), _exact(e[3]))
            if not (0 <= e.u < self.n_vertices and 0 <= e.v < self.n_vertices):
                raise GraphError(f"edge {e} references an unknown vertex")
            if not e.length > 0:
                raise GraphError(f"edge {e} has non-positive length")
            if not e.mass > 0:
                raise GraphError(f"edge {e} has non-positive mass")
            es.append(e)
        if self.n_vertices < 1:
            raise GraphError("graph needs at least one vertex")
        self.edges: tuple[Edge, ...] = tuple(es)
        self.level = int(level)
        self._rows: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    # -- structure -----------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([e.u for e in self.edges], dtype=np.int64)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([e.v for e in self.edges], dtype=np.int64)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([float(e.length) for e in self.edges])

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([float(e.mass) for e in self.edges])

    @cached_property
    def incidence(self) -> tuple[tuple[int, ...], ...]:
        inc: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for k, e in enumerate(self.edges):
            inc[e.u].append(k)
            if e.v != e.u:
                inc[e.v].append(k)
        return tuple(tuple(x) for x in inc)

    def star(self, v: int) -> set[int]:
        """Ids of all edges incident to vertex ``v``."""
        if not 0 <= v < self.n_vertices:
            raise GraphError(f"unknown vertex {v}")
        return set(self.incidence[v])

    def valence(self, v: int) -> int:
        """Number of edge ends at ``v`` (a self-loop counts twice)."""
        return sum(2 if self.edges[k].u == self.edges[k].v else 1 for k in self.star(v))

    @cached_property
    def _csr(self):
        best: dict[tuple[int, int], float] = {}
        for e, L in zip(self.edges, self.lengths):
            if e.u == e.v:
                continue
            key = (min(e.u, e.v), max(e.u, e.v))
            if key not in best or L < best[key]:
                best[key] = L
        if best:
            rows, cols = zip(*best.keys())
            data = list(best.values())
        else:
            rows, cols, data = (), (), ()
        n = self.n_vertices
        return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self._csr, directed=False)
        return ncomp == 1

    @property
    def total_mass(self) -> Number:
        return sum((e.mass for e in self.edges), Fraction(0) if self.is_exact else 0.0)

    @cached_property
    def is_exact(self) -> bool:
        return all(
            isinstance(e.length, Fraction) and isinstance(e.mass, Fraction)
            for e in self.edges
        )

    # -- points --------------------------------------------------------

    def vertex_point(self, v: int) -> GraphPoint:
        """Canonical point for vertex ``v``: its smallest incident edge."""
        inc = self.incidence[v]
        if not inc:
            raise GraphError(f"vertex {v} has no incident edge")
        k = min(inc)
        e = self.edges[k]
        return GraphPoint(k, 0 if e.u == v else e.length)

    def point(self, edge: int, s: Number) -> GraphPoint:
        """Validated, canonical point at offset ``s`` on ``edge``."""
        if not 0 <= edge < self.n_edges:
            raise GraphError(f"bad point: unknown edge {edge}")
        e = self.edges[edge]
        if s < 0 or s > e.length:
            raise GraphError(f"bad point: offset {s} outside [0, {e.length}]")
        if s == 0:
            return self.vertex_point(e.u)
        if s == e.length:
            return self.vertex_point(e.v)
        return GraphPoint(edge, s)

    def vertex_of(self, p: GraphPoint) -> int | None:
        """Vertex id if ``p`` sits on a vertex, else ``None``."""
        e = self.edges[p.edge]
        if p.s == 0:
            return e.u
        if p.s == e.length:
            return e.v
        return None

    def _check(self, p: GraphPoint) -> None:
        if not 0 <= p.edge < self.n_edges:
            raise GraphError(f"bad point: unknown edge {p.edge}")
        if p.s < 0 or p.s > self.edges[p.edge].length:
            raise GraphError(f"bad point: offset {p.s} outside edge {p.edge}")

    # -- distances -----------------------------------------------------

    def vertex_distances(self, v: int) -> np.ndarray:
        """Distances from vertex ``v`` to every vertex (cached, read-only)."""
        row = self._rows.get(v)
        if row is None:
            row = dijkstra(self._csr, directed=False, indices=int(v))
            row.setflags(write=False)
            with self._lock:
                self._rows[v] = row
        return row

    def point_vertex_distances(self, p: GraphPoint) -> np.ndarray:
        """Distances from point ``p`` to every vertex."""
        self._check(p)
        e = self.edges[p.edge]
        s, L = float(p.s), float(e.length)
        return np.minimum(self.vertex_distances(e.u) + s, self.vertex_distances(e.v) + (L - s))

    def distances_from(self, p: GraphPoint, qs: GraphPoints) -> np.ndarray:
        """Vectorised path distances from ``p`` to each point of ``qs``."""
        D = self.point_vertex_distances(p)
        E, T = qs.edges, qs.offsets
        out = np.minimum(D[self.tails[E]] + T, D[self.heads[E]] + (self.lengths[E] - T))
        same = E == p.edge
        if np.any(same):
            out[same] = np.minimum(out[same], np.abs(T[same] - float(p.s)))
        return out

    def distance(self, p: GraphPoint, q: GraphPoint) -> float:
        self._check(q)
        d = float(self.distances_from(p, GraphPoints([q.edge], [float(q.s)]))[0])
        if not np.isfinite(d):
            raise GraphError("unreachable")
        return d

    def ball_pieces(self, p: GraphPoint, r: float):
        """Per-edge covered sub-intervals of the closed ball ``B(p, r)``.

        Returns ``(hi1, lo2, own)``: for edge ``k`` the ball
        meets it in ``[0, hi1[k]] U [lo2[k], L_k]`` plus, on ``p``'s own edge,
        ``own = (a, b)``.  Empty pieces have ``hi1 < 0`` / ``lo2 > L``.
        """
        D = self.point_vertex_distances(p)
        L = self.lengths
        hi1 = np.minimum(r - D[self.tails], L)
        lo2 = np.maximum(L - (r - D[self.heads]), 0.0)
        s = float(p.s)
        own = (max(0.0, s - r), min(float(self.edges[p.edge].length), s + r))
        return hi1, lo2, own

    def ball_measure(self, p: GraphPoint, r: float) -> float:
        if r < 0:
            raise GraphError("negative radius")
        hi1, lo2, own = self.ball_pieces(p, r)
        L = self.lengths
        len1 = np.clip(hi1, 0.0, None)
        len2 = np.clip(L - lo2, 0.0, None)
        covered = np.minimum(L, len1 + len2)
        k = p.edge
        pieces = []
        if hi1[k] >= 0:
            pieces.append((0.0, hi1[k]))
        if lo2[k] <= L[k]:
            pieces.append((lo2[k], L[k]))
        pieces.append(own)
        covered[k] = _union_length(pieces)
        return float(np.dot(covered, self.masses / L))

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "edges": [
                {"u": e.u, "v": e.v, "length": _encode(e.length), "mass": _encode(e.mass)}
                for e in self.edges
            ],
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricGraph":
        edges = [
            Edge(int(e["u"]), int(e["v"]), _exact(e["length"]), _exact(e["mass"]))
            for e in d["edges"]
        ]
        return cls(int(d["vertices"]), edges, int(d.get("level", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __repr__(self) -> str:
        return f"MetricGraph(level={self.level}, vertices={self.n_vertices}, edges={self.n_edges})"


def _union_length(pieces) -> float:
    pieces = sorted((a, b) for a, b in pieces if b >= a)
    total, cur_a, cur_b = 0.0, None, None
    for a, b in pieces:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def path_distance(g: MetricGraph, p: GraphPoint, q: GraphPoint) -> float:
    """Geodesic distance between two points of ``g``."""
    return g.distance(p, q)


def star(g: MetricGraph, v: int) -> set[int]:
    return g.star(v)


def ball_measure(g: MetricGraph, p: GraphPoint, r: float) -> float:
    """Exact measure of the closed ball ``B(p, r)``."""
    return g.ball_measure(p, r)


def _divide(x: Number, m: int) -> Number:
    if isinstance(x, (int, Fraction)):
        return Fraction(x) / m
    return x / m


def subdivide(g: MetricGraph, m: int) -> MetricGraph:
    """Split every edge into ``m`` equal edges with equal shares of its mass.

    Edge ``e`` becomes edges ``e*m .. e*m + m - 1`` running from ``u`` to
    ``v``; its interior vertices get ids ``n + e*(m-1) + (k-1)``.
    """
    if int(m) != m or m < 2:
        raise GraphError(f"subdivision factor must be an integer >= 2, got {m}")
    n = g.n_vertices
    out = []
    for k, e in enumerate(g.edges):
        L, M = _divide(e.length, m), _divide(e.mass, m)
        chain = [e.u] + [n + k * (m - 1) + j for j in range(m - 1)] + [e.v]
        out.extend(Edge(chain[j], chain[j + 1], L, M) for j in range(m))
    return MetricGraph(n + g.n_edges * (m - 1), out, g.level + 1)


def subdivided_point(g: MetricGraph, m: int, p: GraphPoint) -> GraphPoint:
    """Image of ``p`` under the identification ``g == subdivide(g, m)``."""
    L = _divide(g.edges[p.edge].length, m)
    k = min(int(p.s // L), m - 1)
    return GraphPoint(p.edge * m + k, p.s - k * L)
