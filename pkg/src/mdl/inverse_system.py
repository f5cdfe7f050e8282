"""Admissible inverse systems of metric measure graphs.

A system is a tower ``X_0 <- X_1 <- ... <- X_K`` where each ``X_{i+1}``
maps simplicially onto the ``m``-fold subdivision ``X_i'`` of ``X_i``, and a
coordinate ``phi_i`` sends ``X_i`` to the line.  Everything here is exact:
lengths, masses and ``phi`` values are :class:`fractions.Fraction`.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .metric_graph import (
    AdmissibilityProfile,
    Edge,
    GraphError,
    GraphPoint,
    GraphPoints,
    MetricGraph,
    subdivide,
)

BRANCH_RULES = ("doubling", "periodic", "tunnel")
_RULE_ALIASES = {
    "doubling-at-middle-cell": "doubling",
    "periodic-doubling": "periodic",
    "long-tunnel": "tunnel",
}


class SimplicialProjection:
    """The map ``pi_i: X_{i+1} -> X_i'`` given on vertices and edges."""

    def __init__(self, source: MetricGraph, target_subdivided: MetricGraph,
                 vertex_map: Sequence[int], edge_map: Sequence[int] | None = None):
        self.source = source
        self.target_subdivided = target_subdivided
        self.vertex_map = tuple(int(v) for v in vertex_map)
        if len(self.vertex_map) != source.n_vertices:
            raise GraphError("vertex_map length differs from source vertex count")
        if edge_map is None:
            edge_map = self._induce_edge_map()
        self.edge_map = tuple(int(e) for e in edge_map)
        if len(self.edge_map) != source.n_edges:
            raise GraphError("edge_map length differs from source edge count")

    def _induce_edge_map(self) -> list[int]:
        by_ends: dict[frozenset, list[int]] = defaultdict(list)
        for k, e in enumerate(self.target_subdivided.edges):
            by_ends[frozenset((e.u, e.v))].append(k)
        out = []
        for e in self.source.edges:
            cands = by_ends.get(frozenset((self.vertex_map[e.u], self.vertex_map[e.v])), [])
            if len(cands) != 1:
                raise GraphError(f"cannot induce edge map for source edge {e}: {len(cands)} candidates")
            out.append(cands[0])
        return out

    @cached_property
    def preimages(self) -> dict[int, tuple[int, ...]]:
        pre: dict[int, list[int]] = defaultdict(list)
        for k, c in enumerate(self.edge_map):
            pre[c].append(k)
        return {c: tuple(v) for c, v in pre.items()}

    @cached_property
    def vertex_fibers(self) -> dict[int, tuple[int, ...]]:
        fib: dict[int, list[int]] = defaultdict(list)
        for w, v in enumerate(self.vertex_map):
            fib[v].append(w)
        return {v: tuple(f) for v, f in fib.items()}

    def aligned(self, e: int) -> bool:
        """Whether source edge ``e`` runs the same way as its image edge."""
        se = self.source.edges[e]
        te = self.target_subdivided.edges[self.edge_map[e]]
        return self.vertex_map[se.u] == te.u

    def project_point(self, p: GraphPoint) -> GraphPoint:
        """Image of a source point, as a point of ``X_i'``."""
        c = self.edge_map[p.edge]
        if self.aligned(p.edge):
            return GraphPoint(c, p.s)
        return GraphPoint(c, self.target_subdivided.edges[c].length - p.s)


@dataclass
class AxiomResult:
    name: str
    passed: bool
    witness: str | None = None
    checked: int = 0


@dataclass
class ValidationReport:
    results: dict[str, AxiomResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def failures(self) -> list[AxiomResult]:
        return [r for r in self.results.values() if not r.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "axioms": {
                k: {"passed": r.passed, "witness": r.witness, "checked": r.checked}
                for k, r in self.results.items()
            },
        }

    def summary(self) -> str:
        lines = []
        for k, r in self.results.items():
            status = "PASS" if r.passed else "FAIL"
            extra = f"  witness: {r.witness}" if r.witness else ""
            lines.append(f"{k}: {status} ({r.checked} checks){extra}")
        return "\n".join(lines)


class InverseSystem:
    """A finite window ``X_0 .. X_K`` of an inverse system.

    ``phi[i][v]`` is the coordinate of vertex ``v`` of ``X_i``.  For signed
    systems the levels are a window of a bi-infinite tower; ``levels[j]``
    carries its own level tag and ``phi`` values live on ``m**-tag * Z``.
    """

    def __init__(self, profile: AdmissibilityProfile, levels: Sequence[MetricGraph],
                 projections: Sequence[SimplicialProjection],
                 phi: Sequence[Sequence[Fraction]], signed: bool = False):
        self.profile = profile
        self.levels = tuple(levels)
        self.projections = tuple(projections)
        self.phi = tuple(tuple(Fraction(x) for x in row) for row in phi)
        self.signed = bool(signed)
        if not self.levels:
            raise GraphError("system needs at least one level")
        if len(self.projections) != len(self.levels) - 1:
            raise GraphError(
                f"mismatched level counts: {len(self.levels)} levels, "
                f"{len(self.projections)} projections"
            )
        if len(self.phi) != len(self.levels):
            raise GraphError("mismatched level counts: one phi row per level required")
        for i, (g, row) in enumerate(zip(self.levels, self.phi)):
            if len(row) != g.n_vertices:
                raise GraphError(f"phi row {i} has {len(row)} values for {g.n_vertices} vertices")

    @property
    def m(self) -> int:
        return self.profile.m

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def edge_length(self, i: int) -> Fraction:
        return Fraction(1, self.m) ** self.levels[i].level

    # -- coordinates ---------------------------------------------------

    def subdivided_phi(self, i: int) -> tuple[Fraction, ...]:
        """``phi_i`` on the vertices of ``X_i'``."""
        return self._sub_phi[i]

    @cached_property
    def _sub_phi(self) -> tuple[tuple[Fraction, ...], ...]:
        out = []
        m = self.m
        for g, row in zip(self.levels[:-1], self.phi[:-1]):
            vals = list(row)
            for e in g.edges:
                a, b = row[e.u], row[e.v]
                vals.extend(a + (b - a) * k / m for k in range(1, m))
            out.append(tuple(vals))
        return tuple(out)

    @cached_property
    def phi_arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(np.array([float(x) for x in row]) for row in self.phi)

    @cached_property
    def edge_phi_start(self) -> tuple[np.ndarray, ...]:
        """Lower ``phi`` value of each edge, per level (float)."""
        return tuple(
            np.minimum(ph[g.tails], ph[g.heads]) for g, ph in zip(self.levels, self.phi_arrays)
        )

    @cached_property
    def edge_forward(self) -> tuple[np.ndarray, ...]:
        """True where ``phi`` increases from ``u`` to ``v``."""
        return tuple(ph[g.heads] >= ph[g.tails] for g, ph in zip(self.levels, self.phi_arrays))

    def phi_of(self, i: int, p: GraphPoint):
        e = self.levels[i].edges[p.edge]
        a, b = self.phi[i][e.u], self.phi[i][e.v]
        s = p.s if isinstance(p.s, Fraction) else p.s
        if b >= a:
            return a + s
        return a - s

    def phi_many(self, i: int, pts: GraphPoints) -> np.ndarray:
        start = self.edge_phi_start[i][pts.edges]
        fwd = self.edge_forward[i][pts.edges]
        L = self.levels[i].lengths[pts.edges]
        return start + np.where(fwd, pts.offsets, L - pts.offsets)

    # -- projections ---------------------------------------------------

    def project(self, p: GraphPoint, i: int) -> GraphPoint:
        """Image in ``X_i`` of a point of ``X_{i+1}`` (exact for Fraction offsets)."""
        q = self.projections[i].project_point(p)
        m = self.m
        parent, k = divmod(q.edge, m)
        e = self.levels[i].edges[parent]
        cell = e.length / m if isinstance(e.length, Fraction) else float(e.length) / m
        s = k * cell + q.s
        return GraphPoint(parent, s)

    def project_to(self, p: GraphPoint, j: int, i: int) -> GraphPoint:
        """``pi_{j,i}`` applied to a point of ``X_j``."""
        if i > j:
            raise GraphError("can only project to a coarser level")
        for k in range(j - 1, i - 1, -1):
            p = self.project(p, k)
        return p

    def project_many(self, pts: GraphPoints, i: int) -> GraphPoints:
        """Vectorised :meth:`project` from level ``i+1`` to ``i`` (float)."""
        pr = self.projections[i]
        em = np.asarray(pr.edge_map)
        al = self._aligned[i]
        c = em[pts.edges]
        ts = pr.target_subdivided
        Lc = np.asarray(ts.lengths)[c]
        s = np.where(al[pts.edges], pts.offsets, Lc - pts.offsets)
        parent, k = np.divmod(c, self.m)
        return GraphPoints(parent, k * Lc + s)

    @cached_property
    def _aligned(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.array([pr.aligned(e) for e in range(pr.source.n_edges)], dtype=bool)
            for pr in self.projections
        )

    # -- io ------------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.profile
        return {
            "profile": {"m": p.m, "Delta": p.Delta, "C": _enc(p.C), "theta": _enc(p.theta)},
            "signed": self.signed,
            "levels": [g.to_dict() for g in self.levels],
            "projections": [
                {"vertex_map": list(pr.vertex_map), "edge_map": list(pr.edge_map)}
                for pr in self.projections
            ],
            "phi": [{"vertex_values": [_enc(x) for x in row]} for row in self.phi],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InverseSystem":
        pd = d["profile"]
        profile = AdmissibilityProfile(
            int(pd["m"]), int(pd["Delta"]), Fraction(str(pd["C"])), Fraction(str(pd["theta"]))
        )
        levels = [MetricGraph.from_dict(g) for g in d["levels"]]
        prs = d.get("projections", [])
        if len(prs) != len(levels) - 1:
            raise GraphError(
                f"mismatched level counts: {len(levels)} levels, {len(prs)} projections"
            )
        projections = []
        for i, pr in enumerate(prs):
            target = subdivide(levels[i], profile.m)
            projections.append(
                SimplicialProjection(levels[i + 1], target, pr["vertex_map"], pr.get("edge_map"))
            )
        phi = [[Fraction(str(x)) for x in row["vertex_values"]] for row in d["phi"]]
        return cls(profile, levels, projections, phi, bool(d.get("signed", False)))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "InverseSystem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self) -> str:
        return (f"InverseSystem(m={self.m}, depth={self.depth}, signed={self.signed}, "
                f"edges={[g.n_edges for g in self.levels]})")


def _enc(x):
    x = Fraction(x)
    return str(x) if x.denominator != 1 else x.numerator


# ---------------------------------------------------------------------------
# generators


def _doubled_cells(m: int, newer_end_is_head: bool | None) -> set[int]:
    if m == 2:
        # no interior cell exists: double the cell touching the newer endpoint
        return {0} if newer_end_is_head is False else {1}
    if m % 2:
        return {m // 2}
    return {m // 2 - 1, m // 2}


def interval_system(m: int, depth: int, profile: AdmissibilityProfile | None = None) -> InverseSystem:
    """The trivial system: ``X_i`` is ``[0, 1]`` cut into ``m**i`` edges."""
    return _build(profile or AdmissibilityProfile(m), depth, rule=None, seed=0)


def generate_standard(profile: AdmissibilityProfile, depth: int, branch_rule: str = "doubling",
                      seed: int = 0) -> InverseSystem:
    """Laakso-type admissible systems over ``[0, 1]``.

    ``doubling``
        every level, the middle cell(s) of each subdivided edge become two
        parallel edges sharing both endpoints, each carrying half the mass
        (for ``m == 2`` the cell next to the younger endpoint is used, so
        valences stay bounded).
    ``periodic``
        as ``doubling`` but only on every other level; ``seed % 2`` picks
        the phase.
    ``tunnel``
        first level splits ``X_0'`` into two copies glued only at ``phi = 0``
        (violates the monotone bigon condition), then ``doubling``.
    """
    rule = _RULE_ALIASES.get(branch_rule, branch_rule)
    if rule not in BRANCH_RULES:
        raise GraphError(f"unknown branch_rule {branch_rule!r}")
    if depth < 0:
        raise GraphError("depth must be >= 0")
    return _build(profile, depth, rule, seed)


def _build(profile: AdmissibilityProfile, depth: int, rule: str | None, seed: int) -> InverseSystem:
    m = profile.m
    one = Fraction(1)
    levels = [MetricGraph(2, [Edge(0, 1, one, one)], level=0)]
    phi = [[Fraction(0), one]]
    born = [0, 0]
    projections = []
    for i in range(depth):
        g = levels[-1]
        target = subdivide(g, m)
        sub_phi = list(phi[-1])
        sub_born = list(born)
        for e in g.edges:
            a, b = phi[-1][e.u], phi[-1][e.v]
            sub_phi.extend(a + (b - a) * k / m for k in range(1, m))
            sub_born.extend([i + 1] * (m - 1))

        active = rule is not None and (rule != "periodic" or (i + seed) % 2 == 0)
        if rule == "tunnel" and i == 0:
            g1, vmap, emap, ph = _tunnel_level(target, sub_phi)
            levels.append(g1)
            projections.append(SimplicialProjection(g1, target, vmap, emap))
            phi.append(ph)
            born = [1] * g1.n_vertices
            continue

        edges, emap = [], []
        for k, e in enumerate(g.edges):
            if active:
                head_newer = None if born[e.u] == born[e.v] else born[e.v] > born[e.u]
                if phi[-1][e.v] < phi[-1][e.u] and head_newer is not None:
                    head_newer = not head_newer
                cells = _doubled_cells(m, head_newer)
                if phi[-1][e.v] < phi[-1][e.u]:
                    cells = {m - 1 - c for c in cells}
            else:
                cells = set()
            for c in range(m):
                te = target.edges[k * m + c]
                if c in cells:
                    half = te.mass / 2
                    edges += [Edge(te.u, te.v, te.length, half), Edge(te.u, te.v, te.length, half)]
                    emap += [k * m + c, k * m + c]
                else:
                    edges.append(te)
                    emap.append(k * m + c)
        g1 = MetricGraph(target.n_vertices, edges, level=i + 1)
        levels.append(g1)
        projections.append(SimplicialProjection(g1, target, range(target.n_vertices), emap))
        phi.append(sub_phi)
        born = sub_born
    return InverseSystem(profile, levels, projections, phi, signed=False)


def _tunnel_level(target: MetricGraph, sub_phi):
    # two copies of X_0' sharing only the vertex with phi == 0
    base = [v for v in range(target.n_vertices) if sub_phi[v] == 0]
    idx: dict[tuple[int, int], int] = {}
    vmap, ph = [], []
    for copy in (0, 1):
        for v in range(target.n_vertices):
            key = (0, v) if v in base else (copy, v)
            if key not in idx:
                idx[key] = len(vmap)
                vmap.append(v)
                ph.append(sub_phi[v])
    edges, emap = [], []
    for copy in (0, 1):
        for k, e in enumerate(target.edges):
            u = idx[(0, e.u) if e.u in base else (copy, e.u)]
            v = idx[(0, e.v) if e.v in base else (copy, e.v)]
            edges.append(Edge(u, v, e.length, e.mass / 2))
            emap.append(k)
    return MetricGraph(len(vmap), edges, level=1), vmap, emap, ph


# ---------------------------------------------------------------------------
# validation


class _Hops:
    """Bounded-radius BFS hop distances on a graph with equal edge lengths."""

    def __init__(self, g: MetricGraph, cutoff: int):
        self.g = g
        self.cutoff = cutoff
        self._cache: dict[int, dict[int, int]] = {}

    def __call__(self, a: int, b: int) -> int:
        if a == b:
            return 0
        row = self._cache.get(a)
        if row is None:
            row = {a: 0}
            q = deque([a])
            g = self.g
            while q:
                x = q.popleft()
                dx = row[x]
                if dx >= self.cutoff:
                    continue
                for k in g.incidence[x]:
                    e = g.edges[k]
                    y = e.v if e.u == x else e.u
                    if y not in row:
                        row[y] = dx + 1
                        q.append(y)
            self._cache[a] = row
        return row.get(b, self.cutoff + 1)


def _fiber_pair_max(h, a1, b1, a2, b2) -> Fraction:
    """Max over ``s`` in [0,1] of the distance between offset-``s`` points of two edges.

    Endpoints are given as (start, end) in the common orientation; ``h`` is
    the hop metric.  Units: one edge length.
    """
    A, B = h(a1, a2), h(b1, b2)
    flat = 1 + min(h(a1, b2), h(b1, a2))
    best = Fraction(0)
    star = Fraction(2 + B - A, 4)
    for s in (Fraction(0), Fraction(1), min(max(star, Fraction(0)), Fraction(1))):
        val = min(2 * s + A, 2 - 2 * s + B, flat)
        best = max(best, val)
    return best


def validate(system: InverseSystem) -> ValidationReport:
    """Check axioms Ad1-Ad7 exactly; failures carry a witness."""
    if len(system.projections) != len(system.levels) - 1:
        raise GraphError("mismatched level counts")
    prof = system.profile
    rep = ValidationReport()
    for name in ("Ad1", "Ad2", "Ad3", "Ad4", "Ad5", "Ad6", "Ad7"):
        rep.results[name] = AxiomResult(name, True)

    def fail(name, witness):
        r = rep.results[name]
        if r.passed:
            r.passed, r.witness = False, witness

    boundary = _window_boundary(system)

    # Ad1 / Ad4 per level
    for i, g in enumerate(system.levels):
        L = system.edge_length(i)
        r1, r4 = rep.results["Ad1"], rep.results["Ad4"]
        if not system.signed and g.level != i:
            fail("Ad1", f"level {i} carries tag {g.level}")
        if not g.is_connected():
            fail("Ad1", f"X_{i} is disconnected")
        for v in range(g.n_vertices):
            r1.checked += 1
            if g.valence(v) > prof.Delta:
                fail("Ad1", f"X_{i} vertex {v} has valence {g.valence(v)} > {prof.Delta}")
            if g.valence(v) == 0:
                fail("Ad1", f"X_{i} vertex {v} is isolated")
            masses = [g.edges[k].mass for k in g.incidence[v]]
            if masses:
                r4.checked += 1
                if max(masses) > prof.C * min(masses):
                    fail("Ad4", f"X_{i} vertex {v}: adjacent masses {min(masses)}, {max(masses)}")
        for k, e in enumerate(g.edges):
            r1.checked += 1
            if e.length != L:
                fail("Ad1", f"X_{i} edge {k} has length {e.length} != {L}")

    lengths_ok = rep.results["Ad1"].passed

    for i, pr in enumerate(system.projections):
        src, tgt = pr.source, pr.target_subdivided
        # Ad2: simplicial, isometric on edges, surjective, open
        r2 = rep.results["Ad2"]
        if any(not 0 <= v < tgt.n_vertices for v in pr.vertex_map):
            fail("Ad2", f"pi_{i} vertex map leaves X_{i}'")
            continue
        for k, e in enumerate(src.edges):
            r2.checked += 1
            c = pr.edge_map[k]
            if not 0 <= c < tgt.n_edges:
                fail("Ad2", f"pi_{i} maps edge {k} to unknown edge {c}")
                continue
            te = tgt.edges[c]
            ends = sorted((pr.vertex_map[e.u], pr.vertex_map[e.v]))
            if ends != sorted((te.u, te.v)):
                fail("Ad2", f"pi_{i} edge {k} not simplicial onto edge {c}")
            if e.length != te.length:
                fail("Ad2", f"pi_{i} edge {k} is not an isometry onto edge {c}")
        missing = [c for c in range(tgt.n_edges) if c not in pr.preimages]
        if missing:
            fail("Ad2", f"pi_{i} misses edge {missing[0]} of X_{i}'")
        for w in range(src.n_vertices):
            v = pr.vertex_map[w]
            if (i + 1, w) in boundary:
                continue
            r2.checked += 1
            have = {pr.edge_map[k] for k in src.incidence[w]}
            need = tgt.star(v)
            if not need <= have:
                fail("Ad2", f"pi_{i} not open at vertex {w}: star edges {sorted(need - have)} uncovered")

        # Ad5: pushforward of measures, edge by edge of X_i'
        r5 = rep.results["Ad5"]
        for c, pre in pr.preimages.items():
            r5.checked += 1
            total = sum((src.edges[k].mass for k in pre), Fraction(0))
            if total != tgt.edges[c].mass:
                fail("Ad5", f"pi_{i}: mass over edge {c} is {total}, expected {tgt.edges[c].mass}")

        # Ad6: star-mass ratio constant on star(v', X_i')
        r6 = rep.results["Ad6"]
        for w in range(src.n_vertices):
            if (i + 1, w) in boundary:
                continue
            v = pr.vertex_map[w]
            acc: dict[int, Fraction] = defaultdict(Fraction)
            for k in src.incidence[w]:
                acc[pr.edge_map[k]] += src.edges[k].mass
            ratios = {acc.get(c, Fraction(0)) / tgt.edges[c].mass for c in tgt.star(v)}
            r6.checked += 1
            if len(ratios) > 1:
                fail("Ad6", f"pi_{i} vertex {w}: star ratios {sorted(ratios)}")

        # Ad3: fiber diameters, in units of the level-(i+1) edge length
        r3 = rep.results["Ad3"]
        if not lengths_ok:
            fail("Ad3", "not checked: Ad1 edge lengths failed")
            continue
        theta = Fraction(prof.theta)
        hops = _Hops(src, cutoff=int(math.ceil(theta)) + 2)
        for v, fib in pr.vertex_fibers.items():
            for x in range(len(fib)):
                for y in range(x + 1, len(fib)):
                    r3.checked += 1
                    d = hops(fib[x], fib[y])
                    if d > theta:
                        fail("Ad3", f"pi_{i} fiber over vertex {v}: vertices {fib[x]},{fib[y]} "
                                    f"at distance {d} edges > theta={theta}")
        for c, pre in pr.preimages.items():
            if len(pre) < 2:
                continue
            te = tgt.edges[c]
            oriented = []
            for k in pre:
                e = src.edges[k]
                oriented.append((e.u, e.v) if pr.vertex_map[e.u] == te.u else (e.v, e.u))
            for x in range(len(oriented)):
                for y in range(x + 1, len(oriented)):
                    r3.checked += 1
                    d = _fiber_pair_max(hops, *oriented[x], *oriented[y])
                    if d > theta:
                        fail("Ad3", f"pi_{i} fiber over edge {c} (edges {pre[x]},{pre[y]}) "
                                    f"has diameter {d} edges > theta={theta}")

    # Ad7: phi is simplicial, isometric on edges and compatible with projections
    r7 = rep.results["Ad7"]
    if not system.signed:
        g0 = system.levels[0]
        ok0 = (g0.n_edges == 1 and g0.edges[0].u != g0.edges[0].v
               and g0.edges[0].length == 1 and g0.edges[0].mass == 1
               and sorted(system.phi[0]) == [0, 1])
        r7.checked += 1
        if not ok0:
            fail("Ad7", "X_0 is not the unit interval with Lebesgue measure")
    for i, g in enumerate(system.levels):
        row = system.phi[i]
        unit = system.edge_length(i)
        for k, e in enumerate(g.edges):
            r7.checked += 1
            if abs(row[e.v] - row[e.u]) != e.length:
                fail("Ad7", f"phi_{i} not isometric on edge {k}")
        for v, x in enumerate(row):
            if (x / unit).denominator != 1 or (not system.signed and not 0 <= x <= 1):
                fail("Ad7", f"phi_{i}(vertex {v}) = {x} is off the level grid")
    for i, pr in enumerate(system.projections):
        sub = system.subdivided_phi(i)
        nxt = system.phi[i + 1]
        for w, v in enumerate(pr.vertex_map):
            r7.checked += 1
            if sub[v] != nxt[w]:
                fail("Ad7", f"phi_{i} o pi_{i} != phi_{i+1} at vertex {w} ({sub[v]} vs {nxt[w]})")
    return rep


def _window_boundary(system: InverseSystem) -> set[tuple[int, int]]:
    """Vertices on the edge of a signed window, exempt from local axioms."""
    if not system.signed:
        return set()
    out = set()
    for i, row in enumerate(system.phi):
        lo, hi = min(row), max(row)
        out.update((i, v) for v, x in enumerate(row) if x in (lo, hi))
    return out


# ---------------------------------------------------------------------------
# monotone geodesics


@dataclass(frozen=True)
class MonotoneGeodesic:
    """Monotone path through whole edges of ``X_level`` with ``phi o gamma = id``.

    ``edges`` are listed by increasing ``phi``; the path covers
    ``[t0, t0 + len(edges) * edge_length]`` and is parametrised by ``phi``.
    ``domain`` restricts the parameter interval.
    """

    level: int
    edges: tuple[int, ...]
    t0: Fraction
    edge_length: Fraction
    forward: tuple[bool, ...]
    domain: tuple[float, float] | None = None

    @property
    def t1(self) -> Fraction:
        return self.t0 + len(self.edges) * self.edge_length

    @property
    def interval(self) -> tuple[float, float]:
        if self.domain is not None:
            return self.domain
        return float(self.t0), float(self.t1)

    def at(self, t) -> GraphPoint:
        t = Fraction(t) if isinstance(t, (int, Fraction)) else t
        if t < self.t0 or t > self.t1:
            raise GraphError(f"time {t} outside [{self.t0}, {self.t1}]")
        j = min(int((t - self.t0) // self.edge_length), len(self.edges) - 1)
        off = t - self.t0 - j * self.edge_length
        if not self.forward[j]:
            off = self.edge_length - off
        return GraphPoint(self.edges[j], off)

    def points(self, ts) -> GraphPoints:
        ts = np.asarray(ts, dtype=float)
        ell = float(self.edge_length)
        j = np.clip(np.floor((ts - float(self.t0)) / ell).astype(np.int64), 0, len(self.edges) - 1)
        off = ts - float(self.t0) - j * ell
        fwd = np.asarray(self.forward)[j]
        off = np.where(fwd, off, ell - off)
        return GraphPoints(np.asarray(self.edges)[j], np.clip(off, 0.0, ell))

    def with_domain(self, a: float, b: float) -> "MonotoneGeodesic":
        return MonotoneGeodesic(self.level, self.edges, self.t0, self.edge_length, self.forward,
                                (float(a), float(b)))


def _oriented(system: InverseSystem, i: int, k: int) -> tuple[int, int, bool]:
    e = system.levels[i].edges[k]
    fwd = system.phi[i][e.v] >= system.phi[i][e.u]
    return (e.u, e.v, True) if fwd else (e.v, e.u, False)


def geodesic_from_edges(system: InverseSystem, i: int, edges: Sequence[int]) -> MonotoneGeodesic:
    """Wrap an increasing chain of ``X_i`` edges; raises if it is not monotone."""
    if not edges:
        raise GraphError("empty edge chain")
    prev_end = None
    fwd = []
    for k in edges:
        a, b, f = _oriented(system, i, k)
        if prev_end is not None and a != prev_end:
            raise GraphError(f"edges do not form a monotone chain at edge {k}")
        prev_end = b
        fwd.append(f)
    a0, _, _ = _oriented(system, i, edges[0])
    return MonotoneGeodesic(i, tuple(edges), system.phi[i][a0], system.edge_length(i), tuple(fwd))


def _pins_for(system: InverseSystem, level: int, q: GraphPoint | None):
    """(edge pin, vertex pin) for point ``q`` of ``X_level``."""
    if q is None:
        return None, None
    g = system.levels[level]
    e = g.edges[q.edge]
    if q.s == 0:
        return None, e.u
    if q.s == e.length:
        return None, e.v
    return q.edge, None


def _lift_candidates(system: InverseSystem, i: int, path: MonotoneGeodesic,
                     pin_edge, pin_vertex):
    """Per-cell candidate edges of ``X_{i+1}`` with their (start, end) vertices."""
    m = system.m
    pr = system.projections[i]
    cells = []
    for k, f in zip(path.edges, path.forward):
        order = range(m) if f else range(m - 1, -1, -1)
        for c in order:
            cand = []
            for e in pr.preimages.get(k * m + c, ()):
                a, b, _ = _oriented(system, i + 1, e)
                cand.append((e, a, b))
            cells.append(cand)
    if pin_edge is not None:
        cells = [[x for x in cand if x[0] == pin_edge] if any(x[0] == pin_edge for x in cand)
                 else cand for cand in cells]
        if not any(x[0] == pin_edge for cand in cells for x in cand):
            raise GraphError("not liftable here")
    if pin_vertex is not None:
        target_phi = system.phi[i + 1][pin_vertex]
        t0 = path.t0
        ell = system.edge_length(i + 1)
        j = (target_phi - t0) / ell
        if j.denominator != 1 or not 0 <= j <= len(cells):
            raise GraphError("not liftable here")
        j = int(j)
        if j < len(cells):
            cells[j] = [x for x in cells[j] if x[1] == pin_vertex]
        else:
            cells[j - 1] = [x for x in cells[j - 1] if x[2] == pin_vertex]
        if (j < len(cells) and not cells[j]) or (j == len(cells) and not cells[j - 1]):
            raise GraphError("not liftable here")
    return cells


def _feasible_backward(cells):
    bf = [None] * len(cells)
    bf[-1] = list(cells[-1])
    for j in range(len(cells) - 2, -1, -1):
        starts = {x[1] for x in bf[j + 1]}
        bf[j] = [x for x in cells[j] if x[2] in starts]
    return bf


def _lift_once(system: InverseSystem, i: int, path: MonotoneGeodesic, q_next: GraphPoint | None,
               rng: np.random.Generator | None) -> MonotoneGeodesic:
    pin_edge, pin_vertex = _pins_for(system, i + 1, q_next)
    cells = _lift_candidates(system, i, path, pin_edge, pin_vertex)
    bf = _feasible_backward(cells)
    src = system.levels[i + 1]
    chosen = []
    prev = None
    for j in range(len(cells)):
        opts = [x for x in bf[j] if prev is None or x[1] == prev]
        if not opts:
            raise GraphError("not liftable here")
        if rng is None or len(opts) == 1:
            pick = opts[0]
        else:
            w = np.array([float(src.edges[x[0]].mass) for x in opts])
            w = w / w.sum()
            k = rng.choose(w) if hasattr(rng, "choose") else rng.choice(len(opts), p=w)
            pick = opts[int(k)]
        chosen.append(pick[0])
        prev = pick[2]
    g = geodesic_from_edges(system, i + 1, chosen)
    return g if path.domain is None else g.with_domain(*path.domain)


def lift_monotone_geodesic(system: InverseSystem, i: int, gamma_i: MonotoneGeodesic,
                           q: GraphPoint | None = None, j: int | None = None,
                           rng: np.random.Generator | None = None) -> MonotoneGeodesic:
    """Lift a monotone geodesic of ``X_i`` to ``X_j`` through ``q`` (a point of ``X_j``).

    Branches are taken with probabilities proportional to edge mass when
    ``rng`` is given, else the lowest edge id is used.  ``rng`` may be a
    numpy generator or any object with a ``choose(probs) -> index`` method.
    """
    if j is None:
        j = system.depth if q is None else i + 1
    if not i <= j <= system.depth:
        raise GraphError("bad target level")
    tower = {}
    if q is not None:
        tower[j] = q
        for k in range(j - 1, i - 1, -1):
            tower[k] = system.project(tower[k + 1], k)
        base = tower[i]
        phi_q = system.phi_of(i, base)
        if not gamma_i.t0 <= phi_q <= gamma_i.t1:
            raise GraphError("not liftable here")
        pe, pv = _pins_for(system, i, base)
        on_path = (pe in gamma_i.edges) if pe is not None else any(
            pv in _oriented(system, i, k)[:2] for k in gamma_i.edges)
        if not on_path:
            raise GraphError("not liftable here")
    path = gamma_i
    for k in range(i, j):
        path = _lift_once(system, k, path, tower.get(k + 1), rng)
    return path


def enumerate_lifts(system: InverseSystem, i: int, gamma_i: MonotoneGeodesic, j: int,
                    q: GraphPoint | None = None, limit: int = 100_000) -> list[MonotoneGeodesic]:
    """All lifts of ``gamma_i`` to ``X_j`` (optionally through ``q`` in ``X_j``)."""
    tower = {}
    if q is not None:
        tower[j] = q
        for k in range(j - 1, i - 1, -1):
            tower[k] = system.project(tower[k + 1], k)
    paths = [gamma_i]
    for k in range(i, j):
        nxt = []
        for path in paths:
            pe, pv = _pins_for(system, k + 1, tower.get(k + 1))
            try:
                cells = _lift_candidates(system, k, path, pe, pv)
            except GraphError:
                continue
            bf = _feasible_backward(cells)
            stack = [((), None, 0)]
            while stack:
                chosen, prev, pos = stack.pop()
                if pos == len(cells):
                    nxt.append(geodesic_from_edges(system, k + 1, chosen))
                    if len(nxt) > limit:
                        raise GraphError("too many lifts to enumerate")
                    continue
                for x in reversed(bf[pos]):
                    if prev is None or x[1] == prev:
                        stack.append((chosen + (x[0],), x[2], pos + 1))
        paths = nxt
    return paths


def base_geodesic(system: InverseSystem) -> MonotoneGeodesic:
    """The monotone geodesic of ``X_0`` covering the whole coordinate range."""
    g0 = system.levels[0]
    order = sorted(range(g0.n_edges), key=lambda k: min(system.phi[0][g0.edges[k].u],
                                                         system.phi[0][g0.edges[k].v]))
    return geodesic_from_edges(system, 0, order)


# ---------------------------------------------------------------------------
# monotone bigon condition


@dataclass
class BigonReport:
    level: int
    D: float
    pairs_checked: int
    min_feasible_D: float
    worst_pair: tuple | None = None
    counterexample: tuple | None = None

    @property
    def holds(self) -> bool:
        return self.counterexample is None and self.min_feasible_D < self.D


def _monotone_reach(system: InverseSystem, j: int, p: GraphPoint, upward: bool,
                    budget: Fraction) -> dict[int, Fraction]:
    """Vertices reachable from ``p`` by a phi-monotone path, with their phi gap."""
    g = system.levels[j]
    phi = system.phi[j]
    e = g.edges[p.edge]
    phi_p = system.phi_of(j, p)
    lo, hi = (e.u, e.v) if phi[e.v] >= phi[e.u] else (e.v, e.u)
    start = hi if upward else lo
    if p.s == 0 or p.s == e.length:
        start = e.u if p.s == 0 else e.v
    gap0 = abs(phi[start] - phi_p)
    if gap0 > budget:
        return {}
    out = {start: gap0}
    q = deque([start])
    while q:
        x = q.popleft()
        for k in g.incidence[x]:
            ek = g.edges[k]
            y = ek.v if ek.u == x else ek.u
            step = phi[y] - phi[x]
            if (step > 0) != upward or step == 0:
                continue
            gap = abs(phi[y] - phi_p)
            if gap <= budget and y not in out:
                out[y] = gap
                q.append(y)
    return out


def check_monotone_bigon(system: InverseSystem, i: int, D: float, j: int | None = None,
                         max_pairs: int = 2000, seed: int = 0) -> BigonReport:
    """Search for monotone bigons joining points of ``X_j`` over the same point of ``X_i``.

    Candidates are vertices and edge midpoints of ``X_j`` grouped by their
    exact image in ``X_i``.  For each pair the shortest pair of monotone
    segments with common endpoints is found by phi-monotone search bounded by
    ``D * m**-i``.
    """
    if j is None:
        j = min(i + 2, system.depth)
    if not 0 <= i <= j <= system.depth:
        raise GraphError("bad levels for bigon check")
    g = system.levels[j]
    groups: dict[tuple, list[GraphPoint]] = defaultdict(list)
    cands = [g.vertex_point(v) for v in range(g.n_vertices)]
    cands += [GraphPoint(k, e.length / 2) for k, e in enumerate(g.edges)]
    for p in cands:
        img = system.project_to(p, j, i)
        key = _canon_key(system.levels[i], img)
        groups[key].append(p)
    pairs = []
    for members in groups.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.append((members[a], members[b]))
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[k] for k in sorted(pick)]
    unit = Fraction(1, system.m) ** system.levels[i].level
    budget = Fraction(D) * unit if not isinstance(D, float) else Fraction(D).limit_denominator(10**9) * unit
    worst, worst_pair = 0.0, None
    for y1, y2 in pairs:
        if y1 == y2:
            continue
        lens = []
        for upward in (False, True):
            r1 = _monotone_reach(system, j, y1, upward, budget)
            r2 = _monotone_reach(system, j, y2, upward, budget)
            common = set(r1) & set(r2)
            if not common:
                lens = None
                break
            lens.append(min(max(r1[v], r2[v]) for v in common))
        if lens is None or (lens[0] + lens[1]) >= budget and not (lens[0] + lens[1] == 0):
            return BigonReport(i, float(D), len(pairs), math.inf, worst_pair, (y1, y2))
        ratio = float((lens[0] + lens[1]) / unit)
        if ratio > worst:
            worst, worst_pair = ratio, (y1, y2)
    return BigonReport(i, float(D), len(pairs), worst, worst_pair, None)


def _canon_key(g: MetricGraph, p: GraphPoint) -> tuple:
    v = g.vertex_of(p)
    if v is not None:
        return ("v", v)
    return ("e", p.edge, Fraction(p.s))
