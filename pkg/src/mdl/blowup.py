"""Finite-scale blow-ups of inverse-limit spaces.

A blow-up at ``p`` and scale ``r_n = m^-n`` re-indexes the tower so that
level ``n`` becomes level 0: distances are divided by ``r_n``, the measure
by ``mu(B(p, r_n))`` and the chart becomes ``phi_hat = (phi - phi(p)) / r_n``.
Nothing is resampled; all computations happen on the level ``K`` graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from networkx.utils import UnionFind

from .alberti import AlbertiRep
from .fragments import Domain, EuclideanSpace, Fragment, GraphHost
from .inverse_system import (
    InverseSystem,
    SimplicialProjection,
    _monotone_reach,
)
from .limit_space import LimitPoint, LimitSpace
from .lip_analysis import canonical_pullback_seminorm, graph_ball_candidates
from .metric_graph import Edge, GraphError, GraphPoint, GraphPoints, MetricGraph, subdivide


class ScaledHost(GraphHost):
    """A graph host whose distances are multiplied by ``factor``."""

    def __init__(self, graph: MetricGraph, factor: float):
        super().__init__(graph)
        self.factor = float(factor)

    def distance(self, x, y) -> float:
        return self.factor * super().distance(x, y)

    def distances_from(self, x, ys):
        return self.factor * super().distances_from(x, ys)

    def cross(self, xs, ys):
        return self.factor * super().cross(xs, ys)

    def paired(self, xs, ys):
        return self.factor * super().paired(xs, ys)


def generic_point(space: LimitSpace, rng: np.random.Generator, margin: float = 0.0) -> LimitPoint:
    """A point with an m-adically generic coordinate on a random monotone geodesic.

    The coordinate has ``K + 20`` random base-``m`` digits, and is kept at
    least ``margin`` away from the ends of the coordinate range.
    """
    m = space.m
    digits = rng.integers(0, m, size=space.K + 20)
    t = float(np.sum(digits * float(m) ** -np.arange(1, len(digits) + 1)))
    lo, hi = space.base_geodesic().interval
    t = lo + margin + (hi - lo - 2 * margin) * t
    geo = space.monotone_geodesic(rng)
    return space.point(geo.at(t))


@dataclass
class BlowupInstance:
    space: LimitSpace
    p: LimitPoint
    n: int
    R: float
    r_n: float
    phi_p: float
    sigma: float
    c: float
    ball_mass: float
    host: ScaledHost = field(repr=False, default=None)

    @property
    def bound(self) -> float:
        """Distance bracket in blown units."""
        return self.space.bound / self.r_n

    def d_hat(self, x, ys: GraphPoints) -> np.ndarray:
        top = x.top if isinstance(x, LimitPoint) else x
        return self.space.graph.distances_from(top, ys) / self.r_n

    def phi_hat(self, pts: GraphPoints) -> np.ndarray:
        return (self.space.phi_many(pts) - self.phi_p) / self.r_n

    def nu_hat_ball(self, q: GraphPoint, r: float) -> float:
        return self.space.graph.ball_measure(q, r * self.r_n) / self.ball_mass

    def nu_hat_bracket(self, q: GraphPoint, r: float) -> tuple[float, float]:
        b = self.space.mu_infinity_ball(q, r * self.r_n)
        return b.lower / self.ball_mass, b.upper / self.ball_mass

    def window_points(self, pts: GraphPoints) -> np.ndarray:
        return self.d_hat(self.p, pts) <= self.R

    def phi_window(self) -> tuple[float, float]:
        lo, hi = self.space.base_geodesic().interval
        a = max(self.phi_p - self.R * self.r_n, lo)
        b = min(self.phi_p + self.R * self.r_n, hi)
        return (a - self.phi_p) / self.r_n, (b - self.phi_p) / self.r_n


def blow_up(space: LimitSpace, p: LimitPoint | GraphPoint, n: int, R: float = 2.0,
            min_window_depth: int = 2) -> BlowupInstance:
    """Blow up ``space`` at ``p`` at scale ``m^-n``.

    ``sigma = m^a`` with ``a`` the fractional part of ``m^n phi(p)`` (the
    position of ``p`` inside its level-``n`` cell) and
    ``c = mu(B(p, r_n)) / mu(B(p, r_n / sigma))`` so that
    ``c * nu_hat(B(q, 1/sigma)) = 1``.
    """
    if isinstance(p, GraphPoint):
        p = space.point(p)
    if n < 0:
        raise GraphError("scale index must be >= 0")
    if space.K - n < min_window_depth:
        raise GraphError("insufficient depth")
    phi_p = space.phi(p)
    lo, hi = space.base_geodesic().interval
    if not space.system.signed and (phi_p <= lo or phi_p >= hi):
        raise GraphError("base point at a boundary value of phi")
    m = space.m
    r_n = float(m) ** -n
    a = (phi_p * m ** n) % 1.0
    sigma = float(m) ** a
    ball = space.graph.ball_measure(p.top, r_n)
    inner = space.graph.ball_measure(p.top, r_n / sigma)
    inst = BlowupInstance(space, p, n, float(R), r_n, phi_p, sigma, ball / inner, ball)
    inst.host = ScaledHost(space.graph, 1.0 / r_n)
    return inst


def window_system(inst: BlowupInstance) -> InverseSystem:
    """The re-indexed signed system: levels ``n..K`` restricted to a window around ``p``.

    The window is the component of ``phi^-1([a, b])`` containing ``p``,
    where ``[a, b]`` is the union of level-``n`` cells within ``R`` cells of
    ``p``.  Level ``j`` becomes level ``j - n``; lengths and masses are
    multiplied by ``m^n`` and ``phi_hat = (phi - a0) m^n`` with ``a0`` the
    start of ``p``'s level-``n`` cell, so everything stays exact.
    """
    space, n = inst.space, inst.n
    sysm = space.system
    m, K = sysm.m, space.K
    scale = Fraction(m) ** n
    unit = Fraction(1, m) ** n
    a0 = Fraction(math.floor(inst.phi_p * m ** n)) * unit
    J = int(math.ceil(inst.R))
    lo, hi = a0 - J * unit, a0 + (J + 1) * unit
    if not sysm.signed:
        lo, hi = max(lo, Fraction(0)), min(hi, Fraction(1))
    gK = sysm.levels[K]
    phiK = sysm.phi[K]
    inside = [k for k, e in enumerate(gK.edges)
              if lo <= min(phiK[e.u], phiK[e.v]) and max(phiK[e.u], phiK[e.v]) <= hi]
    uf = UnionFind()
    for k in inside:
        e = gK.edges[k]
        uf.union(("v", e.u), ("v", e.v))
    anchor = gK.edges[inst.p.top.edge]
    root = uf[("v", anchor.u)]
    sel = {K: sorted(k for k in inside if uf[("v", gK.edges[k].u)] == root)}
    if not sel[K]:
        raise GraphError("empty window")
    for j in range(K - 1, n - 1, -1):
        pr = sysm.projections[j]
        sel[j] = sorted({pr.edge_map[k] // m for k in sel[j + 1]})

    levels, vmaps, phis = {}, {}, {}
    for j in range(n, K + 1):
        g = sysm.levels[j]
        verts = sorted({x for k in sel[j] for x in (g.edges[k].u, g.edges[k].v)})
        vid = {v: i for i, v in enumerate(verts)}
        eid = {k: i for i, k in enumerate(sel[j])}
        edges = [Edge(vid[g.edges[k].u], vid[g.edges[k].v], g.edges[k].length * scale,
                      g.edges[k].mass * scale) for k in sel[j]]
        levels[j] = MetricGraph(len(verts), edges, level=j - n)
        vmaps[j] = (vid, eid)
        phis[j] = [(sysm.phi[j][v] - a0) * scale for v in verts]
    projections = []
    for j in range(n, K):
        pr = sysm.projections[j]
        g = sysm.levels[j]
        vid, eid = vmaps[j]
        vid1, eid1 = vmaps[j + 1]
        sub = subdivide(levels[j], m)
        nj, nloc = g.n_vertices, levels[j].n_vertices

        def sub_id(v):
            if v < nj:
                return vid[v]
            e, k = divmod(v - nj, m - 1)
            return nloc + eid[e] * (m - 1) + k

        src_edges = sorted(eid1, key=eid1.get)
        src_verts = sorted(vid1, key=vid1.get)
        vm = [sub_id(pr.vertex_map[w]) for w in src_verts]
        em = [eid[pr.edge_map[k] // m] * m + pr.edge_map[k] % m for k in src_edges]
        projections.append(SimplicialProjection(levels[j + 1], sub, vm, em))
    return InverseSystem(sysm.profile, [levels[j] for j in range(n, K + 1)], projections,
                         [phis[j] for j in range(n, K + 1)], signed=True)


# ---------------------------------------------------------------------------
# submersion and variation


@dataclass
class DefectStats:
    defects: np.ndarray
    bound: float
    flagged: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.defects)) if len(self.defects) else 0.0

    @property
    def max(self) -> float:
        return float(np.max(self.defects)) if len(self.defects) else 0.0

    @property
    def certified(self) -> float:
        """Median defect plus the truncation bracket: an upper bound for the limit."""
        return self.median + self.bound

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.defects, q)) if len(self.defects) else 0.0


def window_sample(inst: BlowupInstance, k: int, rng: np.random.Generator) -> GraphPoints:
    """``k`` points of the blown window, drawn from the measure restricted to it."""
    g = inst.space.graph
    D = g.point_vertex_distances(inst.p.top) / inst.r_n
    near = np.flatnonzero(np.minimum(D[g.tails], D[g.heads]) <= inst.R)
    w = g.masses[near] / g.masses[near].sum()
    out_e, out_s = [], []
    while len(out_e) < k:
        e = near[rng.choice(len(near), size=2 * k, p=w)]
        s = rng.random(2 * k) * g.lengths[e]
        pts = GraphPoints(e, s)
        ok = inst.window_points(pts)
        out_e += list(e[ok])
        out_s += list(s[ok])
    return GraphPoints(out_e[:k], out_s[:k])


def fiber_points(inst: BlowupInstance, t_hat: float) -> GraphPoints:
    """All level-``K`` points with ``phi_hat = t_hat`` (exact up to rounding)."""
    space = inst.space
    target = inst.phi_p + t_hat * inst.r_n
    start = space.system.edge_phi_start[space.K]
    L = space.graph.lengths
    fwd = space.system.edge_forward[space.K]
    hit = np.flatnonzero((start <= target) & (target <= start + L))
    off = target - start[hit]
    off = np.where(fwd[hit], off, L[hit] - off)
    return GraphPoints(hit, np.clip(off, 0.0, L[hit]))


def submersion_check(inst: BlowupInstance, pairs: int = 200, rng: np.random.Generator | None = None) -> DefectStats:
    """``| d_hat(y1, fiber(t2)) - |phi_hat(y1) - t2| |`` over sampled ``y1, t2``.

    The fiber is enumerated exactly at level ``K``; ``bound`` is the blown
    distance bracket, so ``median + bound`` bounds the limit-space defect.
    """
    rng = rng or np.random.default_rng(0)
    ys = window_sample(inst, pairs, rng)
    a, b = inst.phi_window()
    ts = a + (b - a) * rng.random(pairs)
    phis = inst.phi_hat(ys)
    out, flagged = [], 0
    for i in range(pairs):
        fib = fiber_points(inst, ts[i])
        if len(fib) == 0:
            flagged += 1
            continue
        d = float(np.min(inst.d_hat(ys[i], fib)))
        out.append(abs(d - abs(phis[i] - ts[i])))
    return DefectStats(np.array(out), inst.bound, flagged)


def lipschitz_half_check(inst: BlowupInstance, pairs: int = 200, rng=None) -> float:
    """Largest ``|phi_hat(y1) - phi_hat(y2)| - d_hat(y1, y2)`` over sampled pairs."""
    rng = rng or np.random.default_rng(0)
    ys = window_sample(inst, 2 * pairs, rng)
    ph = inst.phi_hat(ys)
    worst = -np.inf
    for i in range(pairs):
        d = float(inst.d_hat(ys[i], ys[pairs + i:pairs + i + 1])[0])
        worst = max(worst, abs(ph[i] - ph[pairs + i]) - d)
    return worst


@dataclass
class VariationRow:
    center: int
    radius: float
    var: float
    predicted: float
    residual: float


def variation_check(inst: BlowupInstance, alpha: Callable = lambda t: t, alpha_slope: float = 1.0,
                    n_pairs: int = 50, rng: np.random.Generator | None = None,
                    norm_dphi: float = 1.0) -> list[VariationRow]:
    """``var(u, y, r) = sup_{B(y,r)} |u - u(y)|`` against ``r |alpha'| ||d phi||`` for ``u = alpha o phi_hat``.

    Centers are sampled in the inner half of the window and radii are
    capped so that balls stay inside the coordinate range.
    """
    rng = rng or np.random.default_rng(0)
    a, b = inst.phi_window()
    rows = []
    g = inst.space.graph
    cands = window_sample(inst, 8 * n_pairs, rng)
    ph = inst.phi_hat(cands)
    keep = np.flatnonzero((ph > a / 2) & (ph < b / 2))
    for i in keep[:n_pairs]:
        y = cands[int(i)]
        room = min(ph[i] - a, b - ph[i])
        r = float(room * (0.1 + 0.8 * rng.random()))
        pts = graph_ball_candidates(g, y, r * inst.r_n)
        u = np.asarray(alpha(inst.phi_hat(pts)), float)
        u0 = float(np.asarray(alpha(np.array([ph[i]])), float)[0])
        var = float(np.max(np.abs(u - u0)))
        pred = r * abs(alpha_slope) * norm_dphi
        rows.append(VariationRow(int(i), r, var, pred, abs(var - pred)))
    return rows


# ---------------------------------------------------------------------------
# representations


def blow_up_rep(inst: BlowupInstance, parent_rep: AlbertiRep, n_samples: int = 257) -> AlbertiRep:
    """Rescale a monotone representation to the window.

    Each parent geodesic meeting the blown ball ``B(q, R)`` becomes a
    fragment on ``[-R, R]`` (clipped to the coordinate range) in blown time
    ``s = (t - phi(p)) / r_n``; its weight is ``P * r_n / mu(B(p, r_n))`` so
    the result represents ``nu_hat``.
    """
    a, b = inst.phi_window()
    frags, weights = [], []
    for gam, w in zip(parent_rep.fragments, parent_rep.weights):
        geo = getattr(gam, "geodesic", None)
        if geo is None:
            raise ValueError("parent representation must consist of monotone geodesics")
        func = (lambda s, geo=geo: geo.points(inst.phi_p + inst.r_n * np.asarray(s, float)))
        ts = np.linspace(a, b, n_samples)
        pts = func(ts)
        if not np.any(inst.window_points(pts)):
            continue
        frag = Fragment(Domain([(a, b)]), ts, pts, inst.host, 1.0, func)
        ell = float(inst.space.graph.lengths.max()) / inst.r_n
        t0 = (float(geo.t0) - inst.phi_p) / inst.r_n
        k0 = math.ceil((a - t0) / ell)
        k1 = math.floor((b - t0) / ell)
        frag.breaks = t0 + ell * np.arange(k0, k1 + 1)
        frag.geodesic = geo
        frags.append(frag)
        weights.append(w * inst.r_n / inst.ball_mass)
    return AlbertiRep(frags, weights)


def unit_speed_defect(inst: BlowupInstance, rep: AlbertiRep) -> float:
    """Largest ``| d_hat(g(s), g(t)) - |s - t| |`` over consecutive and random sample pairs."""
    worst = 0.0
    rng = np.random.default_rng(0)
    for gam in rep.fragments:
        ts = gam.times
        i = np.concatenate([np.arange(len(ts) - 1), rng.integers(0, len(ts), 16)])
        j = np.concatenate([np.arange(1, len(ts)), rng.integers(0, len(ts), 16)])
        d = gam.host.paired(gam.points[i], gam.points[j])
        worst = max(worst, float(np.max(np.abs(d - np.abs(ts[i] - ts[j])))))
        ph = inst.phi_hat(gam.points)
        worst = max(worst, float(np.max(np.abs(ph - ts))))
    return worst


def window_cylinder_residuals(inst: BlowupInstance, rep: AlbertiRep, level: int) -> list[tuple[int, float, float]]:
    """``(edge, nu_hat(cell), rep(cell))`` for level-``level`` cells inside the blown window."""
    space = inst.space
    g = space.system.levels[level]
    rows = []
    for k, e in enumerate(g.edges):
        a = min(space.system.phi[level][e.u], space.system.phi[level][e.v])
        lo, hi = float(a), float(a + e.length)
        wa, wb = inst.phi_window()
        if (lo - inst.phi_p) / inst.r_n < wa or (hi - inst.phi_p) / inst.r_n > wb:
            continue
        # cells must be reached by the represented lines
        if not np.any(inst.window_points(_lift_edge_points(space, level, k))):
            continue
        ref = float(e.mass) / inst.ball_mass

        def ind(pts, k=k):
            return (space.project_many(pts, level).edges == k).astype(float)

        rows.append((k, ref, rep.integrate(ind)))
    return rows


def _lift_edge_points(space: LimitSpace, level: int, k: int) -> GraphPoints:
    g = space.graph
    proj = space.project_many(GraphPoints(np.arange(g.n_edges), g.lengths / 2), level)
    sel = np.flatnonzero(proj.edges == k)
    return GraphPoints(sel, g.lengths[sel] / 2)


# ---------------------------------------------------------------------------
# factoring


class TreeTarget:
    """A finite metric tree used as the target of Lipschitz maps."""

    def __init__(self, graph: MetricGraph):
        n_used = sum(1 for v in range(graph.n_vertices) if graph.incidence[v])
        if not graph.is_connected() or graph.n_edges != n_used - 1:
            raise GraphError("not a tree")
        self.graph = graph
        self.host = GraphHost(graph)

    @classmethod
    def tripod(cls, leg: float = 1.0) -> "TreeTarget":
        return cls(MetricGraph(4, [Edge(0, k, leg, leg) for k in (1, 2, 3)]))

    def cross(self, xs, ys):
        return self.host.cross(xs, ys)

    def paired(self, xs, ys):
        return self.host.paired(xs, ys)

    @classmethod
    def load(cls, path) -> "TreeTarget":
        import json

        with open(path) as fh:
            return cls(MetricGraph.from_dict(json.load(fh)))


class LineTarget(EuclideanSpace):
    def __init__(self):
        super().__init__(1, 2)


@dataclass
class FactoringReport:
    speed_estimate: float
    expected_speed: float
    speed_defect: float
    constancy_defect: float
    fiber_defect: float
    fiber_defect_all: float
    bigon_failures: int
    pairs_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return (self.bigon_failures == 0 and self.fiber_defect <= self.tolerance
                and self.speed_defect <= self.tolerance * max(1.0, self.expected_speed))

    def to_dict(self) -> dict:
        d = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}
        d["passed"] = self.passed
        return d


def _bigon_joined(space: LimitSpace, y1: GraphPoint, y2: GraphPoint, budget: float) -> bool:
    b = Fraction(budget).limit_denominator(10 ** 12)
    for upward in (False, True):
        r1 = _monotone_reach(space.system, space.K, y1, upward, b)
        r2 = _monotone_reach(space.system, space.K, y2, upward, b)
        if not set(r1) & set(r2):
            return False
    return True


def factoring_check(inst: BlowupInstance, F: Callable, target, lines: int = 8,
                    rng: np.random.Generator | None = None, n_fibers: int = 12,
                    D: float | None = None, tolerance: float = 1e-6) -> FactoringReport:
    """Check that the blown map ``G`` factors through the blown chart.

    (i) along blown monotone lines through the window the symmetric speed
    ``d_W(G(g(s)), G(g(-s))) / 2s`` is compared with
    ``||d phi||_{rho_F}`` at ``p`` (both in the ``r_n`` frame);
    (ii) for a line target, points of one ``phi_hat`` fiber must have the
    same image; for a tree target, only fiber points joined by a monotone
    bigon of size ``D r_n`` (union-find classes) must, and fiber pairs not
    joined are counted as bigon failures.
    """
    if isinstance(target, MetricGraph):
        target = TreeTarget(target)
    rng = rng or np.random.default_rng(0)
    space = inst.space
    is_tree = isinstance(target, TreeTarget)
    D = 2.0 * space.m if D is None else D
    a, b = inst.phi_window()
    smax = 0.9 * min(-a, b) if a < 0 < b else 0.0
    seminorm = canonical_pullback_seminorm(space, F, target, inst.p, rng=np.random.default_rng(0))
    expected = seminorm.value
    speeds, const_def = [], 0.0
    if smax > 0:
        ss = smax * np.array([1.0, 0.5, 0.25, 0.125])
        for k in range(lines):
            geo = space.monotone_geodesic(rng if k else None, through=inst.p.top)
            P = geo.points(inst.phi_p + inst.r_n * ss)
            M = geo.points(inst.phi_p - inst.r_n * ss)
            c0 = geo.points([inst.phi_p])
            dw = target.paired(F(P), F(M)) / inst.r_n
            sym = dw / (2 * ss)
            speeds.append(float(np.mean(sym)))
            one = target.paired(F(P), F(GraphPoints(np.repeat(c0.edges, len(ss)),
                                                    np.repeat(c0.offsets, len(ss))))) / inst.r_n / ss
            const_def = max(const_def, float(np.ptp(one)))
    speed = float(np.mean(speeds)) if speeds else 0.0

    fib_def = fib_all = 0.0
    failures = checked = 0
    ts = a + (b - a) * (np.arange(n_fibers) + 0.5) / n_fibers
    for t in ts:
        fib = fiber_points(inst, float(t))
        fib = fib[np.flatnonzero(inst.window_points(fib))] if len(fib) else fib
        if len(fib) < 2:
            continue
        if len(fib) > 24:
            fib = fib[np.sort(rng.choice(len(fib), 24, replace=False))]
        img = F(fib)
        W = target.cross(img, img) / inst.r_n
        fib_all = max(fib_all, float(W.max()))
        if not is_tree:
            fib_def = max(fib_def, float(W.max()))
            checked += len(fib) * (len(fib) - 1) // 2
            continue
        uf = UnionFind(range(len(fib)))
        for i in range(len(fib)):
            for j in range(i + 1, len(fib)):
                checked += 1
                if uf[i] == uf[j] or _bigon_joined(space, fib[i], fib[j], D * inst.r_n):
                    uf.union(i, j)
                else:
                    failures += 1
        for i in range(len(fib)):
            for j in range(i + 1, len(fib)):
                if uf[i] == uf[j]:
                    fib_def = max(fib_def, float(W[i, j]))
    return FactoringReport(speed, expected, abs(speed - expected), const_def, fib_def, fib_all,
                           failures, checked, tolerance)


def tunnel_tripod_map(space: LimitSpace, leg: float = 1.0):
    """Injective map of the two-arm tunnel space into a tripod.

    Points on arm ``a`` (first copy at level 1) go to leg 1 at distance
    ``phi`` from the center, arm ``b`` to leg 2.
    """
    tree = TreeTarget.tripod(leg)
    n_arm = space.system.levels[1].n_edges // 2

    def F(pts: GraphPoints) -> GraphPoints:
        arm = space.project_many(pts, 1).edges >= n_arm
        ph = np.clip(space.phi_many(pts), 0.0, leg)
        edge = np.where(arm, 1, 0)
        return GraphPoints(edge, ph)

    return tree, F


def line_map(space: LimitSpace, psi: Callable = lambda t: t) -> Callable:
    """``F = psi o phi`` into the line (points as ``(n, 1)`` arrays)."""
    return lambda pts: np.asarray(psi(space.phi_many(pts)), float).reshape(-1, 1)


def factoring_ladder(system: InverseSystem, depths: Sequence[int], make_map: Callable, p_seed: int = 0,
                     window: float = 2.0, **kw) -> list[tuple[int, FactoringReport]]:
    """``factoring_check`` at ``n = K - 2`` for each ``K``, same base coordinate."""
    out = []
    rng = np.random.default_rng(p_seed)
    deepest = LimitSpace(system, max(depths))
    p_deep = generic_point(deepest, rng, margin=0.25)
    for K in depths:
        space = LimitSpace(system, K)
        p = space.point(deepest.project_many(GraphPoints([p_deep.top.edge], [float(p_deep.top.s)]), K)[0])
        inst = blow_up(space, p, K - 2, window)
        F, target = make_map(space)
        out.append((K, factoring_check(inst, F, target, rng=np.random.default_rng(p_seed), **kw)))
    return out
