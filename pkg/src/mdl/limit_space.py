"""Finite-depth model of the inverse limit of an admissible system.

The limit space is approximated by its level ``K`` graph.  Every query that
depends on the truncation returns a bracket: level ``K`` distances
underestimate the limit distance by at most ``2 theta m^-K / (m - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .fragments import Domain, Fragment, GraphHost
from .inverse_system import (
    InverseSystem,
    MonotoneGeodesic,
    geodesic_from_edges,
    lift_monotone_geodesic,
)
from .metric_graph import GraphError, GraphPoint, GraphPoints, MetricGraph


@dataclass(frozen=True)
class LimitPoint:
    """Compatible tower of graph points, ``coords[i]`` in ``X_i``."""

    coords: tuple[GraphPoint, ...]

    @property
    def depth(self) -> int:
        return len(self.coords) - 1

    @property
    def top(self) -> GraphPoint:
        return self.coords[-1]


@dataclass(frozen=True)
class DistanceBracket:
    estimate: float
    bound: float
    phi_lower: float

    @property
    def lower(self) -> float:
        return max(self.estimate, self.phi_lower)

    @property
    def upper(self) -> float:
        return self.estimate + self.bound

    def contains(self, value: float, atol: float = 1e-12) -> bool:
        return self.lower - atol <= value <= self.upper + atol


@dataclass(frozen=True)
class MeasureBracket:
    estimate: float
    lower: float
    upper: float
    bound: float


class LimitSpace:
    """``(X_inf, d_inf, mu_inf)`` seen through level ``K`` of ``system``."""

    def __init__(self, system: InverseSystem, depth: int | None = None):
        K = system.depth if depth is None else int(depth)
        if not 0 <= K <= system.depth:
            raise GraphError(f"depth {K} outside the system's 0..{system.depth}")
        self.system = system
        self.K = K
        self.graph: MetricGraph = system.levels[K]
        self.host = GraphHost(self.graph)
        p = system.profile
        scale = float(Fraction(1, p.m) ** self.graph.level)
        self.bound = 2.0 * float(p.theta) * scale / (p.m - 1)

    @property
    def m(self) -> int:
        return self.system.m

    # -- points --------------------------------------------------------

    def point(self, top: GraphPoint) -> LimitPoint:
        """Tower over a level ``K`` point."""
        self.graph._check(top)
        coords = [top]
        for k in range(self.K - 1, -1, -1):
            coords.append(self.system.project(coords[-1], k))
        return LimitPoint(tuple(reversed(coords)))

    def vertex_point(self, v: int) -> LimitPoint:
        return self.point(self.graph.vertex_point(v))

    def at_phi(self, t, rng: np.random.Generator | None = None) -> LimitPoint:
        """A point with coordinate ``t`` on a monotone geodesic (lowest branch unless ``rng``)."""
        geo = self.monotone_geodesic(rng)
        return self.point(geo.at(Fraction(t) if not isinstance(t, float) else t))

    @property
    def dense_set(self) -> GraphPoints:
        """``D_X``: every vertex of ``X_K`` (an ``m^-K``-dense set)."""
        return self.host.vertices()

    def phi(self, p: LimitPoint | GraphPoint) -> float:
        top = p.top if isinstance(p, LimitPoint) else p
        return float(self.system.phi_of(self.K, top))

    def phi_many(self, pts: GraphPoints) -> np.ndarray:
        return self.system.phi_many(self.K, pts)

    def project_many(self, pts: GraphPoints, k: int) -> GraphPoints:
        """Images in ``X_k`` of level ``K`` points."""
        for i in range(self.K - 1, k - 1, -1):
            pts = self.system.project_many(pts, i)
        return pts

    def sample_points(self, n: int, rng: np.random.Generator) -> GraphPoints:
        """``n`` points drawn from ``mu_K`` (edge by mass, then uniform offset)."""
        w = self.graph.masses / self.graph.masses.sum()
        e = rng.choice(self.graph.n_edges, size=n, p=w)
        return GraphPoints(e, rng.random(n) * self.graph.lengths[e])

    # -- metric and measure --------------------------------------------

    def d_infinity(self, x: LimitPoint, y: LimitPoint) -> DistanceBracket:
        if x.depth != y.depth:
            raise GraphError("depth mismatch")
        if x.depth != self.K:
            raise GraphError(f"points have depth {x.depth}, space has depth {self.K}")
        est = self.graph.distance(x.top, y.top)
        return DistanceBracket(est, self.bound, abs(self.phi(x) - self.phi(y)))

    def distances_from(self, x: LimitPoint | GraphPoint, ys: GraphPoints) -> np.ndarray:
        top = x.top if isinstance(x, LimitPoint) else x
        return self.graph.distances_from(top, ys)

    def mu_infinity_ball(self, p: LimitPoint | GraphPoint, r: float) -> MeasureBracket:
        if r < 0:
            raise GraphError("negative radius")
        top = p.top if isinstance(p, LimitPoint) else p
        est = self.graph.ball_measure(top, r)
        lo = self.graph.ball_measure(top, r - self.bound) if r >= self.bound else 0.0
        hi = self.graph.ball_measure(top, r + self.bound)
        return MeasureBracket(est, lo, hi, self.bound)

    def cell_mass(self, level: int, edge: int) -> Fraction:
        """``mu_inf`` of the cylinder over an edge of ``X_level`` (exact)."""
        return self.system.levels[level].edges[edge].mass

    # -- monotone geodesics --------------------------------------------

    def base_geodesic(self) -> MonotoneGeodesic:
        g0 = self.system.levels[0]
        phi0 = self.system.phi[0]
        order = sorted(range(g0.n_edges), key=lambda k: min(phi0[g0.edges[k].u], phi0[g0.edges[k].v]))
        return geodesic_from_edges(self.system, 0, order)

    def monotone_geodesic(self, rng: np.random.Generator | None = None,
                          through: GraphPoint | None = None) -> MonotoneGeodesic:
        """A full-length monotone geodesic of ``X_K``; branches by mass when ``rng`` given."""
        base = self.base_geodesic()
        if self.K == 0:
            return base
        return lift_monotone_geodesic(self.system, 0, base, q=through, j=self.K, rng=rng)

    def monotone_geodesic_through(self, p: LimitPoint | GraphPoint, direction: int = 1,
                                  rng: np.random.Generator | None = None,
                                  n_samples: int = 1025) -> Fragment:
        """Fragment ``gamma`` with ``phi o gamma = direction * id`` passing through ``p``.

        For ``direction = 1`` we have ``gamma(phi(p)) = p``; for ``-1`` the
        parametrisation is reversed, so ``gamma(-phi(p)) = p``.
        """
        if direction not in (1, -1):
            raise GraphError("direction must be +1 or -1")
        top = p.top if isinstance(p, LimitPoint) else p
        geo = self.monotone_geodesic(rng, through=top)
        return geodesic_fragment(self, geo, direction, n_samples)

    def __repr__(self) -> str:
        return f"LimitSpace(K={self.K}, m={self.m}, edges={self.graph.n_edges}, bound={self.bound:.3g})"


def geodesic_fragment(space: LimitSpace, geo: MonotoneGeodesic, direction: int = 1,
                      n_samples: int = 1025) -> Fragment:
    a, b = geo.interval
    if direction == 1:
        dom = Domain([(a, b)])
        func = geo.points
    else:
        dom = Domain([(-b, -a)])
        func = lambda ts: geo.points(-np.asarray(ts, float))  # noqa: E731
    lo, hi = dom.intervals[0]
    ts = np.linspace(lo, hi, n_samples)
    frag = Fragment(dom, ts, func(ts), space.host, lip_bound=1.0, func=func)
    frag.geodesic = geo
    frag.direction = direction
    return frag
