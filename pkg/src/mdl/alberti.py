"""Alberti representations with a discrete transverse measure.

A representation is a finite list of fragments with weights ``P_gamma`` and
per-fragment densities ``h_gamma``; it represents the measure

    g -> sum_gamma P_gamma * int g(gamma(t)) h_gamma(t) dt.

Integrals along fragments use composite Gauss-Legendre quadrature over the
fragment's break points (level edges for graph geodesics), so cylinder
functions are integrated exactly up to rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .fragments import Domain, EuclideanSpace, Fragment, GraphHost
from .inverse_system import MonotoneGeodesic, enumerate_lifts
from .limit_space import LimitSpace, geodesic_fragment
from .metric_graph import GraphPoints

GL_NODES = 8


def _ones(ts):
    return np.ones(len(np.atleast_1d(ts)))


@dataclass
class AlbertiRep:
    fragments: list
    weights: np.ndarray
    densities: list = field(default_factory=list)  # per fragment: callable(gamma, ts) or None
    exact_weights: list | None = None  # Fractions when known exactly

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.weights) != len(self.fragments):
            raise ValueError("one weight per fragment required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if not self.densities:
            self.densities = [None] * len(self.fragments)

    def __len__(self) -> int:
        return len(self.fragments)

    def density_at(self, gamma: Fragment, ts) -> np.ndarray:
        k = next(i for i, g in enumerate(self.fragments) if g is gamma)
        h = self.densities[k]
        return _ones(ts) if h is None else np.asarray(h(gamma, ts), float)

    # -- integration ---------------------------------------------------

    def line_integrals(self, g: Callable, nodes: int = GL_NODES) -> np.ndarray:
        """``int g(gamma(t)) h(t) dt`` for each fragment."""
        return np.array([_line_integral(gam, g, h, nodes)
                         for gam, h in zip(self.fragments, self.densities)])

    def integrate(self, g: Callable, nodes: int = GL_NODES) -> float:
        if not len(self):
            return 0.0
        return float(np.dot(self.weights, self.line_integrals(g, nodes)))

    def total_mass(self) -> float:
        return self.integrate(lambda pts: np.ones(_npts(pts)))

    # -- transforms ----------------------------------------------------

    def scaled(self, k: int, factor: float) -> "AlbertiRep":
        w = self.weights.copy()
        w[k] *= factor
        return AlbertiRep(list(self.fragments), w, list(self.densities))

    def project(self, space: LimitSpace, level: int) -> "AlbertiRep":
        """Push every graph fragment down to ``X_level`` (same times, same weights)."""
        host = GraphHost(space.system.levels[level])
        frags = []
        for gam in self.fragments:
            func = (lambda ts, f=gam.func: space.project_many(f(ts), level)) if gam.func else None
            pts = space.project_many(gam.points, level)
            new = Fragment(gam.domain, gam.times, pts, host, gam.lip_bound, func)
            new.breaks = getattr(gam, "breaks", None)
            frags.append(new)
        return AlbertiRep(frags, self.weights.copy(), list(self.densities), self.exact_weights)

    # -- io ------------------------------------------------------------

    def to_dict(self) -> dict:
        dens = []
        for gam, h in zip(self.fragments, self.densities):
            if h is None:
                dens.append("const")
            else:
                mids = 0.5 * (gam.times[1:] + gam.times[:-1])
                dens.append({"piecewise": np.asarray(h(gam, mids), float).tolist()})
        return {
            "lines": [_line_dict(g) for g in self.fragments],
            "weights": self.weights.tolist(),
            "density": dens,
        }

    @classmethod
    def from_dict(cls, d: dict, host) -> "AlbertiRep":
        frags = [_line_from_dict(x, host) for x in d["lines"]]
        dens = []
        for gam, spec in zip(frags, d.get("density", ["const"] * len(frags))):
            if spec == "const":
                dens.append(None)
            else:
                vals = np.asarray(spec["piecewise"], float)
                dens.append(lambda g, ts, v=vals, t=gam.times: v[np.clip(
                    np.searchsorted(t, np.atleast_1d(ts), side="right") - 1, 0, len(v) - 1)])
        return cls(frags, d["weights"], dens)


def _line_dict(gam: Fragment) -> dict:
    d = gam.to_dict()
    geo = getattr(gam, "geodesic", None)
    if geo is not None:
        d["geodesic"] = {
            "level": geo.level, "edges": list(geo.edges), "t0": str(geo.t0),
            "edge_length": str(geo.edge_length), "forward": list(geo.forward),
            "domain": list(geo.domain) if geo.domain is not None else None,
            "direction": getattr(gam, "direction", 1),
        }
    br = getattr(gam, "breaks", None)
    if br is not None:
        d["breaks"] = np.asarray(br, float).tolist()
    return d


def _line_from_dict(d: dict, host) -> Fragment:
    gam = Fragment.from_dict(d, host)
    g = d.get("geodesic")
    if g is not None:
        geo = MonotoneGeodesic(g["level"], tuple(g["edges"]), Fraction(g["t0"]), Fraction(g["edge_length"]),
                               tuple(g["forward"]), tuple(g["domain"]) if g["domain"] is not None else None)
        sign = g.get("direction", 1)
        gam.func = geo.points if sign == 1 else (lambda ts, geo=geo: geo.points(-np.asarray(ts, float)))
        gam.geodesic, gam.direction = geo, sign
    if "breaks" in d:
        gam.breaks = np.asarray(d["breaks"], float)
    return gam


def _npts(pts) -> int:
    return len(pts)


def _breaks(gam: Fragment) -> list[np.ndarray]:
    """Quadrature break points per domain interval."""
    custom = getattr(gam, "breaks", None)
    out = []
    for a, b in gam.domain.intervals:
        if b <= a:
            continue
        if custom is not None:
            inner = custom[(custom > a) & (custom < b)]
            out.append(np.concatenate([[a], inner, [b]]))
        elif gam.func is not None:
            out.append(np.linspace(a, b, 65))
        else:
            ts = gam.times[(gam.times >= a) & (gam.times <= b)]
            out.append(ts)
    return out


def _line_integral(gam: Fragment, g: Callable, h, nodes: int) -> float:
    total = 0.0
    if gam.func is None:
        # sample-only fragments: trapezoid over the samples
        for br in _breaks(gam):
            if len(br) < 2:
                continue
            idx = np.searchsorted(gam.times, br)
            vals = np.asarray(g(gam.host.take(gam.points, idx)), float).ravel()
            if h is not None:
                vals = vals * np.asarray(h(gam, br), float)
            total += float(np.trapezoid(vals, br))
        return total
    x, w = np.polynomial.legendre.leggauss(nodes)
    for br in _breaks(gam):
        a, b = br[:-1], br[1:]
        half = 0.5 * (b - a)
        ts = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
        flat = ts.ravel()
        vals = np.asarray(g(gam.func(flat)), float).ravel()
        if h is not None:
            vals = vals * np.asarray(h(gam, flat), float)
        total += float(np.sum(vals.reshape(ts.shape) * w[None, :] * half[:, None]))
    return total


# ---------------------------------------------------------------------------
# constructions


def fubini_rep(N: int, direction: int = 0, grid: int = 1000) -> AlbertiRep:
    """Lines ``x + t e_direction`` over ``[0, 1]^N`` with midpoint base points."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0 <= direction < N:
        raise ValueError("direction out of range")
    host = EuclideanSpace(N, 2)
    others = [k for k in range(N) if k != direction]
    if others:
        mids = (np.arange(grid) + 0.5) / grid
        base = np.stack(np.meshgrid(*([mids] * len(others)), indexing="ij"), axis=-1).reshape(-1, len(others))
        weight = float(grid) ** -len(others)
    else:
        base = np.zeros((1, 0))
        weight = 1.0
    frags = []
    for b in base:
        x0 = np.zeros(N)
        x0[others] = b
        e = np.zeros(N)
        e[direction] = 1.0
        func = lambda ts, x0=x0, e=e: x0[None, :] + np.asarray(ts, float).reshape(-1, 1) * e[None, :]  # noqa: E731
        ts = np.array([0.0, 0.5, 1.0])
        gam = Fragment(Domain([(0.0, 1.0)]), ts, func(ts), host, 1.0, func)
        gam.breaks = np.linspace(0.0, 1.0, 9)
        frags.append(gam)
    return AlbertiRep(frags, np.full(len(frags), weight))


class StratifiedChooser:
    """Branch chooser that consumes one stratified uniform by inverse CDF.

    The first choices (the coarse levels) are stratified across lines; once
    the uniform's resolution runs out further choices fall back to ``rng``.
    """

    def __init__(self, u: float, rng: np.random.Generator, min_width: float = 1e-9):
        self.u = float(u)
        self.width = 1.0
        self.rng = rng
        self.min_width = min_width

    def choose(self, probs) -> int:
        probs = np.asarray(probs, float)
        if self.width < self.min_width:
            return int(self.rng.choice(len(probs), p=probs))
        c = np.cumsum(probs)
        k = int(min(np.searchsorted(c, self.u, side="right"), len(probs) - 1))
        lo = c[k - 1] if k else 0.0
        self.u = (self.u - lo) / probs[k] if probs[k] > 0 else 0.0
        self.u = min(max(self.u, 0.0), np.nextafter(1.0, 0.0))
        self.width *= probs[k]
        return k


def monotone_rep(space: LimitSpace, lines_budget: int = 1000, seed: int = 0,
                 mode: str = "sample", n_samples: int = 65) -> AlbertiRep:
    """Monotone-geodesic representation of ``mu_K``.

    ``sample``: ``lines_budget`` full-length geodesics whose branches are
    chosen by the mass split at every lifted cell, using stratified
    uniforms (seeded); weights ``1 / lines_budget``.
    ``enumerate``: every lift of the base geodesic to ``X_K`` with its exact
    branch-probability product as weight (small ``K`` only).
    """
    system = space.system
    ell = float(space.graph.lengths.max())
    if mode == "enumerate":
        geos = enumerate_lifts(system, 0, space.base_geodesic(), space.K) if space.K else [space.base_geodesic()]
        exact = [branch_probability(space, g) for g in geos]
        weights = [float(w) for w in exact]
    elif mode == "sample":
        rng = np.random.default_rng(seed)
        n = int(lines_budget)
        us = (np.arange(n) + rng.random(n)) / n
        rng.shuffle(us)
        geos = [space.monotone_geodesic(StratifiedChooser(u, rng)) if space.K else space.base_geodesic()
                for u in us]
        exact = None
        weights = [1.0 / n] * n
    else:
        raise ValueError(f"unknown mode {mode!r}")
    frags = []
    for g in geos:
        frag = geodesic_fragment(space, g, 1, n_samples)
        a, b = g.interval
        frag.breaks = a + ell * np.arange(int(round((b - a) / ell)) + 1)
        frags.append(frag)
    return AlbertiRep(frags, weights, exact_weights=exact)


def branch_probability(space: LimitSpace, geo) -> Fraction:
    """Product over levels of ``mass(chosen edge) / mass(cell)`` along a lift."""
    system = space.system
    prob = Fraction(1)
    edges = list(geo.edges)
    for i in range(space.K - 1, -1, -1):
        pr = system.projections[i]
        src = system.levels[i + 1]
        tgt = pr.target_subdivided
        for k in edges:
            c = pr.edge_map[k]
            prob *= Fraction(src.edges[k].mass) / Fraction(tgt.edges[c].mass)
        parents = []
        for k in edges:
            par = pr.edge_map[k] // system.m
            if not parents or parents[-1] != par:
                parents.append(par)
        edges = parents
    return prob


def exact_cylinder_integral(rep: AlbertiRep, space: LimitSpace, level: int, edge: int) -> Fraction:
    """``sum P_gamma * |{t : gamma(t) in cell}|`` in exact arithmetic.

    Needs exact weights (``mode='enumerate'``); a level-``K`` geodesic spends
    time ``m^-K`` on each of its edges.
    """
    if rep.exact_weights is None:
        raise ValueError("representation has no exact weights")
    ell = space.system.edge_length(space.K)
    total = Fraction(0)
    for gam, w in zip(rep.fragments, rep.exact_weights):
        geo = gam.geodesic
        pts = GraphPoints(list(geo.edges), [float(ell) / 2] * len(geo.edges))
        hit = space.project_many(pts, level).edges == edge
        total += w * ell * int(np.sum(hit))
    return total


def cylinder_indicator(space: LimitSpace, level: int, edge: int) -> Callable:
    def g(pts: GraphPoints) -> np.ndarray:
        return (space.project_many(pts, level).edges == edge).astype(float)
    return g


# ---------------------------------------------------------------------------
# verification, restriction and gluing


@dataclass
class ResidualRow:
    name: str
    exact: float
    rep_value: float
    residual: float
    ci_width: float


def verify_rep(rep: AlbertiRep, mu_oracle: Callable, test_functions: dict) -> list[ResidualRow]:
    """Residual ``|int g dmu - rep(g)|`` per test function, with a 95% MC width.

    ``mu_oracle(g)`` returns the exact (or reference) integral of ``g``.
    """
    rows = []
    for name, g in test_functions.items():
        I = rep.line_integrals(g)
        val = float(np.dot(rep.weights, I))
        W = rep.weights.sum()
        mean = val / W if W > 0 else 0.0
        width = 1.96 * float(np.sqrt(np.sum(rep.weights ** 2 * (I - mean) ** 2))) if len(I) > 1 else 0.0
        ref = float(mu_oracle(g))
        rows.append(ResidualRow(name, ref, val, abs(ref - val), width))
    return rows


def restrict_rep(rep: AlbertiRep, U: Callable) -> AlbertiRep:
    """Multiply every density by the indicator of ``U`` (a predicate on point batches)."""
    dens = []
    for h in rep.densities:
        def nh(gam, ts, h=h):
            base = _ones(ts) if h is None else np.asarray(h(gam, ts), float)
            ind = np.asarray(U(gam.func(np.atleast_1d(ts)) if gam.func else gam.evaluate(ts)), bool)
            return base * ind.ravel()
        dens.append(nh)
    return AlbertiRep(list(rep.fragments), rep.weights.copy(), dens, rep.exact_weights)


def glue(reps: Sequence[AlbertiRep]) -> AlbertiRep:
    """Concatenate representations (of measures with disjoint supports)."""
    frags, w, dens = [], [], []
    for r in reps:
        frags += list(r.fragments)
        w += list(r.weights)
        dens += list(r.densities)
    return AlbertiRep(frags, w, dens)


def save_rep(rep: AlbertiRep, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh)


def load_rep(path, host) -> AlbertiRep:
    with open(path) as fh:
        return AlbertiRep.from_dict(json.load(fh), host)
