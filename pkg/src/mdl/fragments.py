"""Curve fragments and their metric differentials.

A fragment is a Lipschitz map from a closed set of times (a finite union of
intervals plus isolated points) into a host space.  Hosts only need to
answer distance queries; two are provided: :class:`EuclideanSpace` (points
are rows of an array) and :class:`GraphHost` (points are
:class:`~mdl.metric_graph.GraphPoints` on a metric graph).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .metric_graph import GraphError, GraphPoint, GraphPoints, MetricGraph

DEFAULT_OSC_TOL = 0.1


class FragmentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# hosts


class EuclideanSpace:
    """``R^dim`` with the l^p norm, ``p`` in {1, 2, inf}."""

    _METRICS = {1: "cityblock", 2: "euclidean", np.inf: "chebyshev"}

    def __init__(self, dim: int, p=2):
        p = np.inf if p in ("inf", float("inf")) else int(p)
        if p not in self._METRICS:
            raise ValueError(f"unsupported norm l^{p}")
        self.dim = int(dim)
        self.p = p

    def norm(self, v) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(v), ord=self.p, axis=1)

    def as_points(self, pts) -> np.ndarray:
        a = np.asarray(pts, dtype=float)
        return a.reshape(-1, self.dim)

    def size(self, pts) -> int:
        return len(pts)

    def take(self, pts, idx):
        return pts[idx]

    def distance(self, x, y) -> float:
        return float(self.norm(np.asarray(x, float) - np.asarray(y, float))[0])

    def distances_from(self, x, ys) -> np.ndarray:
        return self.norm(self.as_points(ys) - np.asarray(x, float).reshape(1, -1))

    def cross(self, xs, ys) -> np.ndarray:
        return cdist(self.as_points(xs), self.as_points(ys), metric=self._METRICS[self.p])

    def paired(self, xs, ys) -> np.ndarray:
        return self.norm(self.as_points(xs) - self.as_points(ys))

    def grid(self, lo: float, hi: float, n: int) -> np.ndarray:
        """Square grid of ``n**dim`` points, a finite dense set for tests."""
        axes = [np.linspace(lo, hi, n)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def to_json(self, pts) -> list:
        return self.as_points(pts).tolist()

    def from_json(self, data):
        return self.as_points(data)

    def __repr__(self) -> str:
        return f"EuclideanSpace(dim={self.dim}, p={self.p})"


class GraphHost:
    """A metric graph viewed as a host space for fragments."""

    def __init__(self, graph: MetricGraph):
        self.graph = graph

    def size(self, pts: GraphPoints) -> int:
        return len(pts)

    def take(self, pts: GraphPoints, idx):
        return pts[np.atleast_1d(idx)] if not isinstance(idx, slice) else pts[idx]

    def distance(self, x, y) -> float:
        return self.graph.distance(_gp(x), _gp(y))

    def distances_from(self, x, ys: GraphPoints) -> np.ndarray:
        return self.graph.distances_from(_gp(x), ys)

    def cross(self, xs: GraphPoints, ys: GraphPoints) -> np.ndarray:
        g = self.graph
        if len(xs) == 0 or len(ys) == 0:
            return np.zeros((len(xs), len(ys)))
        # distances from each y to every vertex, then to the x's
        out = np.empty((len(xs), len(ys)))
        for j in range(len(ys)):
            out[:, j] = g.distances_from(ys[j], xs)
        return out

    def paired(self, xs: GraphPoints, ys: GraphPoints) -> np.ndarray:
        return np.array([self.graph.distances_from(xs[k], ys[k:k + 1])[0] for k in range(len(xs))])

    def vertices(self) -> GraphPoints:
        g = self.graph
        return GraphPoints.of(g.vertex_point(v) for v in range(g.n_vertices) if g.incidence[v])

    def to_json(self, pts: GraphPoints) -> list:
        return [[int(e), float(s)] for e, s in zip(pts.edges, pts.offsets)]

    def from_json(self, data) -> GraphPoints:
        a = np.asarray(data, dtype=float).reshape(-1, 2)
        return GraphPoints(a[:, 0].astype(np.int64), a[:, 1])

    def __repr__(self) -> str:
        return f"GraphHost({self.graph!r})"


def _gp(x) -> GraphPoint:
    if isinstance(x, GraphPoint):
        return x
    if isinstance(x, GraphPoints) and len(x) == 1:
        return x[0]
    raise GraphError(f"expected a single graph point, got {x!r}")


# ---------------------------------------------------------------------------
# domains and fragments


class Domain:
    """A closed subset of the line: disjoint closed intervals plus isolated points."""

    def __init__(self, intervals: Sequence[Sequence[float]] = (), points: Sequence[float] = ()):
        iv = sorted((float(a), float(b)) for a, b in intervals)
        merged: list[list[float]] = []
        for a, b in iv:
            if b < a:
                raise FragmentError(f"empty interval [{a}, {b}]")
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        self.intervals = np.array(merged, dtype=float).reshape(-1, 2)
        pts = [float(p) for p in points if self.component(float(p)) is None]
        self.points = np.array(sorted(set(pts)), dtype=float)

    def component(self, t: float) -> int | None:
        iv = self.intervals
        k = int(np.searchsorted(iv[:, 0], t, side="right")) - 1
        if k >= 0 and t <= iv[k, 1]:
            return k
        return None

    def contains(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        iv = self.intervals
        k = np.searchsorted(iv[:, 0], t, side="right") - 1
        ok = (k >= 0) & (t <= iv[np.clip(k, 0, None), 1]) if len(iv) else np.zeros(t.shape, bool)
        if len(self.points):
            ok |= np.isin(t, self.points)
        return ok

    def is_isolated(self, t: float) -> bool:
        if self.component(t) is not None:
            iv = self.intervals[self.component(t)]
            return iv[0] == iv[1]
        return bool(np.any(self.points == t))

    def measure(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    def measure_in(self, a: float, b: float) -> float:
        lo = np.maximum(self.intervals[:, 0], a)
        hi = np.minimum(self.intervals[:, 1], b)
        return float(np.sum(np.clip(hi - lo, 0.0, None)))

    @property
    def bounds(self) -> tuple[float, float]:
        vals = np.concatenate([self.intervals.ravel(), self.points])
        return float(vals.min()), float(vals.max())

    def to_json(self) -> list:
        out = self.intervals.tolist()
        out += [[p, p] for p in self.points.tolist()]
        return out

    def __repr__(self) -> str:
        return f"Domain({self.intervals.tolist()}, points={self.points.tolist()})"


def fat_cantor_domain(levels: int, a: float = 0.0, b: float = 1.0) -> Domain:
    """Level-``levels`` stage of the Smith-Volterra-Cantor set (measure 1/2 in the limit)."""
    iv = [(a, b)]
    L = b - a
    for n in range(1, levels + 1):
        gap = L / 4 ** n
        nxt = []
        for lo, hi in iv:
            mid = 0.5 * (lo + hi)
            nxt += [(lo, mid - gap / 2), (mid + gap / 2, hi)]
        iv = nxt
    return Domain(iv)


class Fragment:
    """A sampled Lipschitz map ``gamma: Dom -> host``.

    ``func`` (optional) evaluates ``gamma`` at arbitrary domain times and is
    used for fine-scale difference quotients; otherwise only the samples are
    available and quotients snap to the nearest sample times.
    """

    def __init__(self, domain: Domain, times, points, host, lip_bound: float = 1.0,
                 func: Callable | None = None):
        self.domain = domain if isinstance(domain, Domain) else Domain(domain)
        self.times = np.asarray(times, dtype=float)
        order = np.argsort(self.times, kind="stable")
        if np.any(order != np.arange(len(order))):
            self.times = self.times[order]
            points = host.take(points, order)
        self.points = points
        self.host = host
        self.lip_bound = float(lip_bound)
        self.func = func
        if host.size(points) != len(self.times):
            raise FragmentError("times and points differ in length")
        if len(self.times) and not np.all(self.domain.contains(self.times)):
            raise FragmentError("sample times outside the domain")

    @classmethod
    def from_function(cls, func: Callable, domain, host, n: int = 10_000,
                      lip_bound: float = 1.0) -> "Fragment":
        """Sample ``func`` at ``n`` times spread over the domain's intervals."""
        dom = domain if isinstance(domain, Domain) else Domain(domain)
        ts = _spread(dom, n)
        return cls(dom, ts, func(ts), host, lip_bound, func)

    def evaluate(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.func is not None:
            return self.func(ts)
        idx = np.searchsorted(self.times, ts)
        idx = np.clip(idx, 0, len(self.times) - 1)
        left = np.clip(idx - 1, 0, None)
        pick = np.where(np.abs(self.times[left] - ts) < np.abs(self.times[idx] - ts), left, idx)
        if np.any(np.abs(self.times[pick] - ts) > 1e-12 * max(1.0, np.abs(ts).max())):
            raise FragmentError("time is not a sample time and no evaluator is attached")
        return self.host.take(self.points, pick)

    def nearest_sample(self, t: float) -> float | None:
        k = int(np.clip(np.searchsorted(self.times, t), 0, len(self.times) - 1))
        cands = [self.times[j] for j in (k - 1, k) if 0 <= j < len(self.times)]
        return min(cands, key=lambda s: abs(s - t)) if cands else None

    def lipschitz_defect(self, max_pairs: int = 2000, seed: int = 0) -> float:
        """Largest ``dist(g(s), g(t)) - lip_bound*|s-t|`` over random sample pairs."""
        n = len(self.times)
        if n < 2:
            return 0.0
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, max_pairs)
        j = rng.integers(0, n, max_pairs)
        d = self.host.paired(self.host.take(self.points, i), self.host.take(self.points, j))
        return float(np.max(d - self.lip_bound * np.abs(self.times[i] - self.times[j])))

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "times": self.times.tolist(),
            "points": self.host.to_json(self.points),
            "lip_bound": self.lip_bound,
        }

    @classmethod
    def from_dict(cls, d: dict, host) -> "Fragment":
        iv = [(a, b) for a, b in d["domain"] if a != b]
        pts = [a for a, b in d["domain"] if a == b]
        return cls(Domain(iv, pts), d["times"], host.from_json(d["points"]), host,
                   d.get("lip_bound", 1.0))

    def __repr__(self) -> str:
        return f"Fragment(n={len(self.times)}, domain={self.domain!r}, host={self.host!r})"


def _spread(dom: Domain, n: int) -> np.ndarray:
    lens = dom.intervals[:, 1] - dom.intervals[:, 0]
    total = lens.sum()
    parts = []
    for (a, b), L in zip(dom.intervals, lens):
        k = max(2, int(round(n * L / total))) if total > 0 else 1
        parts.append(np.linspace(a, b, k))
    parts.append(dom.points)
    return np.unique(np.concatenate(parts))


# ---------------------------------------------------------------------------
# pseudometrics


@dataclass
class PseudometricOracle:
    """A Lipschitz compatible pseudometric ``rho <= compat_const * d``.

    ``cross(xs, ys)`` returns the matrix ``rho(xs[i], ys[j])``; ``paired``
    the vector ``rho(xs[k], ys[k])``.
    """

    cross: Callable
    paired: Callable
    compat_const: float = 1.0
    name: str = "rho"

    @classmethod
    def metric(cls, host) -> "PseudometricOracle":
        return cls(host.cross, host.paired, 1.0, "d")

    @classmethod
    def pullback(cls, host, F: Callable, target, lip: float) -> "PseudometricOracle":
        """``rho_F(x, y) = d_target(F(x), F(y))``."""
        return cls(lambda xs, ys: target.cross(F(xs), F(ys)),
                   lambda xs, ys: target.paired(F(xs), F(ys)), float(lip), "rho_F")

    def check_axioms(self, host, pts, d_cross: np.ndarray | None = None, atol: float = 1e-9) -> dict:
        """Symmetry, triangle inequality and compatibility on a point sample."""
        R = self.cross(pts, pts)
        sym = float(np.max(np.abs(R - R.T))) if R.size else 0.0
        tri = 0.0
        for k in range(R.shape[0]):
            tri = max(tri, float(np.max(R - (R[:, [k]] + R[[k], :]))))
        D = host.cross(pts, pts) if d_cross is None else d_cross
        comp = float(np.max(R - self.compat_const * D)) if R.size else 0.0
        return {"symmetry": sym, "triangle": max(tri, 0.0), "compat": max(comp, 0.0),
                "ok": sym <= atol and tri <= atol and comp <= atol}


# ---------------------------------------------------------------------------
# metric differential


@dataclass
class MDReport:
    t: float
    estimate: float
    scales: np.ndarray
    per_scale: np.ndarray
    chord_ratios: np.ndarray  # rows: (sym, right, left) MD1 quotients per scale
    oscillation: float
    md1_spread: float
    exists: bool
    tol: float = DEFAULT_OSC_TOL

    def to_rows(self) -> list[tuple[float, float]]:
        return [(float(h), float(v)) for h, v in zip(self.scales, self.per_scale)]


def default_h_grid(gamma: Fragment, t: float, n_scales: int = 8) -> np.ndarray:
    """Dyadic multiples of the local sample spacing, coarse to fine."""
    ts = gamma.times
    k = int(np.clip(np.searchsorted(ts, t), 1, len(ts) - 1)) if len(ts) > 1 else 0
    base = float(ts[k] - ts[k - 1]) if len(ts) > 1 else 1e-3
    if gamma.func is not None:
        base = min(base, 1e-3)
    return base * 2.0 ** np.arange(n_scales - 1, -1, -1)


def _times_at(gamma: Fragment, t: float, h: float) -> tuple[float | None, float | None]:
    out = []
    for tau in (t - h, t + h):
        if gamma.func is None:
            tau = gamma.nearest_sample(tau)
            if tau is None or not (0.5 * h <= abs(tau - t) <= 2 * h):
                tau = None
        elif not gamma.domain.contains(tau)[0]:
            tau = None
        out.append(tau)
    return out[0], out[1]


def metric_differential(gamma: Fragment, t: float, rho: PseudometricOracle | None = None,
                        D_X=None, h_grid=None, tol: float = DEFAULT_OSC_TOL) -> MDReport:
    """``rho``-metric differential of ``gamma`` at ``t``: ``sup_x |u_x'(t)|``.

    ``u_x = rho(x, gamma(.))`` for ``x`` in the finite dense set ``D_X``.
    Quotients only use times inside the domain.  The report flags
    nonexistence when the per-scale estimates oscillate by more than ``tol``
    (relative) over the three finest scales, or when the symmetric and
    one-sided chord ratios disagree by more than ``tol``.
    """
    t = float(t)
    dom = gamma.domain
    if not dom.contains(t)[0]:
        raise FragmentError(f"time {t} is outside the domain")
    if dom.is_isolated(t):
        raise FragmentError("isolated time")
    rho = rho or PseudometricOracle.metric(gamma.host)
    if D_X is None:
        raise FragmentError("a finite dense set D_X is required")
    hs = np.asarray(h_grid if h_grid is not None else default_h_grid(gamma, t), dtype=float)
    p0 = gamma.evaluate([t])
    U0 = rho.cross(D_X, p0)[:, 0]
    scales, ests, chords = [], [], []
    for h in hs:
        tm, tp = _times_at(gamma, t, h)
        if tm is None and tp is None:
            continue
        sides = [x for x in (tm, tp) if x is not None]
        P = gamma.evaluate(sides)
        U = rho.cross(D_X, P)
        if tm is not None and tp is not None:
            q = (U[:, 1] - U[:, 0]) / (tp - tm)
            c_sym = float(rho.paired(gamma.host.take(P, [0]), gamma.host.take(P, [1]))[0]) / (tp - tm)
        else:
            q = (U[:, 0] - U0) / (sides[0] - t)
            c_sym = np.nan
        side_r = side_l = np.nan
        if tp is not None:
            side_r = float(rho.paired(p0, gamma.host.take(P, [len(sides) - 1]))[0]) / (tp - t)
        if tm is not None:
            side_l = float(rho.paired(gamma.host.take(P, [0]), p0)[0]) / (t - tm)
        scales.append(h)
        ests.append(float(np.max(np.abs(q))))
        chords.append((c_sym, side_r, side_l))
    if not scales:
        raise FragmentError("empty usable h grid")
    ests = np.array(ests)
    chords = np.array(chords)
    tail = ests[-3:]
    top = max(float(np.max(np.abs(tail))), 1e-300)
    osc = float(np.ptp(tail) / top) if top > 1e-300 else 0.0
    last = chords[-1][~np.isnan(chords[-1])]
    spread = float(np.ptp(last) / max(np.max(last), 1e-300)) if len(last) > 1 and np.max(last) > 0 else 0.0
    exists = osc <= tol and spread <= tol
    return MDReport(t, float(ests[-1]), np.array(scales), ests, chords, osc, spread, exists, tol)


def chord_md(gamma: Fragment, rho: PseudometricOracle | None = None) -> np.ndarray:
    """Per-sample md surrogate: mean of the one-sided chord ratios to the neighbours.

    Neighbours in different domain components are ignored; isolated samples
    get 0.
    """
    rho = rho or PseudometricOracle.metric(gamma.host)
    ts = gamma.times
    n = len(ts)
    if n < 2:
        return np.zeros(n)
    comp = _components(gamma)
    P = gamma.points
    step = rho.paired(gamma.host.take(P, np.arange(n - 1)), gamma.host.take(P, np.arange(1, n)))
    dt = np.diff(ts)
    same = (comp[:-1] == comp[1:]) & (comp[:-1] >= 0) & (dt > 0)
    ratio = np.where(same, step / np.where(dt > 0, dt, 1.0), np.nan)
    left = np.concatenate([[np.nan], ratio])
    right = np.concatenate([ratio, [np.nan]])
    both = np.vstack([left, right])
    cnt = np.sum(~np.isnan(both), axis=0)
    out = np.where(cnt > 0, np.nansum(both, axis=0) / np.maximum(cnt, 1), 0.0)
    return out


def _components(gamma: Fragment) -> np.ndarray:
    iv = gamma.domain.intervals
    k = np.searchsorted(iv[:, 0], gamma.times, side="right") - 1
    ok = (k >= 0) & (gamma.times <= iv[np.clip(k, 0, None), 1])
    k = np.where(ok, k, -1)
    # degenerate intervals behave like isolated points
    k[(k >= 0) & (iv[np.clip(k, 0, None), 1] == iv[np.clip(k, 0, None), 0])] = -1
    return k


def _trapezoid_by_component(gamma: Fragment, vals: np.ndarray) -> float:
    comp = _components(gamma)
    total = 0.0
    for c in np.unique(comp[comp >= 0]):
        sel = comp == c
        total += float(np.trapezoid(vals[sel], gamma.times[sel]))
    return total


# ---------------------------------------------------------------------------
# lengths and the area formula


@dataclass
class LengthReport:
    polyline: float
    integral_md: float
    integral_norm: float | None
    spread: float

    def as_tuple(self):
        return self.polyline, self.integral_md, self.integral_norm


def _check_injective(gamma: Fragment, rho: PseudometricOracle) -> None:
    n = len(gamma.times)
    if n < 3:
        return
    step = chord_steps(gamma, rho)
    tol = 0.25 * float(np.median(step[step > 0])) if np.any(step > 0) else 0.0
    if isinstance(gamma.host, EuclideanSpace):
        tree = cKDTree(gamma.points)
        p = {1: 1, 2: 2}.get(gamma.host.p, np.inf)
        pairs = tree.query_pairs(max(tol, 1e-12), p=p, output_type="ndarray")
    else:
        keys = np.round(np.c_[gamma.points.edges, gamma.points.offsets / max(tol, 1e-12)]).astype(np.int64)
        _, inv, cnt = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        dup = np.flatnonzero(cnt[inv.ravel()] > 1)
        pairs = np.array([(a, b) for a in dup for b in dup if b > a + 1]).reshape(-1, 2)
    if len(pairs) and np.any(np.abs(pairs[:, 0] - pairs[:, 1]) > 1):
        raise FragmentError("multiplicity: fragment is not injective; use area_formula_check")


def chord_steps(gamma: Fragment, rho: PseudometricOracle | None = None) -> np.ndarray:
    rho = rho or PseudometricOracle.metric(gamma.host)
    n = len(gamma.times)
    P = gamma.points
    return rho.paired(gamma.host.take(P, np.arange(n - 1)), gamma.host.take(P, np.arange(1, n)))


def fragment_length(gamma: Fragment, rho: PseudometricOracle | None = None,
                    norm_field: Callable | None = None, chart: Callable | None = None,
                    hausdorff: bool = False) -> LengthReport:
    """Three length estimates of a fragment.

    polyline: sum of ``rho`` over consecutive samples in the same component;
    integral_md: trapezoid integral of the chord md surrogate;
    integral_norm: trapezoid integral of ``norm_field(t, (chart o gamma)'(t))``
    when a norm field is supplied (``chart`` defaults to the identity on
    Euclidean hosts).
    """
    rho = rho or PseudometricOracle.metric(gamma.host)
    if hausdorff:
        _check_injective(gamma, rho)
    comp = _components(gamma)
    step = chord_steps(gamma, rho) if len(gamma.times) > 1 else np.zeros(0)
    same = (comp[:-1] == comp[1:]) & (comp[:-1] >= 0)
    poly = float(np.sum(step[same]))
    md = chord_md(gamma, rho)
    imd = _trapezoid_by_component(gamma, md)
    inorm = None
    if norm_field is not None:
        if chart is None:
            if not isinstance(gamma.host, EuclideanSpace):
                raise FragmentError("a chart is required for non-Euclidean hosts")
            coords = np.asarray(gamma.points, float)
        else:
            coords = np.asarray(chart(gamma.points), float).reshape(len(gamma.times), -1)
        deriv = np.zeros_like(coords)
        for c in np.unique(comp[comp >= 0]):
            sel = np.flatnonzero(comp == c)
            if len(sel) > 1:
                deriv[sel] = np.gradient(coords[sel], gamma.times[sel], axis=0)
        vals = np.array([norm_field(t, v) for t, v in zip(gamma.times, deriv)])
        inorm = _trapezoid_by_component(gamma, vals)
    ests = [poly, imd] + ([inorm] if inorm is not None else [])
    return LengthReport(poly, imd, inorm, float(np.ptp(ests)))


@dataclass
class AreaReport:
    resolutions: np.ndarray
    lhs: np.ndarray
    rhs: float
    residuals: np.ndarray
    max_multiplicity: np.ndarray

    @property
    def residual(self) -> float:
        return float(self.residuals[-1])

    @property
    def decays(self) -> bool:
        r = self.residuals
        return bool(np.all(np.diff(r) <= 1e-12 + 1e-9 * r[:-1]))


def area_formula_check(gamma: Fragment, rho: PseudometricOracle | None = None,
                       resolution=(1 / 8, 1 / 16, 1 / 32), match_tol: float = 1e-3) -> AreaReport:
    """Compare ``int #gamma^{-1}(z) dH^1(z)`` with ``int md dt`` across resolutions.

    At resolution ``eps`` the domain is cut into time pieces of length
    ``eps``; pieces whose sampled images agree (Hausdorff distance below
    ``match_tol * eps``) are the same cell of the image.  The left side is
    the sum over cells of multiplicity times the cell's ``rho``-diameter,
    a covering estimate of the ``H^1`` integral.
    """
    rho = rho or PseudometricOracle.metric(gamma.host)
    rhs = _trapezoid_by_component(gamma, chord_md(gamma, rho))
    comp = _components(gamma)
    res = np.asarray(resolution, dtype=float)
    lhs_all, mult_all = [], []
    for eps in res:
        pieces = []
        for c in np.unique(comp[comp >= 0]):
            sel = np.flatnonzero(comp == c)
            a = gamma.domain.intervals[c, 0]
            key = np.floor((gamma.times[sel] - a) / eps + 1e-9).astype(np.int64)
            # closed pieces share their boundary sample
            for k in np.unique(key):
                idx = sel[key == k]
                nxt = sel[key == k + 1]
                if len(nxt):
                    idx = np.append(idx, nxt[0])
                if len(idx) > 1:
                    pieces.append(idx)
        cells: list[tuple[np.ndarray, float, int]] = []
        for idx in pieces:
            P = gamma.host.take(gamma.points, idx)
            matched = False
            for ci, (Q, diam, cnt) in enumerate(cells):
                if _hausdorff(rho, P, Q) <= match_tol * eps:
                    cells[ci] = (Q, diam, cnt + 1)
                    matched = True
                    break
            if not matched:
                R = rho.cross(P, P)
                cells.append((P, float(R.max()), 1))
        lhs_all.append(sum(d * c for _, d, c in cells))
        mult_all.append(max((c for _, _, c in cells), default=0))
    lhs = np.array(lhs_all)
    return AreaReport(res, lhs, rhs, np.abs(lhs - rhs), np.array(mult_all))


def _hausdorff(rho: PseudometricOracle, P, Q) -> float:
    R = rho.cross(P, Q)
    if R.size == 0:
        return np.inf
    return float(max(R.min(axis=1).max(), R.min(axis=0).max()))


# ---------------------------------------------------------------------------
# generic-point diagnostics


@dataclass
class GenericDiagnostics:
    t: float
    scales: np.ndarray
    gen1_density: np.ndarray
    gen2_derivatives: list = field(default_factory=list)  # per f: per-scale (f o gamma)'
    gen3_oscillation: list = field(default_factory=list)  # per u: per-scale sup |u(g(s)) - u(g(t))|
    gen5_defect: list = field(default_factory=list)  # per rho: per-scale |md(s) - md(t)|

    @staticmethod
    def _tail_osc(x: np.ndarray) -> float:
        x = np.asarray(x, float)[-3:]
        x = x[~np.isnan(x)]
        return float(np.ptp(x)) if len(x) else np.inf

    def flags(self, tol: float = DEFAULT_OSC_TOL) -> dict:
        return {
            "Gen1": bool(self.gen1_density[-1] >= 1 - tol),
            "Gen2": all(self._tail_osc(d) <= tol for d in self.gen2_derivatives),
            "Gen3": all(o[-1] <= tol for o in self.gen3_oscillation),
            "Gen4": all(self._tail_osc(d) <= tol for d in self.gen2_derivatives),
            "Gen5": all(o[-1] <= tol for o in self.gen5_defect),
        }


def generic_diagnostics(gamma: Fragment, t: float, F: Sequence[Callable] = (),
                        C: Sequence[Callable] = (), S: Sequence[PseudometricOracle] = (),
                        D_X=None, h_grid=None) -> GenericDiagnostics:
    """Finite-scale surrogates for the generic-point conditions at ``t``.

    ``F`` are Lipschitz functions and ``C`` Borel functions on the host,
    each mapping a batch of points to an array.  ``S`` are pseudometrics
    whose metric differential should be approximately continuous at ``t``.
    """
    t = float(t)
    hs = np.asarray(h_grid if h_grid is not None else default_h_grid(gamma, t), dtype=float)
    dens = np.array([gamma.domain.measure_in(t - h, t + h) / (2 * h) for h in hs])
    derivs = []
    for f in F:
        row = []
        f0 = float(np.asarray(f(gamma.evaluate([t]))).ravel()[0])
        for h in hs:
            tm, tp = _times_at(gamma, t, h)
            if tm is not None and tp is not None:
                v = np.asarray(f(gamma.evaluate([tm, tp]))).ravel()
                row.append((v[1] - v[0]) / (tp - tm))
            elif tp is not None or tm is not None:
                s = tp if tp is not None else tm
                v = float(np.asarray(f(gamma.evaluate([s]))).ravel()[0])
                row.append((v - f0) / (s - t))
            else:
                row.append(np.nan)
        derivs.append(np.array(row))
    oscs = []
    for u in C:
        u0 = float(np.asarray(u(gamma.evaluate([t]))).ravel()[0])
        row = []
        for h in hs:
            sel = np.flatnonzero(np.abs(gamma.times - t) <= h)
            vals = np.asarray(u(gamma.host.take(gamma.points, sel))).ravel() if len(sel) else np.array([u0])
            row.append(float(np.max(np.abs(vals - u0))))
        oscs.append(np.array(row))
    defects = []
    if S and D_X is not None:
        fine = hs[-3:] if len(hs) >= 3 else hs
        for rho in S:
            md_t = metric_differential(gamma, t, rho, D_X, fine).estimate
            row = []
            for h in hs:
                vals = []
                for s in _times_at(gamma, t, h):
                    if s is None or gamma.domain.is_isolated(s):
                        continue
                    try:
                        vals.append(abs(metric_differential(gamma, s, rho, D_X, fine).estimate - md_t))
                    except FragmentError:
                        continue
                row.append(max(vals) if vals else np.nan)
            defects.append(np.array(row))
    return GenericDiagnostics(t, hs, dens, derivs, oscs, defects)


# ---------------------------------------------------------------------------
# io


def save_fragment(gamma: Fragment, path) -> None:
    with open(path, "w") as fh:
        json.dump(gamma.to_dict(), fh)


def load_fragment(path, host) -> Fragment:
    with open(path) as fh:
        return Fragment.from_dict(json.load(fh), host)
