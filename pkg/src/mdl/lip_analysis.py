"""Pointwise Lipschitz constants and seminorms on one-dimensional charts.

Functions are evaluated on batches of host points.  On metric graphs the
supremum over a ball is taken over an explicit candidate set: vertices
inside the ball, the points where the ball boundary cuts each edge, and
midpoints of the covered pieces.  Functions that are affine on edges
(``phi`` and distance functions) attain their ball extremes on that set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fragments import EuclideanSpace, GraphHost, PseudometricOracle, chord_md
from .limit_space import LimitPoint, LimitSpace
from .metric_graph import GraphPoint, GraphPoints, MetricGraph

ZERO_TOL = 1e-12


@dataclass
class LipschitzFunctionOracle:
    """``evaluator`` maps a batch of host points to an array of values."""

    evaluator: Callable
    global_lip: float = 1.0
    name: str = "f"

    def __call__(self, pts) -> np.ndarray:
        return np.asarray(self.evaluator(pts), dtype=float).reshape(-1)

    def scaled(self, c: float) -> "LipschitzFunctionOracle":
        return LipschitzFunctionOracle(lambda pts: c * self(pts), abs(c) * self.global_lip,
                                       f"{c}*{self.name}")


def phi_function(space: LimitSpace) -> LipschitzFunctionOracle:
    return LipschitzFunctionOracle(space.phi_many, 1.0, "phi")


def distance_function(space: LimitSpace, q: GraphPoint) -> LipschitzFunctionOracle:
    return LipschitzFunctionOracle(lambda pts: space.graph.distances_from(q, pts), 1.0, "d_q")


def constant_function(value: float = 0.0) -> LipschitzFunctionOracle:
    return LipschitzFunctionOracle(lambda pts: np.full(_size(pts), float(value)), 0.0, "const")


def _size(pts) -> int:
    return len(pts)


# ---------------------------------------------------------------------------
# ball candidates


def graph_ball_candidates(g: MetricGraph, p: GraphPoint, r: float) -> GraphPoints:
    """Finite sample of ``B(p, r)`` containing the extremes of edge-affine functions."""
    hi1, lo2, own = g.ball_pieces(p, r)
    L = g.lengths
    E = np.arange(g.n_edges)
    edges, offs = [], []
    a = hi1 >= 0
    edges += [E[a], E[a]]
    offs += [np.zeros(a.sum()), np.minimum(hi1[a], L[a])]
    offs_mid1 = 0.5 * np.minimum(hi1[a], L[a])
    edges.append(E[a])
    offs.append(offs_mid1)
    b = lo2 <= L
    edges += [E[b], E[b], E[b]]
    offs += [L[b], np.maximum(lo2[b], 0.0), 0.5 * (np.maximum(lo2[b], 0.0) + L[b])]
    k = p.edge
    lo, hi = own
    edges.append(np.array([k, k, k, k]))
    offs.append(np.array([lo, hi, 0.5 * (lo + hi), float(p.s)]))
    return GraphPoints(np.concatenate(edges), np.concatenate(offs))


def euclidean_ball_candidates(host: EuclideanSpace, p, r: float, n: int = 64) -> np.ndarray:
    p = np.asarray(p, float).reshape(1, -1)
    if host.dim == 1:
        return p + r * np.linspace(-1, 1, 2 * n + 1).reshape(-1, 1)
    if host.dim == 2:
        ang = np.linspace(0, 2 * np.pi, 4 * n, endpoint=False)
        unit = np.c_[np.cos(ang), np.sin(ang)]
        unit = unit / host.norm(unit).reshape(-1, 1)
        rad = np.linspace(0, 1, 9)[1:]
        pts = (rad[:, None, None] * unit[None]).reshape(-1, 2)
        return p + r * np.vstack([[0, 0], pts])
    rng = np.random.default_rng(0)
    v = rng.normal(size=(n * 16, host.dim))
    v /= host.norm(v).reshape(-1, 1)
    return p + r * np.vstack([np.zeros(host.dim), v, 0.5 * v])


def ball_candidates(host, p, r: float):
    if isinstance(host, LimitSpace):
        host = host.host
    if isinstance(host, GraphHost):
        return graph_ball_candidates(host.graph, _top(p), r)
    if isinstance(host, EuclideanSpace):
        return euclidean_ball_candidates(host, p, r)
    raise TypeError(f"no ball sampler for host {host!r}")


def _top(p):
    if isinstance(p, LimitPoint):
        return p.top
    if isinstance(p, GraphPoints):
        return p[0]
    return p


def _point_batch(host, p):
    if isinstance(host, LimitSpace):
        host = host.host
    if isinstance(host, GraphHost):
        q = _top(p)
        return GraphPoints([q.edge], [float(q.s)])
    return np.asarray(p, float).reshape(1, -1)


# ---------------------------------------------------------------------------
# Lip and lip


@dataclass
class LipEstimate:
    estimate: float
    scales: np.ndarray
    per_scale: np.ndarray

    @property
    def finest_scale(self) -> float:
        return float(self.scales[-1])


def variation_profile(host, f: Callable, p, r_grid) -> tuple[np.ndarray, np.ndarray]:
    """``sup_{y in B(p,r)} |f(y) - f(p)| / r`` for each radius."""
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or len(r_grid) == 0 or np.any(r_grid <= 0):
        raise ValueError("r_grid must be a nonempty list of positive radii")
    if np.any(np.diff(r_grid) >= 0):
        raise ValueError("r_grid must be strictly decreasing")
    f0 = float(np.asarray(f(_point_batch(host, p))).ravel()[0])
    vals = []
    for r in r_grid:
        cand = ball_candidates(host, p, float(r))
        if len(cand) == 0:
            raise ValueError("empty ball sample")
        fy = np.asarray(f(cand), dtype=float).ravel()
        vals.append(float(np.max(np.abs(fy - f0))) / r)
    return r_grid, np.array(vals)


def big_lip(f: Callable, p, r_grid, host) -> LipEstimate:
    """Upper pointwise Lipschitz constant: max over the three finest scales."""
    rs, v = variation_profile(host, f, p, r_grid)
    return LipEstimate(float(np.max(v[-3:])), rs, v)


def small_lip(f: Callable, p, r_grid, host) -> LipEstimate:
    """Lower pointwise Lipschitz constant: min over the three finest scales."""
    rs, v = variation_profile(host, f, p, r_grid)
    return LipEstimate(float(np.min(v[-3:])), rs, v)


def lip_ratio(big: float, small: float) -> float:
    if big <= ZERO_TOL and small <= ZERO_TOL:
        return 1.0  # constant germ: Lip = lip = 0
    if small <= ZERO_TOL:
        return np.inf
    return big / small


@dataclass
class LipSweep:
    rows: list  # (point_id, phi_value, Lip, lip, ratio, finest_scale)
    ladder: np.ndarray  # median ratio using the scale windows ending at each ladder step

    def ratios(self) -> np.ndarray:
        return np.array([r[4] for r in self.rows])

    def quantiles(self) -> dict:
        r = self.ratios()
        return {"median": float(np.median(r)), "p90": float(np.quantile(r, 0.9)),
                "max": float(np.max(r)), "min": float(np.min(r))}

    def ladder_nonincreasing(self, atol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.ladder) <= atol))


def default_r_grid(space: LimitSpace, n_min: int = 3) -> np.ndarray:
    """Radii ``m^-1, ..., m^-(K-1)``: from one coarse cell down to ``m`` level-``K`` edges."""
    m, K = space.m, space.graph.level
    top = max(K - 1, n_min)
    return float(m) ** -np.arange(1, top + 1, dtype=float)


def liplip_sweep(space: LimitSpace, f: Callable, sample_points: GraphPoints, r_grid=None) -> LipSweep:
    """Lip, lip and their ratio at each sample point.

    ``ladder[j]`` is the median ratio computed with the three-scale window
    ending at scale ``j + 2``; the finest entry is the reported ratio.
    """
    r_grid = default_r_grid(space) if r_grid is None else np.asarray(r_grid, float)
    rows = []
    windows = []
    for i in range(len(sample_points)):
        p = sample_points[i]
        _, v = variation_profile(space, f, p, r_grid)
        Lip, lip = float(np.max(v[-3:])), float(np.min(v[-3:]))
        rows.append((i, space.phi(p), Lip, lip, lip_ratio(Lip, lip), float(r_grid[-1])))
        windows.append([lip_ratio(np.max(v[j - 2:j + 1]), np.min(v[j - 2:j + 1]))
                        for j in range(2, len(v))])
    ladder = np.median(np.array(windows), axis=0) if windows else np.zeros(0)
    return LipSweep(rows, ladder)


# ---------------------------------------------------------------------------
# differentials along chart directions


def geodesic_bundle(space: LimitSpace, p, n_geodesics: int = 4, rng: np.random.Generator | None = None):
    """Monotone geodesics of ``X_K`` through ``p``: the lowest-id lift and random lifts."""
    top = _top(p)
    geos = [space.monotone_geodesic(None, through=top)]
    rng = rng or np.random.default_rng(0)
    for _ in range(max(n_geodesics - 1, 0)):
        geos.append(space.monotone_geodesic(rng, through=top))
    return geos


def _bundle_samples(space: LimitSpace, p, geos, window: float | None, n_side: int = 3):
    t0 = space.phi(_top(p))
    ell = float(space.graph.lengths.max())
    h = window if window is not None else ell / 4
    offs = h * np.arange(-n_side, n_side + 1) / n_side
    pts, dts = [], []
    for g in geos:
        a, b = g.interval
        ts = np.clip(t0 + offs, a, b)
        pts.append(g.points(ts))
        dts.append(ts - t0)
    allp = pts[0]
    for q in pts[1:]:
        allp = allp.concat(q)
    return allp, np.concatenate(dts)


def _slopes(values: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Least-squares slope of each row of ``values`` against ``dt``."""
    x = dt - dt.mean()
    den = float(np.dot(x, x))
    if den == 0:
        return np.zeros(values.shape[0])
    return (values - values.mean(axis=1, keepdims=True)) @ x / den


@dataclass
class SeminormSample:
    """Rows of generator differentials; the seminorm is ``v -> max |row . v|``."""

    point: object
    N: int
    rows: dict = field(default_factory=dict)  # family name -> (n_gen, N) array
    lip_chart: float | None = None

    def norm(self, v, family: str) -> float:
        R = self.rows[family]
        v = np.asarray(v, float).reshape(-1)
        return float(np.max(np.abs(R @ v))) if len(R) else 0.0

    def norms(self, directions, family: str) -> np.ndarray:
        R = self.rows[family]
        D = np.asarray(directions, float).reshape(-1, self.N)
        return np.max(np.abs(D @ R.T), axis=1) if len(R) else np.zeros(len(D))

    def norm4(self, v) -> float:
        if self.N != 1 or not self.lip_chart:
            raise ValueError("the dual norm is implemented for N = 1 charts only")
        return float(abs(np.asarray(v, float).reshape(-1)[0]) / self.lip_chart)

    @property
    def degenerate(self) -> bool:
        return all(float(np.max(np.abs(R), initial=0.0)) <= 1e-9 for R in self.rows.values())

    def discrepancy(self, directions, families=("1", "2", "3"), atol: float = 1e-9) -> float:
        """Largest relative gap between any two families over the direction grid.

        Gaps below ``atol`` are finite-difference rounding and count as 0.
        """
        N = np.array([self.norms(directions, f) for f in families])
        top = N.max(axis=0)
        ok = top > ZERO_TOL
        if not np.any(ok):
            return 0.0
        gap = (N.max(axis=0) - N.min(axis=0))[ok] / top[ok]
        return float(np.max(np.where(gap <= atol, 0.0, gap)))


def _lattice_family(Dm: np.ndarray, n: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    """``n`` random 1-Lipschitz lattice functions ``max(min(a d_x + b, ...), ...)``.

    ``Dm`` holds distance functions (rows) on the sample points.
    """
    if n == 0 or Dm.shape[0] == 0:
        return np.zeros((0, Dm.shape[1]))
    k = Dm.shape[0]
    out = np.empty((n, Dm.shape[1]))
    for j in range(n):
        idx = rng.integers(0, k, size=4)
        a = rng.uniform(-1, 1, size=4)
        a[0] = np.sign(a[0]) if a[0] != 0 else 1.0
        b = rng.uniform(-scale, scale, size=4)
        terms = a[:, None] * Dm[idx] + b[:, None]
        out[j] = np.maximum(np.minimum(terms[0], terms[1]), np.minimum(terms[2], terms[3]))
    return out


def seminorm_compare(host, p, n_generators: int = 1000, rng: np.random.Generator | None = None,
                     D_X=None, n_geodesics: int = 4, h: float | None = None) -> SeminormSample:
    """Differentials of three nested generator families at ``p``.

    family ``1``: distance functions from the first ``n_generators``
    points of ``D_X`` (in a seeded random order); family ``2`` adds as many
    distance functions from random points; family ``3`` adds as many random
    1-Lipschitz lattice combinations.  On a :class:`LimitSpace` the chart
    is ``phi`` (``N = 1``) and differentials are least-squares slopes along
    monotone geodesics through ``p``; on :class:`EuclideanSpace` the chart
    is the identity and differentials are central differences.
    """
    rng = rng or np.random.default_rng(0)
    if isinstance(host, LimitSpace):
        space = host
        D_X = space.dense_set if D_X is None else D_X
        order = rng.permutation(len(D_X))[:n_generators]
        c1 = D_X[order]
        c2 = space.sample_points(n_generators, rng)
        geos = geodesic_bundle(space, p, n_geodesics, rng)
        pts, dt = _bundle_samples(space, p, geos, h)
        D1 = space.host.cross(c1, pts)
        D2 = space.host.cross(c2, pts)
        N = 1
        diff = lambda V: _slopes(V, dt).reshape(-1, 1)  # noqa: E731
        lip_chart = big_lip(space.phi_many, _top(p), default_r_grid(space), space).estimate
        scale = 1.0
    elif isinstance(host, EuclideanSpace):
        p = np.asarray(p, float).reshape(-1)
        N = host.dim
        if D_X is None:
            D_X = host.grid(-4, 4, 41)
        order = rng.permutation(len(D_X))[:n_generators]
        c1 = D_X[order]
        lo, hi = D_X.min(axis=0), D_X.max(axis=0)
        c2 = lo + (hi - lo) * rng.random((n_generators, N))
        h = 1e-6 if h is None else h
        E = np.eye(N)
        pts = np.vstack([p + h * E, p - h * E])
        D1 = host.cross(c1, pts)
        D2 = host.cross(c2, pts)
        diff = lambda V: (V[:, :N] - V[:, N:]) / (2 * h)  # noqa: E731
        lip_chart = 1.0
        scale = float(np.max(hi - lo))
    else:
        raise TypeError(f"unsupported host {host!r}")
    R1 = diff(D1)
    R2 = np.vstack([R1, diff(D2)])
    lat = _lattice_family(np.vstack([D1, D2]), n_generators, rng, scale)
    R3 = np.vstack([R2, diff(lat)]) if len(lat) else R2
    return SeminormSample(p, N, {"1": R1, "2": R2, "3": R3}, lip_chart)


def direction_grid(N: int, n: int = 64) -> np.ndarray:
    if N == 1:
        return np.array([[1.0], [-1.0]])
    if N == 2:
        a = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.c_[np.cos(a), np.sin(a)]
    v = np.random.default_rng(0).normal(size=(n * N, N))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def seminorm_ladder(host, p, sizes: Sequence[int], seed: int = 0, **kw) -> list[float]:
    """Discrepancy for each generator budget; same seed so families are comparable."""
    out = []
    for n in sizes:
        s = seminorm_compare(host, p, n, np.random.default_rng(seed), **kw)
        out.append(s.discrepancy(direction_grid(s.N)))
    return out


# ---------------------------------------------------------------------------
# pullback seminorm and directional derivatives


@dataclass
class PullbackSeminorm:
    value: float
    rank: int
    slopes: np.ndarray


def canonical_pullback_seminorm(space: LimitSpace, F: Callable, target, p, D_X=None,
                                n_geodesics: int = 4, rng: np.random.Generator | None = None,
                                tol: float = 1e-6) -> PullbackSeminorm:
    """``||d_phi||_rho`` at ``p`` for ``rho_F(x, y) = d_target(F(x), F(y))``."""
    rng = rng or np.random.default_rng(0)
    D_X = space.dense_set if D_X is None else D_X
    geos = geodesic_bundle(space, p, n_geodesics, rng)
    pts, dt = _bundle_samples(space, p, geos, None)
    V = target.cross(F(D_X), F(pts))
    s = _slopes(V, dt)
    value = float(np.max(np.abs(s))) if len(s) else 0.0
    return PullbackSeminorm(value, int(value > tol), s)


@dataclass
class DirectionalSup:
    sup: float
    lip: float
    gap: float


def directional_sup_check(space: LimitSpace, f: Callable, p, n_geodesics: int = 4,
                          rng: np.random.Generator | None = None, r_grid=None) -> DirectionalSup:
    """Compare ``sup (f o gamma)'/md gamma`` over geodesics through ``p`` with ``Lip f(p)``."""
    rng = rng or np.random.default_rng(0)
    geos = geodesic_bundle(space, p, n_geodesics, rng)
    if not geos:
        raise ValueError("no geodesics through p")
    t0 = space.phi(_top(p))
    h = float(space.graph.lengths.max()) / 4
    best = 0.0
    for g in geos:
        a, b = g.interval
        for direction in (1, -1):
            t1 = np.clip(t0 + direction * h, a, b)
            if t1 == t0:
                continue
            P = g.points([t0, t1])
            fv = np.asarray(f(P), float).ravel()
            md = space.graph.distances_from(P[0], P[1:2])[0] / abs(t1 - t0)
            if md > ZERO_TOL:
                best = max(best, (fv[1] - fv[0]) / abs(t1 - t0) / md)
    r_grid = default_r_grid(space) if r_grid is None else r_grid
    L = big_lip(f, _top(p), r_grid, space).estimate
    return DirectionalSup(best, L, L - best)


# ---------------------------------------------------------------------------
# cone and speed


@dataclass
class Cone:
    axis: np.ndarray
    angle: float

    def contains(self, w, atol: float = 1e-9) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, float))
        v = np.asarray(self.axis, float).reshape(-1)
        nw = np.linalg.norm(w, axis=1)
        cosang = (w @ v) / np.maximum(nw * np.linalg.norm(v), 1e-300)
        return (nw > atol) & (cosang >= np.cos(self.angle) - atol)


@dataclass
class ConeSpeedReport:
    violation_fraction: float
    cone_violations: int
    speed_violations: int
    checked: int


def cone_speed_check(rep, f: Callable, chart: Callable, cone: Cone, sigma: Callable | float,
                     n_times: int = 16, atol: float = 1e-9) -> ConeSpeedReport:
    """Weighted fraction of sampled fragment times violating the cone or speed bound.

    At each interior sample time ``t`` the chart derivative and ``(f o g)'``
    are forward differences over one sample step and ``md`` is the chord md
    surrogate.  Each time carries weight ``P_gamma * h(t) * dt``.
    """
    sig = sigma if callable(sigma) else (lambda pts, s=float(sigma): np.full(len(pts), s))
    bad_w = tot_w = 0.0
    n_cone = n_speed = checked = 0
    for gamma, w in zip(rep.fragments, rep.weights):
        ts = gamma.times
        if len(ts) < 3 or w == 0:
            continue
        idx = np.unique(np.linspace(1, len(ts) - 2, min(n_times, len(ts) - 2)).astype(int))
        P0 = gamma.host.take(gamma.points, idx)
        P1 = gamma.host.take(gamma.points, idx + 1)
        dt = ts[idx + 1] - ts[idx]
        dchart = (np.asarray(chart(P1), float).reshape(len(idx), -1)
                  - np.asarray(chart(P0), float).reshape(len(idx), -1)) / dt[:, None]
        df = (np.asarray(f(P1), float).ravel() - np.asarray(f(P0), float).ravel()) / dt
        md = chord_md(gamma)[idx]
        dens = rep.density_at(gamma, ts[idx]) if hasattr(rep, "density_at") else np.ones(len(idx))
        in_cone = cone.contains(dchart, atol)
        fast = df >= sig(P0) * md - atol
        wt = w * dens * np.gradient(ts)[idx]
        bad = ~(in_cone & fast)
        bad_w += float(np.sum(wt[bad]))
        tot_w += float(np.sum(wt))
        n_cone += int(np.sum(~in_cone))
        n_speed += int(np.sum(~fast))
        checked += len(idx)
    frac = bad_w / tot_w if tot_w > 0 else 0.0
    return ConeSpeedReport(frac, n_cone, n_speed, checked)


def pullback_oracle(host, F: Callable, target, lip: float) -> PseudometricOracle:
    return PseudometricOracle.pullback(host, F, target, lip)
