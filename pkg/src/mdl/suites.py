"""Verification suites run by ``mdl run``.

Each suite takes a :class:`RunConfig` and its own random generator and
returns a :class:`SuiteResult` with per-criterion numbers, a pass flag and
CSV/JSON artifacts.  Artifacts contain no timestamps or timings, so equal
configs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import alberti, blowup, fragments, inverse_system, lip_analysis
from .limit_space import LimitSpace
from .metric_graph import AdmissibilityProfile, GraphPoints

SUITES = ("axioms", "md-convergence", "liplip", "seminorms", "alberti", "blowup", "factoring")

TOLERANCES = {
    # scale factor applied to every numeric acceptance threshold
    "fine": 1.0,
    "medium": 1.5,
    "coarse": 2.0,
}


@dataclass
class RunConfig:
    depth: int = 6
    seed: int = 1
    tolerance: str = "fine"
    suites: tuple = SUITES
    system_path: str | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.tolerance not in TOLERANCES:
            raise ValueError(f"tolerance must be one of {sorted(TOLERANCES)}")
        for s in self.suites:
            if s not in SUITES:
                raise ValueError(f"unknown suite {s!r}")

    @property
    def tol_factor(self) -> float:
        return TOLERANCES[self.tolerance]

    def rng(self, suite: str) -> np.random.Generator:
        """Named sub-stream: the same suite always sees the same numbers."""
        return np.random.default_rng([int(self.seed), zlib.crc32(suite.encode())])


@dataclass
class SuiteResult:
    name: str
    passed: bool
    criteria: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # filename -> text

    def to_dict(self) -> dict:
        return {"passed": self.passed, "criteria": self.criteria}


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _f(x) -> float:
    return float(x)


def laakso(depth: int, m: int = 2, rule: str = "doubling") -> inverse_system.InverseSystem:
    return inverse_system.generate_standard(AdmissibilityProfile(m), depth, rule)


def _system(cfg: RunConfig, depth: int | None = None):
    if cfg.system_path:
        return inverse_system.InverseSystem.load(cfg.system_path)
    return laakso(depth if depth is not None else cfg.depth)


# ---------------------------------------------------------------------------


def suite_axioms(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    rows, ok = [], True
    crit = {}
    if cfg.system_path:
        sysm = inverse_system.InverseSystem.load(cfg.system_path)
        rep = inverse_system.validate(sysm)
        crit["validate"] = rep.to_dict()
        ok = rep.passed
        for name, r in rep.results.items():
            rows.append((name, int(r.passed), r.checked, r.witness or ""))
        return SuiteResult("axioms", ok, crit, {"axioms.csv": _csv(("axiom", "passed", "checked", "witness"), rows)})
    K = min(cfg.depth, 6)
    for m in (2, 3, 4):
        for rule in ("doubling", "periodic"):
            for k in range(1, K + 1):
                sysm = inverse_system.generate_standard(AdmissibilityProfile(m), k, rule, seed=cfg.seed)
                rep = inverse_system.validate(sysm)
                ok &= rep.passed
                rows.append((m, rule, k, int(rep.passed), sysm.levels[-1].n_edges,
                             ";".join(f.name for f in rep.failures())))
    crit["sweep"] = {"passed": bool(ok), "systems": len(rows)}
    bigon = inverse_system.check_monotone_bigon(laakso(3), 0, 4)
    crit["bigon"] = {"min_feasible_D": bigon.min_feasible_D, "holds": bigon.holds}
    ok &= bigon.holds
    return SuiteResult("axioms", bool(ok), crit,
                       {"axioms.csv": _csv(("m", "rule", "K", "passed", "edges", "failures"), rows)})


def suite_md(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    tol = 1e-3 * cfg.tol_factor
    F = fragments
    l1, l2 = F.EuclideanSpace(2, 1), F.EuclideanSpace(2, 2)
    grid1, grid2 = l1.grid(-4, 4, 81), l2.grid(-4, 4, 81)
    line = F.Fragment.from_function(lambda t: np.c_[t, 2 * t], [(0, 1)], l1, 10_000, 3.0)
    circ = F.Fragment.from_function(lambda t: np.c_[np.cos(t), np.sin(t)], [(0, 2 * np.pi)], l2, 10_000)
    X = LimitSpace(_system(cfg), min(cfg.depth, 6))
    geo = X.monotone_geodesic_through(X.sample_points(1, rng)[0], rng=rng, n_samples=10_000)
    kink = F.Fragment.from_function(lambda t: np.c_[t, np.abs(t)], [(-1, 1)], l2, 10_000, 2.0)
    cases = [("l1_line", line, grid1, 3.0), ("l2_circle", circ, grid2, 1.0),
             ("laakso_geodesic", geo, X.dense_set, 1.0)]
    rows, crit, ok = [], {}, True
    for name, frag, D, target in cases:
        a, b = frag.domain.intervals[0]
        errs = []
        for t in a + (b - a) * np.array([0.2, 0.45, 0.7]):
            r = F.metric_differential(frag, float(t), D_X=D)
            errs.append(abs(r.estimate - target))
            rows += [(name, repr(float(t)), h, v) for h, v in r.to_rows()]
            ok &= r.exists
        crit[name] = {"max_error": max(errs), "passed": max(errs) < tol}
        ok &= max(errs) < tol
    r = F.metric_differential(kink, 0.0, D_X=grid2)
    crit["kink_flag"] = {"flagged": not r.exists, "md1_spread": r.md1_spread}
    ok &= not r.exists
    rows += [("kink", "0.0", h, v) for h, v in r.to_rows()]
    seg = F.Fragment.from_function(lambda t: t.reshape(-1, 1), [(0, 1)], F.EuclideanSpace(1), 4097)
    dbl = F.Fragment.from_function(lambda t: np.minimum(t, 2 - t).reshape(-1, 1), [(0, 2)], F.EuclideanSpace(1), 4097)
    area_rows = []
    for name, frag in (("segment", seg), ("doubled", dbl)):
        a = F.area_formula_check(frag)
        good = a.residual < tol and a.decays
        crit[f"area_{name}"] = {"residuals": [float(x) for x in a.residuals], "passed": good}
        ok &= good
        area_rows += [(name, e, l, a.rhs, res) for e, l, res in zip(a.resolutions, a.lhs, a.residuals)]
    return SuiteResult("md-convergence", bool(ok), crit, {
        "md_convergence.csv": _csv(("case", "t", "scale", "estimate"), rows),
        "area_formula.csv": _csv(("case", "resolution", "lhs", "rhs", "residual"), area_rows),
    })


def suite_liplip(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    X = LimitSpace(_system(cfg), min(cfg.depth, 6))
    pts = X.sample_points(200, rng)
    funcs = [("phi", X.phi_many)]
    for k, q in enumerate(X.sample_points(3, rng)):
        funcs.append((f"d_q{k}", lip_analysis.distance_function(X, q)))
    rows, crit, ok = [], {}, True
    med_cap, p90_cap = 1 + 0.05 * cfg.tol_factor, 1 + 0.15 * cfg.tol_factor
    for name, f in funcs:
        sw = lip_analysis.liplip_sweep(X, f, pts)
        q = sw.quantiles()
        good = 1.0 - 1e-12 <= q["median"] <= med_cap and q["p90"] <= p90_cap and sw.ladder_nonincreasing()
        crit[name] = {**q, "ladder": [float(x) for x in sw.ladder], "passed": bool(good)}
        ok &= good
        rows += [(name,) + tuple(r) for r in sw.rows]
    return SuiteResult("liplip", bool(ok), crit, {
        "liplip.csv": _csv(("f", "point_id", "phi_value", "Lip", "lip", "ratio", "finest_scale"), rows)})


def suite_seminorms(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    sizes = (250, 500, 1000)
    cap = 0.05 * cfg.tol_factor
    crit, rows, ok = {}, [], True
    seed = int(rng.integers(0, 2 ** 31))
    host = fragments.EuclideanSpace(2, 1)
    X = LimitSpace(_system(cfg), min(cfg.depth, 6))
    cases = [("l1_plane", host, np.array([0.3, 0.2]))]
    for k, p in enumerate(X.sample_points(3, rng)):
        cases.append((f"laakso_{k}", X, p))
    for name, h, p in cases:
        lad = lip_analysis.seminorm_ladder(h, p, sizes, seed=seed)
        good = lad[-1] < cap and all(b <= a + 1e-12 for a, b in zip(lad, lad[1:]))
        crit[name] = {"ladder": [float(x) for x in lad], "passed": bool(good)}
        ok &= good
        rows += [(name, n, d) for n, d in zip(sizes, lad)]
    return SuiteResult("seminorms", bool(ok), crit,
                       {"seminorms.csv": _csv(("case", "generators", "discrepancy"), rows)})


def suite_alberti(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    crit, ok = {}, True
    fub = alberti.fubini_rep(2, 0, 1000)
    val = fub.integrate(lambda p: p[:, 0] * p[:, 1])
    crit["fubini_xy"] = {"value": val, "passed": abs(val - 0.25) < 1e-4 * cfg.tol_factor}
    ok &= crit["fubini_xy"]["passed"]
    sysm = _system(cfg, min(cfg.depth, 4))
    X = LimitSpace(sysm)
    rep = alberti.monotone_rep(X, 1000, seed=int(rng.integers(0, 2 ** 31)))
    rows, worst = [], 0.0
    for lvl in range(0, min(2, X.K) + 1):
        for e in range(sysm.levels[lvl].n_edges):
            exact = float(sysm.levels[lvl].edges[e].mass)
            est = rep.integrate(alberti.cylinder_indicator(X, lvl, e))
            rel = abs(est - exact) / exact
            worst = max(worst, rel)
            rows.append((lvl, e, exact, est, rel))
    crit["cylinders_sampled"] = {"max_rel_error": worst, "passed": worst < 0.02 * cfg.tol_factor}
    ok &= worst < 0.02 * cfg.tol_factor
    exact_ok = True
    for lvl in range(1, min(2, X.K) + 1):
        Xl = LimitSpace(sysm, lvl)
        er = alberti.monotone_rep(Xl, mode="enumerate")
        for j in range(lvl + 1):
            for e in range(sysm.levels[j].n_edges):
                exact_ok &= alberti.exact_cylinder_integral(er, Xl, j, e) == sysm.levels[j].edges[e].mass
    crit["cylinders_exact"] = {"passed": bool(exact_ok)}
    ok &= exact_ok
    return SuiteResult("alberti", bool(ok), crit, {
        "alberti_cylinders.csv": _csv(("level", "edge", "exact", "rep", "rel_error"), rows)})


def suite_blowup(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    crit, ok = {}, True
    K = min(cfg.depth, 6)
    sysm = _system(cfg, K)
    X = LimitSpace(sysm, K)
    m = sysm.m
    sig = [blowup.blow_up(X, blowup.generic_point(X, rng), K - 2).sigma for _ in range(20)]
    crit["sigma"] = {"min": min(sig), "max": max(sig), "passed": all(1 <= s <= m for s in sig)}
    ok &= crit["sigma"]["passed"]
    p = blowup.generic_point(X, rng, margin=0.25)
    inst = blowup.blow_up(X, p, max(K - 3, 0))
    rep = alberti.monotone_rep(X, 200, seed=int(rng.integers(0, 2 ** 31)))
    brep = blowup.blow_up_rep(inst, rep)
    speed = blowup.unit_speed_defect(inst, brep)
    crit["unit_speed"] = {"defect": speed, "passed": speed < 1e-9}
    ok &= speed < 1e-9
    rows, certs = [], []
    for k in range(max(K - 2, 3), K + 1):
        Xk = LimitSpace(sysm, k)
        pk = Xk.point(X.project_many(GraphPoints([p.top.edge], [float(p.top.s)]), k)[0])
        st = blowup.submersion_check(blowup.blow_up(Xk, pk, 2), 200, np.random.default_rng(cfg.seed))
        raw_bound = Xk.bound
        rows.append((k, st.median, st.max, st.certified, raw_bound))
        certs.append(st.certified)
        ok &= st.median <= raw_bound * cfg.tol_factor
    dec = all(b < a for a, b in zip(certs, certs[1:]))
    crit["submersion"] = {"rows": [[float(x) for x in r] for r in rows], "decreasing": dec}
    ok &= dec
    var = blowup.variation_check(inst, n_pairs=50, rng=rng)
    vmax = max(r.residual for r in var)
    crit["variation"] = {"max_residual": vmax, "limit": 2 * X.bound, "passed": vmax <= 2 * X.bound * cfg.tol_factor}
    ok &= crit["variation"]["passed"]
    return SuiteResult("blowup", bool(ok), crit, {
        "submersion.csv": _csv(("K", "median_defect", "max_defect", "certified", "bracket"), rows),
        "variation.csv": _csv(("center", "radius", "var", "predicted", "residual"),
                              [(r.center, r.radius, r.var, r.predicted, r.residual) for r in var]),
    })


def psi_test(t):
    """Piecewise-smooth test map with a kink at 0.3."""
    return np.sin(3 * t) + 0.5 * np.abs(t - 0.3)


def psi_test_slope(t):
    return 3 * np.cos(3 * t) + 0.5 * np.sign(t - 0.3)


def suite_factoring(cfg: RunConfig, rng: np.random.Generator) -> SuiteResult:
    crit, ok, rows = {}, True, []
    depths = (4, 5, 6)
    sysm = _system(cfg, 6) if not cfg.system_path else inverse_system.InverseSystem.load(cfg.system_path)
    pseed = int(rng.integers(0, 2 ** 31))
    ident = blowup.factoring_ladder(sysm, depths, lambda sp: (blowup.line_map(sp), blowup.LineTarget()), pseed)
    zero = all(r.fiber_defect == 0 and r.speed_defect < 1e-9 for _, r in ident)
    crit["phi_line"] = {"passed": bool(zero)}
    ok &= zero
    for K, r in ident:
        rows.append(("phi", K, r.speed_defect, r.fiber_defect, r.fiber_defect_all))
    lad = blowup.factoring_ladder(sysm, depths, lambda sp: (blowup.line_map(sp, psi_test), blowup.LineTarget()), pseed)
    deepest = LimitSpace(sysm, max(depths))
    p = blowup.generic_point(deepest, np.random.default_rng(pseed), margin=0.25)
    slope = abs(float(psi_test_slope(deepest.phi(p))))
    rel = [abs(r.speed_estimate - slope) / slope for _, r in lad]
    fib = [r.fiber_defect for _, r in lad]
    good = rel[-1] < 0.02 * cfg.tol_factor and all(b <= a + 1e-12 for a, b in zip(fib, fib[1:]))
    crit["psi_line"] = {"speed_rel_error": rel, "fiber_defects": fib, "passed": bool(good)}
    ok &= good
    for (K, r), e in zip(lad, rel):
        rows.append(("psi", K, e, r.fiber_defect, r.fiber_defect_all))
    tun = inverse_system.generate_standard(AdmissibilityProfile(2, theta=4), 4, "tunnel")
    flagged = []
    for K in (2, 3, 4):
        sp = LimitSpace(tun, K)
        pt = sp.at_phi(0.5)
        tree, F = blowup.tunnel_tripod_map(sp)
        r = blowup.factoring_check(blowup.blow_up(sp, pt, 0, 1.0), F, tree)
        flagged.append(not r.passed)
        rows.append(("tunnel_tripod", K, r.speed_defect, r.fiber_defect, r.fiber_defect_all))
    crit["tunnel_tripod"] = {"flagged_at_every_depth": all(flagged), "passed": all(flagged)}
    ok &= all(flagged)
    return SuiteResult("factoring", bool(ok), crit, {
        "factoring.csv": _csv(("map", "K", "speed_defect", "fiber_defect", "fiber_defect_all"), rows)})


RUNNERS: dict[str, Callable] = {
    "axioms": suite_axioms,
    "md-convergence": suite_md,
    "liplip": suite_liplip,
    "seminorms": suite_seminorms,
    "alberti": suite_alberti,
    "blowup": suite_blowup,
    "factoring": suite_factoring,
}


def run_suite(name: str, cfg: RunConfig) -> SuiteResult:
    return RUNNERS[name](cfg, cfg.rng(name))


def summary_json(results: list[SuiteResult]) -> str:
    body = {
        "passed": all(r.passed for r in results),
        "suites": {r.name: r.to_dict() for r in results},
    }
    return json.dumps(body, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not serialisable: {type(x)}")
