"""``mdl`` command-line interface.

Exit codes: 0 success, 1 a check or suite failed, 2 usage or parse error.
Numeric output is CSV (plot-ready ladders) or JSON (structured reports);
floats are written with ``repr`` so outputs round-trip exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import alberti, blowup, fragments, inverse_system, lip_analysis, suites
from .limit_space import LimitSpace
from .metric_graph import AdmissibilityProfile, GraphError, GraphPoint


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("MDL_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MDL_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=suites._json_default) + "\n"


def _load_system(path: str) -> inverse_system.InverseSystem:
    try:
        return inverse_system.InverseSystem.load(path)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"cannot parse system file {path}: {e}") from None


def _space(args) -> LimitSpace:
    sysm = _load_system(args.system)
    try:
        return LimitSpace(sysm, args.depth)
    except GraphError as e:
        raise UsageError(str(e)) from None


def _graph_point(text: str) -> GraphPoint:
    """``EDGE:OFFSET`` with the offset a float or a fraction like ``1/8``."""
    try:
        e, s = text.split(":")
        return GraphPoint(int(e), Fraction(s))
    except ValueError:
        raise UsageError(f"bad point {text!r}, expected EDGE:OFFSET") from None


def _host(args):
    if args.host == "graph":
        if not args.system:
            raise UsageError("--host graph needs --system")
        return _space(args).host
    return fragments.EuclideanSpace(args.dim, {"l1": 1, "l2": 2, "linf": np.inf}[args.host])


def _load_fragment(args):
    host = _host(args)
    try:
        return fragments.load_fragment(args.fragment, host), host
    except OSError as e:
        raise UsageError(f"cannot read {args.fragment}: {e.strerror}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"cannot parse fragment file {args.fragment}: {e}") from None


def _rows_csv(header, rows) -> str:
    return suites._csv(header, rows)


# ---------------------------------------------------------------------------
# commands


def cmd_system_gen(args) -> int:
    prof = AdmissibilityProfile(args.m, theta=args.theta)
    sysm = inverse_system.generate_standard(prof, args.depth, args.rule, seed=args.seed)
    _emit(json.dumps(sysm.to_dict(), sort_keys=True) + "\n", args.out)
    return 0


def cmd_system_validate(args) -> int:
    sysm = _load_system(args.system)
    rep = inverse_system.validate(sysm)
    body = rep.to_dict()
    ok = rep.passed
    if args.bigon is not None:
        b = inverse_system.check_monotone_bigon(sysm, 0, args.bigon)
        body["bigon"] = {"holds": b.holds, "min_feasible_D": b.min_feasible_D,
                         "counterexample": repr(b.counterexample) if b.counterexample else None}
        ok &= b.holds
    _emit(_dump(body), args.out)
    return 0 if ok else 1


def cmd_limit_dist(args) -> int:
    X = _space(args)
    try:
        x, y = X.point(_graph_point(args.x)), X.point(_graph_point(args.y))
    except GraphError as e:
        raise UsageError(str(e)) from None
    br = X.d_infinity(x, y)
    _emit(_dump({"estimate": br.estimate, "bound": br.bound, "lower": br.lower, "upper": br.upper}), args.out)
    return 0


def _dense(args, host):
    if isinstance(host, fragments.GraphHost):
        return host.vertices()
    lo, hi, n = args.grid.split(",")
    return host.grid(float(lo), float(hi), int(n))


def cmd_frag_md(args) -> int:
    gam, host = _load_fragment(args)
    try:
        r = fragments.metric_differential(gam, args.t, D_X=_dense(args, host))
    except fragments.FragmentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    rows = [(h, v) for h, v in r.to_rows()]
    text = _rows_csv(("scale", "estimate"), rows)
    _emit(text, args.out)
    print(f"md={r.estimate!r} exists={r.exists}", file=sys.stderr)
    return 0


def cmd_frag_len(args) -> int:
    gam, _ = _load_fragment(args)
    try:
        r = fragments.fragment_length(gam, hausdorff=args.hausdorff)
    except fragments.FragmentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    _emit(_rows_csv(("quantity", "value"), [("polyline", r.polyline), ("integral_md", r.integral_md),
                                             ("spread", r.spread)]), args.out)
    return 0


def cmd_frag_area(args) -> int:
    gam, _ = _load_fragment(args)
    a = fragments.area_formula_check(gam)
    rows = [(e, lhs, a.rhs, res) for e, lhs, res in zip(a.resolutions, a.lhs, a.residuals)]
    _emit(_rows_csv(("resolution", "lhs", "rhs", "residual"), rows), args.out)
    return 0


def _lip_function(X: LimitSpace, spec: str):
    if spec == "phi":
        return X.phi_many
    if spec.startswith("dist:"):
        return lip_analysis.distance_function(X, _graph_point(spec[5:]))
    if spec == "const":
        return lip_analysis.constant_function(0.0)
    raise UsageError(f"unknown function {spec!r} (phi, dist:EDGE:OFFSET, const)")


def cmd_lip_sweep(args) -> int:
    X = _space(args)
    f = _lip_function(X, args.f)
    pts = X.sample_points(args.points, np.random.default_rng(args.seed))
    sw = lip_analysis.liplip_sweep(X, f, pts)
    _emit(_rows_csv(("point_id", "phi_value", "Lip", "lip", "ratio", "finest_scale"), sw.rows), args.out)
    return 0


def cmd_alberti_gen(args) -> int:
    X = _space(args)
    rep = alberti.monotone_rep(X, args.lines, seed=args.seed, mode=args.mode)
    _emit(json.dumps(rep.to_dict(), sort_keys=True) + "\n", args.out)
    return 0


def cmd_alberti_verify(args) -> int:
    X = _space(args)
    try:
        rep = alberti.load_rep(args.rep, X.host)
    except OSError as e:
        raise UsageError(f"cannot read {args.rep}: {e.strerror}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"cannot parse rep file {args.rep}: {e}") from None
    rows, worst = [], 0.0
    for lvl in range(args.level + 1):
        g = X.system.levels[lvl]
        for e in range(g.n_edges):
            exact = float(g.edges[e].mass)
            est = rep.integrate(alberti.cylinder_indicator(X, lvl, e))
            rel = abs(est - exact) / exact
            worst = max(worst, rel)
            rows.append((lvl, e, exact, est, rel))
    _emit(_rows_csv(("level", "edge", "exact", "rep", "rel_error"), rows), args.out)
    return 0 if worst < args.max_error else 1


def cmd_blowup_run(args) -> int:
    X = _space(args)
    rng = np.random.default_rng(args.p_seed)
    p = blowup.generic_point(X, rng, margin=0.25)
    try:
        inst = blowup.blow_up(X, p, args.scale, args.window)
    except GraphError as e:
        raise UsageError(str(e)) from None
    sub = blowup.submersion_check(inst, 200, np.random.default_rng(args.p_seed))
    win = inverse_system.validate(blowup.window_system(inst))
    body = {
        "point": {"edge": int(p.top.edge), "offset": float(p.top.s)},
        "phi_p": inst.phi_p, "n": inst.n, "r_n": inst.r_n, "sigma": inst.sigma, "c": inst.c,
        "bracket": inst.bound,
        "submersion": {"median": sub.median, "max": sub.max, "certified": sub.certified},
        "window_system": win.to_dict(),
    }
    _emit(_dump(body), args.out)
    return 0 if win.passed else 1


def _factor_map(spec: str, target_arg: str):
    if spec == "tripod":
        return lambda sp: tuple(reversed(blowup.tunnel_tripod_map(sp)))
    if spec == "phi":
        psi = None
    elif spec == "psi":
        psi = suites.psi_test
    elif spec.startswith("affine:"):
        try:
            a, b = (float(x) for x in spec[7:].split(","))
        except ValueError:
            raise UsageError(f"bad map {spec!r}, expected affine:A,B") from None
        psi = lambda t: a * t + b  # noqa: E731
    else:
        raise UsageError(f"unknown map {spec!r} (phi, psi, affine:A,B, tripod)")
    if target_arg != "line":
        raise UsageError("maps through phi need --target line")
    return lambda sp: (blowup.line_map(sp, psi) if psi else blowup.line_map(sp), blowup.LineTarget())


def cmd_blowup_factor(args) -> int:
    sysm = _load_system(args.system)
    make = _factor_map(args.map, args.target)
    if args.map == "tripod" and args.target != "line":
        tree = _load_tree(args.target)
        make = lambda sp: (blowup.tunnel_tripod_map(sp, tree.graph.lengths.max())[1], tree)  # noqa: E731
    try:
        depths = [int(k) for k in args.depths.split(",")]
    except ValueError:
        raise UsageError(f"bad --depths {args.depths!r}") from None
    rows, ok = [], True
    for K in depths:
        defects = []
        for j in range(args.points):
            seed = args.p_seed + j
            (_, r), = blowup.factoring_ladder(sysm, [K], make, seed) if args.map != "tripod" else [
                (K, _tripod_check(sysm, K, make))]
            rel = r.speed_defect / max(1.0, r.expected_speed)
            defects.append(max(rel, r.fiber_defect))
            ok &= r.passed
        rows.append((K, float(np.median(defects)), float(np.max(defects))))
    _emit(_rows_csv(("scale", "median_defect", "max_defect"), rows), args.out)
    return 0 if ok else 1


def _tripod_check(sysm, K, make):
    sp = LimitSpace(sysm, K)
    F, tree = make(sp)
    return blowup.factoring_check(blowup.blow_up(sp, sp.at_phi(0.5), 0, 1.0), F, tree)


def _load_tree(path: str):
    try:
        return blowup.TreeTarget.load(path)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    except GraphError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"cannot parse tree file {path}: {e}") from None


def cmd_run(args) -> int:
    names = list(suites.SUITES) if args.all or "all" in (args.suite or []) else list(dict.fromkeys(args.suite or []))
    if not names:
        raise UsageError("choose --suite NAME (repeatable) or --all")
    for n in names:
        if n not in suites.SUITES:
            raise UsageError(f"unknown suite {n!r}; choose from {', '.join(suites.SUITES)}")
    if args.system:
        _load_system(args.system)  # parse errors exit 2 before any suite runs
    cfg = suites.RunConfig(depth=args.depth, seed=args.seed, tolerance=args.tolerance,
                           suites=tuple(names), system_path=args.system)
    with ThreadPoolExecutor(max_workers=min(_threads(), len(names))) as pool:
        results = list(pool.map(lambda n: suites.run_suite(n, cfg), names))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        for fname, text in sorted(r.artifacts.items()):
            (out / fname).write_text(text)
    (out / "summary.json").write_text(suites.summary_json(results))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdl", description="Differentiability-space verification toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def out(sp):
        sp.add_argument("-o", "--out", default=None, help="output file (default stdout)")

    def system_depth(sp, need_system=True):
        if need_system:
            sp.add_argument("system", help="inverse system JSON")
        sp.add_argument("--depth", type=int, default=None, help="truncation depth K (default: deepest level)")

    sysp = sub.add_parser("system", help="generate or validate inverse systems").add_subparsers(
        dest="action", required=True)
    g = sysp.add_parser("gen")
    g.add_argument("--m", type=int, default=2)
    g.add_argument("--depth", type=int, required=True)
    g.add_argument("--rule", default="doubling")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--theta", type=int, default=1)
    out(g)
    g.set_defaults(func=cmd_system_gen)
    v = sysp.add_parser("validate")
    v.add_argument("system")
    v.add_argument("--bigon", type=float, default=None, help="also check the monotone bigon condition with this D")
    out(v)
    v.set_defaults(func=cmd_system_validate)

    lim = sub.add_parser("limit").add_subparsers(dest="action", required=True)
    d = lim.add_parser("dist")
    system_depth(d)
    d.add_argument("--x", required=True, help="EDGE:OFFSET at level K")
    d.add_argument("--y", required=True)
    out(d)
    d.set_defaults(func=cmd_limit_dist)

    fr = sub.add_parser("frag").add_subparsers(dest="action", required=True)
    for name, fn in (("md", cmd_frag_md), ("len", cmd_frag_len), ("area", cmd_frag_area)):
        f = fr.add_parser(name)
        f.add_argument("fragment")
        f.add_argument("--host", choices=("l1", "l2", "linf", "graph"), default="l2")
        f.add_argument("--dim", type=int, default=2)
        f.add_argument("--system", default=None, help="system JSON for --host graph")
        f.add_argument("--depth", type=int, default=None)
        out(f)
        f.set_defaults(func=fn)
        if name == "md":
            f.add_argument("--t", type=float, required=True)
            f.add_argument("--grid", default="-4,4,81", help="dense set LO,HI,N for Euclidean hosts")
        if name == "len":
            f.add_argument("--hausdorff", action="store_true")

    lp = sub.add_parser("lip").add_subparsers(dest="action", required=True)
    s = lp.add_parser("sweep")
    system_depth(s)
    s.add_argument("--f", default="phi", help="phi | dist:EDGE:OFFSET | const")
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    out(s)
    s.set_defaults(func=cmd_lip_sweep)

    al = sub.add_parser("alberti").add_subparsers(dest="action", required=True)
    a = al.add_parser("gen")
    system_depth(a)
    a.add_argument("--lines", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--mode", choices=("sample", "enumerate"), default="sample")
    out(a)
    a.set_defaults(func=cmd_alberti_gen)
    a = al.add_parser("verify")
    a.add_argument("rep")
    system_depth(a)
    a.add_argument("--level", type=int, default=2)
    a.add_argument("--max-error", type=float, default=0.02)
    out(a)
    a.set_defaults(func=cmd_alberti_verify)

    bl = sub.add_parser("blowup").add_subparsers(dest="action", required=True)
    b = bl.add_parser("run")
    system_depth(b)
    b.add_argument("--p-seed", type=int, default=0)
    b.add_argument("--scale", type=int, required=True, help="scale index n (radius m^-n)")
    b.add_argument("--window", type=float, default=2.0)
    out(b)
    b.set_defaults(func=cmd_blowup_run)
    b = bl.add_parser("factor")
    b.add_argument("system")
    b.add_argument("--target", default="line", help="'line' or a tree JSON file")
    b.add_argument("--map", default="phi", help="phi | psi | affine:A,B | tripod")
    b.add_argument("--depths", default="4,5,6")
    b.add_argument("--p-seed", type=int, default=0)
    b.add_argument("--points", type=int, default=3)
    out(b)
    b.set_defaults(func=cmd_blowup_factor)

    r = sub.add_parser("run", help="run verification suites")
    r.add_argument("system", nargs="?", default=None)
    r.add_argument("--suite", action="append", help="suite name (repeatable) or 'all'")
    r.add_argument("--all", action="store_true")
    r.add_argument("--depth", type=int, default=6)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--tolerance", choices=tuple(suites.TOLERANCES), default="fine")
    r.add_argument("-o", "--out-dir", default="mdl-out")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"mdl: error: {e}", file=sys.stderr)
        return 2
    except GraphError as e:
        print(f"mdl: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
