from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from mdl import LimitSpace
from mdl.alberti import (
    AlbertiRep,
    branch_probability,
    cylinder_indicator,
    exact_cylinder_integral,
    fubini_rep,
    glue,
    load_rep,
    monotone_rep,
    restrict_rep,
    save_rep,
    verify_rep,
)
from mdl.fragments import chord_md
from mdl.inverse_system import enumerate_lifts


def disk_chord_oracle(grid: int, c=0.5, r=0.3) -> float:
    """Midpoint rule over horizontal lines of the exact chord lengths of the disk."""
    y = (np.arange(grid) + 0.5) / grid
    half = np.sqrt(np.clip(r ** 2 - (y - c) ** 2, 0, None))
    return float(np.sum(2 * half) / grid)


class TestFubini:
    def test_xy(self):
        rep = fubini_rep(2, 0, 1000)
        assert rep.integrate(lambda P: P[:, 0] * P[:, 1]) == pytest.approx(0.25, abs=1e-4)
        assert rep.total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_one_dimensional_exact(self):
        rep = fubini_rep(1, 0, 1)
        assert len(rep) == 1
        assert rep.integrate(lambda P: P[:, 0] ** 3) == pytest.approx(0.25, abs=1e-14)

    def test_disk(self):
        rep = fubini_rep(2, 0, 400)
        disk = lambda P: (((P[:, 0] - 0.5) ** 2 + (P[:, 1] - 0.5) ** 2) <= 0.09).astype(float)  # noqa: E731
        ref = disk_chord_oracle(400)
        coarse = abs(rep.integrate(disk) - ref)
        fine = abs(rep.integrate(disk, nodes=64) - ref)
        assert coarse < 5e-3
        assert fine < coarse
        assert ref == pytest.approx(np.pi * 0.09, abs=1e-4)


class TestVerify:
    def test_polynomials(self):
        rep = fubini_rep(2, 1, 1000)
        exact = {"x": 0.5, "xy": 0.25, "x2y": 1 / 6}
        tests = {"x": lambda P: P[:, 0], "xy": lambda P: P[:, 0] * P[:, 1], "x2y": lambda P: P[:, 0] ** 2 * P[:, 1]}
        rows = verify_rep(rep, lambda g: exact[next(k for k, v in tests.items() if v is g)], tests)
        assert max(r.residual for r in rows) < 1e-4

    def test_doubled_weight_detected(self):
        rep = fubini_rep(2, 0, 100)
        bad = rep.scaled(7, 2.0)
        injected = rep.weights[7] * 1.0  # the doubled line has mass weight * 1
        row, = verify_rep(bad, lambda g: 1.0, {"one": lambda P: np.ones(len(P))})
        assert row.residual >= injected - 1e-12

    def test_zero_function(self):
        rep = fubini_rep(2, 0, 50)
        row, = verify_rep(rep, lambda g: 0.0, {"zero": lambda P: np.zeros(len(P))})
        assert row.residual == 0.0


class TestMonotoneRep:
    def test_interval_single_line(self, line_system):
        X = LimitSpace(line_system)
        rep = monotone_rep(X, mode="enumerate")
        assert len(rep) == 1 and rep.exact_weights == [Fraction(1)]
        assert rep.integrate(lambda P: X.phi_many(P) ** 2) == pytest.approx(1 / 3, abs=1e-14)

    def test_level2_cells(self, space4, laakso4):
        rep = monotone_rep(space4, 1000, seed=11)
        for e in range(laakso4.levels[2].n_edges):
            exact = float(laakso4.levels[2].edges[e].mass)
            got = rep.integrate(cylinder_indicator(space4, 2, e))
            assert abs(got - exact) / exact < 0.02

    def test_enumerate_exact(self, laakso4):
        X = LimitSpace(laakso4, 3)
        rep = monotone_rep(X, mode="enumerate")
        assert sum(rep.exact_weights) == 1
        for lvl in range(4):
            for e in range(laakso4.levels[lvl].n_edges):
                assert exact_cylinder_integral(rep, X, lvl, e) == laakso4.levels[lvl].edges[e].mass

    def test_branch_probability_sums(self, laakso4):
        X = LimitSpace(laakso4, 2)
        lifts = enumerate_lifts(laakso4, 0, X.base_geodesic(), 2)
        assert sum(branch_probability(X, g) for g in lifts) == 1

    def test_projection_compatible(self, space4, laakso4):
        rep = monotone_rep(space4, 200, seed=2)
        for k in (1, 2, 3):
            down = rep.project(space4, k)
            for e in range(0, laakso4.levels[k].n_edges, 3):
                a = rep.integrate(cylinder_indicator(space4, k, e))
                b = down.integrate(lambda P, e=e: (P.edges == e).astype(float))
                assert a == pytest.approx(b, abs=1e-12)

    def test_unit_speed_lines(self, space6):
        rep = monotone_rep(space6, 20, seed=5)
        for gam in rep.fragments:
            assert np.allclose(chord_md(gam)[1:-1], 1.0, atol=1e-12)
            ph = space6.phi_many(gam.points)
            assert np.allclose(np.diff(ph) / np.diff(gam.times), 1.0, atol=1e-9)

    def test_total_mass(self, space6):
        assert monotone_rep(space6, 50, seed=1).total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_bad_mode(self, space4):
        with pytest.raises(ValueError):
            monotone_rep(space4, 10, mode="bogus")

    def test_seeded(self, space4):
        a = monotone_rep(space4, 30, seed=9)
        b = monotone_rep(space4, 30, seed=9)
        assert [g.geodesic.edges for g in a.fragments] == [g.geodesic.edges for g in b.fragments]


class TestRestrictGlue:
    def test_whole_and_empty(self, space4):
        rep = monotone_rep(space4, 50, seed=0)
        g = lambda P: space4.phi_many(P)  # noqa: E731
        whole = restrict_rep(rep, lambda P: np.ones(len(P), bool))
        empty = restrict_rep(rep, lambda P: np.zeros(len(P), bool))
        assert whole.integrate(g) == pytest.approx(rep.integrate(g), abs=1e-14)
        assert empty.integrate(g) == 0.0

    def test_half_and_glue(self, space6):
        rep = monotone_rep(space6, 200, seed=0)
        lo = restrict_rep(rep, lambda P: space6.phi_many(P) <= 0.5)
        hi = restrict_rep(rep, lambda P: space6.phi_many(P) > 0.5)
        assert lo.total_mass() == pytest.approx(0.5, rel=0.01)
        both = glue([lo, hi])
        assert both.total_mass() == pytest.approx(1.0, abs=1e-12)
        tests = {"phi": space6.phi_many}
        parent = verify_rep(rep, lambda g: 0.5, tests)[0].residual
        glued = verify_rep(both, lambda g: 0.5, tests)[0].residual
        r_lo = verify_rep(lo, lambda g: 0.125, tests)[0].residual
        r_hi = verify_rep(hi, lambda g: 0.375, tests)[0].residual
        assert glued <= r_lo + r_hi + 1e-12
        assert glued == pytest.approx(parent, abs=1e-12)


class TestIO:
    def test_round_trip(self, tmp_path, space4, laakso4):
        rep = monotone_rep(space4, 40, seed=4)
        save_rep(rep, tmp_path / "rep.json")
        back = load_rep(tmp_path / "rep.json", space4.host)
        for e in range(laakso4.levels[2].n_edges):
            g = cylinder_indicator(space4, 2, e)
            assert back.integrate(g) == pytest.approx(rep.integrate(g), abs=1e-12)

    def test_bad_weights(self):
        rep = fubini_rep(2, 0, 4)
        with pytest.raises(ValueError):
            AlbertiRep(rep.fragments, [-1.0] * len(rep))
        with pytest.raises(ValueError):
            AlbertiRep(rep.fragments, [1.0])
