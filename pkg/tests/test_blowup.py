from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdl import AdmissibilityProfile, GraphError, GraphPoints, LimitSpace, generate_standard, validate
from mdl.alberti import monotone_rep
from mdl.blowup import (
    LineTarget,
    TreeTarget,
    blow_up,
    blow_up_rep,
    factoring_check,
    factoring_ladder,
    generic_point,
    line_map,
    lipschitz_half_check,
    submersion_check,
    tunnel_tripod_map,
    unit_speed_defect,
    variation_check,
    window_cylinder_residuals,
    window_system,
)
from mdl.inverse_system import interval_system
from mdl.metric_graph import Edge, MetricGraph


def psi(t):
    return np.sin(3 * t) + 0.5 * np.abs(t - 0.3)


def psi_slope(t):
    return 3 * np.cos(3 * t) + 0.5 * np.sign(t - 0.3)


@pytest.fixture(scope="module")
def inst6(space6):
    p = generic_point(space6, np.random.default_rng(3), margin=0.25)
    return blow_up(space6, p, 3)


class TestInstance:
    @given(st.integers(0, 10 ** 6))
    def test_sigma_range(self, space6, seed):
        inst = blow_up(space6, generic_point(space6, np.random.default_rng(seed)), 4)
        assert 1.0 <= inst.sigma <= space6.m

    def test_sigma_formula(self, space6):
        p = space6.at_phi(0.3 + 1e-9)
        inst = blow_up(space6, p, 2)
        frac = (inst.phi_p * 4) % 1.0
        assert inst.sigma == pytest.approx(2 ** frac, rel=1e-12)

    def test_normalization(self, inst6):
        q = inst6.p.top
        assert inst6.c * inst6.nu_hat_ball(q, 1 / inst6.sigma) == pytest.approx(1.0, rel=1e-12)
        assert inst6.nu_hat_ball(q, 1.0) == pytest.approx(1.0, rel=1e-12)

    def test_insufficient_depth(self, space4):
        with pytest.raises(GraphError, match="insufficient depth"):
            blow_up(space4, space4.at_phi(0.37), 3)

    def test_boundary_point(self, space6):
        with pytest.raises(GraphError, match="boundary"):
            blow_up(space6, space6.at_phi(0.0), 2)

    def test_negative_scale(self, space6):
        with pytest.raises(GraphError):
            blow_up(space6, space6.at_phi(0.4), -1)

    def test_trivial_system(self):
        X = LimitSpace(interval_system(2, 6))
        inst = blow_up(X, X.at_phi(0.4), 3)
        pts = GraphPoints(np.arange(X.graph.n_edges), X.graph.lengths / 3)
        d = inst.d_hat(inst.p, pts)
        assert np.allclose(d, np.abs(inst.phi_hat(pts)), atol=1e-12)
        assert submersion_check(inst, 50).max < 1e-12


class TestWindowSystem:
    def test_validates(self, inst6):
        W = window_system(inst6)
        assert W.signed
        assert len(W.levels) == inst6.space.K - inst6.n + 1
        assert validate(W).passed

    def test_unit_cells(self, inst6):
        W = window_system(inst6)
        assert all(e.length == 1 for e in W.levels[0].edges)


class TestSubmersion:
    def test_within_bracket(self, inst6):
        st_ = submersion_check(inst6, 100, np.random.default_rng(1))
        assert st_.flagged == 0
        assert st_.median <= inst6.bound
        assert st_.max <= inst6.bound + 1e-9

    def test_ladder_decreases(self, laakso6):
        X = LimitSpace(laakso6)
        p = generic_point(X, np.random.default_rng(7), margin=0.25)
        certs = []
        for K in (4, 5, 6):
            Xk = LimitSpace(laakso6, K)
            pk = Xk.point(X.project_many(GraphPoints([p.top.edge], [float(p.top.s)]), K)[0])
            st_ = submersion_check(blow_up(Xk, pk, 2), 100, np.random.default_rng(1))
            assert st_.median <= Xk.bound / 0.25 + 1e-12
            certs.append(st_.certified)
        assert certs[0] > certs[1] > certs[2]

    def test_lipschitz_half(self, inst6):
        assert lipschitz_half_check(inst6, 100, np.random.default_rng(2)) <= 1e-9


class TestReps:
    def test_unit_speed(self, space6, inst6):
        rep = blow_up_rep(inst6, monotone_rep(space6, 100, seed=1))
        assert len(rep) > 0
        assert unit_speed_defect(inst6, rep) < 1e-9

    def test_rejects_non_geodesic_parent(self, inst6):
        from mdl.alberti import fubini_rep

        with pytest.raises(ValueError):
            blow_up_rep(inst6, fubini_rep(1, 0, 3))

    def test_window_cylinders(self, space6, inst6):
        rep = blow_up_rep(inst6, monotone_rep(space6, 2000, seed=5))
        rows = window_cylinder_residuals(inst6, rep, inst6.n)
        assert len(rows) >= 4
        for _, ref, got in rows:
            assert abs(got - ref) / ref < 0.02


class TestVariation:
    def test_phi(self, inst6):
        rows = variation_check(inst6, n_pairs=30, rng=np.random.default_rng(4))
        assert rows
        assert max(r.residual for r in rows) <= 2 * inst6.bound

    def test_constant(self, inst6):
        rows = variation_check(inst6, alpha=lambda t: np.zeros_like(t), alpha_slope=0.0,
                               n_pairs=20, rng=np.random.default_rng(4))
        assert all(r.var == 0.0 and r.residual == 0.0 for r in rows)

    def test_affine(self, inst6):
        rows = variation_check(inst6, alpha=lambda t: -2 * t + 1, alpha_slope=-2.0,
                               n_pairs=20, rng=np.random.default_rng(4))
        assert max(r.residual for r in rows) <= 4 * inst6.bound


class TestFactoring:
    def test_phi_zero(self, laakso6):
        lad = factoring_ladder(laakso6, (4, 5, 6), lambda sp: (line_map(sp), LineTarget()), 11)
        for _, r in lad:
            assert r.fiber_defect == 0.0
            assert r.speed_defect < 1e-9
            assert r.passed

    def test_psi_speed(self, laakso6):
        # seed chosen so the coarsest window stays clear of the kink at 0.3
        seed = 2
        lad = factoring_ladder(laakso6, (4, 5, 6), lambda sp: (line_map(sp, psi), LineTarget()), seed)
        deepest = LimitSpace(laakso6, 6)
        p = generic_point(deepest, np.random.default_rng(seed), margin=0.25)
        slope = abs(float(psi_slope(deepest.phi(p))))
        rel = [abs(r.speed_estimate - slope) / slope for _, r in lad]
        assert abs(deepest.phi(p) - 0.3) > 2 * 2.0 ** -4
        assert rel[-1] < 0.02
        assert rel[-1] < rel[0]
        assert all(r.fiber_defect == 0.0 for _, r in lad)

    @pytest.mark.parametrize("K", [2, 3, 4])
    def test_tunnel_tripod_flagged(self, K):
        tun = generate_standard(AdmissibilityProfile(2, theta=4), 4, "tunnel")
        sp = LimitSpace(tun, K)
        tree, F = tunnel_tripod_map(sp)
        r = factoring_check(blow_up(sp, sp.at_phi(0.5), 0, 1.0), F, tree)
        assert not r.passed
        assert r.fiber_defect_all > 0.5

    def test_not_a_tree(self):
        cyc = MetricGraph(3, [Edge(0, 1, 1, 1), Edge(1, 2, 1, 1), Edge(2, 0, 1, 1)])
        with pytest.raises(GraphError, match="not a tree"):
            TreeTarget(cyc)

    def test_tree_load(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps(TreeTarget.tripod().graph.to_dict()))
        assert TreeTarget.load(path).graph.n_edges == 3

    def test_report_dict(self, laakso6):
        (_, r), = factoring_ladder(laakso6, (5,), lambda sp: (line_map(sp), LineTarget()), 2)
        d = r.to_dict()
        assert d["passed"] is True and isinstance(d["speed_estimate"], float)
