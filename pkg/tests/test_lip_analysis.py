from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdl import alberti
from mdl.fragments import EuclideanSpace
from mdl.lip_analysis import (
    Cone,
    big_lip,
    canonical_pullback_seminorm,
    constant_function,
    cone_speed_check,
    default_r_grid,
    direction_grid,
    directional_sup_check,
    distance_function,
    lip_ratio,
    liplip_sweep,
    phi_function,
    seminorm_compare,
    seminorm_ladder,
    small_lip,
    variation_profile,
)
from mdl.metric_graph import GraphPoint, GraphPoints, MetricGraph

R1 = EuclideanSpace(1)
L1 = EuclideanSpace(2, 1)


def _graph_host():
    from mdl.fragments import GraphHost

    g = MetricGraph(4, [(0, 1, 1, 1), (1, 2, 1, 1), (2, 3, 1, 1), (1, 3, 0.5, 1)])
    return g, GraphHost(g)


class TestPointwiseLip:
    def test_distance_on_graph(self):
        g, host = _graph_host()
        q = GraphPoint(0, 0.1)
        f = lambda P: g.distances_from(q, P)  # noqa: E731
        p = GraphPoint(1, 0.4)
        rs = 2.0 ** -np.arange(3, 9)
        assert big_lip(f, p, rs, host).estimate == pytest.approx(1.0)
        assert small_lip(f, p, rs, host).estimate == pytest.approx(1.0)

    def test_distance_at_its_centre(self):
        g, host = _graph_host()
        q = GraphPoint(1, 0.4)
        f = lambda P: g.distances_from(q, P)  # noqa: E731
        rs = 2.0 ** -np.arange(3, 9)
        assert big_lip(f, q, rs, host).estimate == pytest.approx(1.0)
        assert small_lip(f, q, rs, host).estimate == pytest.approx(1.0)

    def test_constant(self, space4):
        f = constant_function(2.0)
        p = space4.vertex_point(5)
        rs = default_r_grid(space4)
        assert big_lip(f, p, rs, space4).estimate == 0.0
        assert small_lip(f, p, rs, space4).estimate == 0.0

    def test_square_at_zero(self):
        f = lambda P: np.asarray(P)[:, 0] ** 2  # noqa: E731
        rs = 2.0 ** -np.arange(1, 10)
        assert small_lip(f, np.array([0.0]), rs, R1).estimate == pytest.approx(rs[-1])
        assert big_lip(f, np.array([0.0]), rs, R1).estimate == pytest.approx(rs[-3])
        # away from 0 the slope is 2x
        assert big_lip(f, np.array([0.5]), rs, R1).estimate == pytest.approx(1.0, abs=rs[-3])

    def test_phi_on_laakso(self, space6, rng):
        pts = space6.sample_points(10, rng)
        rs = default_r_grid(space6)
        for j in range(10):
            assert big_lip(space6.phi_many, pts[j], rs, space6).estimate == pytest.approx(1.0)
            assert small_lip(space6.phi_many, pts[j], rs, space6).estimate == pytest.approx(1.0)

    def test_bad_grid(self, space4):
        with pytest.raises(ValueError):
            variation_profile(space4, space4.phi_many, space4.vertex_point(0), [0.1, 0.2])
        with pytest.raises(ValueError):
            variation_profile(space4, space4.phi_many, space4.vertex_point(0), [0.1, -0.2])

    def test_ratio_convention(self):
        assert lip_ratio(0.0, 0.0) == 1.0
        assert lip_ratio(1.0, 0.0) == np.inf
        assert lip_ratio(2.0, 1.0) == 2.0


class TestSweep:
    def test_phi(self, space6, rng):
        sw = liplip_sweep(space6, space6.phi_many, space6.sample_points(40, rng))
        q = sw.quantiles()
        assert 1.0 <= q["median"] <= 1.05
        assert sw.ladder_nonincreasing()

    def test_constant(self, space4, rng):
        sw = liplip_sweep(space4, constant_function(1.0), space4.sample_points(10, rng))
        assert all(r[2] == 0 and r[3] == 0 and r[4] == 1.0 for r in sw.rows)

    def test_lip_le_Lip(self, space6, rng):
        q = space6.sample_points(1, rng)[0]
        sw = liplip_sweep(space6, distance_function(space6, q), space6.sample_points(30, rng))
        assert all(r[3] <= r[2] for r in sw.rows)
        assert all(r[2] <= 1.0 + 1e-12 for r in sw.rows)  # global Lipschitz bound

    @given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 10 ** 6))
    def test_scaling_equivariance(self, c, seed):
        from mdl import AdmissibilityProfile, LimitSpace, generate_standard

        X = LimitSpace(generate_standard(AdmissibilityProfile(2), 4))
        f = phi_function(X)
        p = X.sample_points(1, np.random.default_rng(seed))[0]
        rs = default_r_grid(X)
        a = big_lip(f.scaled(c), p, rs, X).estimate
        b = big_lip(f, p, rs, X).estimate
        assert a == pytest.approx(abs(c) * b, rel=1e-12)


class TestSeminorms:
    def test_nested_families(self, rng):
        s = seminorm_compare(L1, np.array([0.3, -0.2]), 200, rng)
        D = direction_grid(2)
        n1, n2, n3 = (s.norms(D, k) for k in "123")
        assert np.all(n1 <= n2) and np.all(n2 <= n3)

    def test_l1_plane(self):
        s = seminorm_compare(L1, np.array([0.3, 0.2]), 1000, np.random.default_rng(0))
        D = direction_grid(2)
        exact = np.abs(D).sum(axis=1)  # the l1 norm of each direction
        for fam in "123":
            assert np.max(np.abs(s.norms(D, fam) - exact) / exact) < 0.05
        assert s.discrepancy(D) < 0.05

    def test_line(self):
        s = seminorm_compare(R1, np.array([0.1]), 100, np.random.default_rng(1))
        for fam in "123":
            assert s.norm([1.0], fam) == pytest.approx(1.0, abs=1e-6)

    def test_laakso(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        s = seminorm_compare(space6, p, 500, rng)
        for fam in "123":
            assert s.norm([1.0], fam) == pytest.approx(1.0, abs=1e-9)
        assert s.norm4([1.0]) == pytest.approx(1.0)
        assert not s.degenerate

    def test_ladder_nonincreasing(self):
        lad = seminorm_ladder(L1, np.array([0.3, 0.2]), (250, 500, 1000), seed=0)
        assert all(b <= a + 1e-12 for a, b in zip(lad, lad[1:]))


class TestPullback:
    def test_identity(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        r = canonical_pullback_seminorm(space6, lambda P: P, space6.host, p)
        assert r.rank == 1 and r.value == pytest.approx(1.0)

    def test_constant(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        r = canonical_pullback_seminorm(space6, lambda P: np.zeros((len(P), 1)), R1, p)
        assert r.rank == 0 and r.value == 0.0

    def test_phi(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        r = canonical_pullback_seminorm(space6, lambda P: space6.phi_many(P).reshape(-1, 1), R1, p)
        assert r.value == pytest.approx(1.0)


class TestDirectional:
    def test_phi(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        r = directional_sup_check(space6, space6.phi_many, p)
        assert r.sup == pytest.approx(1.0) and r.lip == pytest.approx(1.0)
        assert abs(r.gap) < 1e-9

    def test_constant(self, space6, rng):
        p = space6.sample_points(1, rng)[0]
        r = directional_sup_check(space6, constant_function(0.0), p)
        assert r.sup == 0.0 and r.lip == 0.0

    def test_distance_from_origin_side(self, space6):
        q = space6.vertex_point(0).top  # phi = 0 end
        p = space6.at_phi(0.4).top
        r = directional_sup_check(space6, distance_function(space6, q), GraphPoints([p.edge], [float(p.s)]))
        assert r.sup == pytest.approx(1.0) and r.lip == pytest.approx(1.0)


class TestCone:
    def test_fubini_horizontal(self):
        rep = alberti.fubini_rep(2, 0, 64)
        x = lambda P: np.asarray(P)[:, 0]  # noqa: E731
        ident = lambda P: np.asarray(P)  # noqa: E731
        ok = cone_speed_check(rep, x, ident, Cone(np.array([1.0, 0.0]), np.pi / 4), 1.0)
        assert ok.violation_fraction == 0.0
        bad = cone_speed_check(rep, x, ident, Cone(np.array([0.0, 1.0]), np.pi / 4), 1.0)
        assert bad.violation_fraction == pytest.approx(1.0)

    def test_laakso_monotone(self, space6):
        rep = alberti.monotone_rep(space6, 100, seed=3)
        r = cone_speed_check(rep, space6.phi_many, lambda P: space6.phi_many(P).reshape(-1, 1),
                             Cone(np.array([1.0]), 0.1), 1.0)
        assert r.violation_fraction < 0.01
