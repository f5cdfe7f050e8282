from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdl import AdmissibilityProfile, LimitSpace, generate_standard
from mdl.inverse_system import enumerate_lifts
from mdl.limit_space import geodesic_fragment
from mdl.metric_graph import GraphError, GraphPoint, GraphPoints


def tower_points(system, K_top, rng, n):
    """Random level-K_top points and their towers down to every level."""
    top = LimitSpace(system, K_top)
    pts = top.sample_points(n, rng)
    return {k: top.project_many(pts, k) for k in range(K_top + 1)}


class TestDistance:
    def test_interval_is_line(self, line_system):
        X = LimitSpace(line_system)
        x, y = X.at_phi(Fraction(1, 8)), X.at_phi(Fraction(11, 16))
        br = X.d_infinity(x, y)
        assert br.estimate == pytest.approx(11 / 16 - 1 / 8)
        assert br.bound == pytest.approx(2 * 2 ** -4 / (2 - 1))

    def test_same_point(self, space4):
        x = space4.vertex_point(3)
        br = space4.d_infinity(x, x)
        assert br.estimate == 0 and br.bound == space4.bound

    def test_depth_mismatch(self, laakso4, space4):
        other = LimitSpace(laakso4, 2)
        with pytest.raises(GraphError, match="depth mismatch"):
            space4.d_infinity(space4.vertex_point(0), other.vertex_point(0))

    def test_bigon_fiber_separates(self, laakso6):
        # points on the two parallel K=1 edges: equal at level 0, apart at level 1
        X1 = LimitSpace(laakso6, 1)
        a, b = GraphPoint(1, Fraction(1, 4)), GraphPoint(2, Fraction(1, 4))
        assert X1.graph.distance(a, b) > 0
        X0 = LimitSpace(laakso6, 0)
        pa, pb = laakso6.project(a, 0), laakso6.project(b, 0)
        assert X0.graph.distance(pa, pb) == 0

    def test_brackets_nest(self, laakso6):
        rng = np.random.default_rng(4)
        towers = tower_points(laakso6, 6, rng, 2 * 60)
        prev = None
        for K in range(1, 7):
            X = LimitSpace(laakso6, K)
            P = towers[K]
            est = np.array([X.graph.distances_from(P[2 * j], P[2 * j + 1:2 * j + 2])[0] for j in range(60)])
            lo, hi = est, est + X.bound
            if prev is not None:
                plo, phi_ = prev
                assert np.all(lo >= plo - 1e-12)
                assert np.all(hi <= phi_ + 1e-12)
            prev = (lo, hi)

    @pytest.mark.parametrize("m", [2, 3])
    def test_phi_lipschitz(self, m):
        s = generate_standard(AdmissibilityProfile(m), 4 if m == 2 else 3)
        X = LimitSpace(s)
        rng = np.random.default_rng(m)
        P = X.sample_points(80, rng)
        ph = X.phi_many(P)
        for j in range(0, 80, 2):
            d = X.graph.distances_from(P[j], P[j + 1:j + 2])[0]
            assert abs(ph[j] - ph[j + 1]) <= d + X.bound + 1e-12


class TestMeasure:
    def test_interval_ball(self, line_system):
        X = LimitSpace(line_system)
        br = X.mu_infinity_ball(X.at_phi(Fraction(1, 2) + Fraction(1, 32)), 0.25)
        assert br.estimate == pytest.approx(0.5)
        assert br.lower <= br.estimate <= br.upper

    def test_large_radius_total(self, space4):
        assert space4.mu_infinity_ball(space4.vertex_point(0), 1.0).estimate == pytest.approx(1.0)

    def test_negative_radius(self, space4):
        with pytest.raises(GraphError):
            space4.mu_infinity_ball(space4.vertex_point(0), -1.0)

    def test_doubling(self, space6):
        rng = np.random.default_rng(9)
        P = space6.sample_points(40, rng)
        ratios = []
        for j in range(len(P)):
            for r in (0.02, 0.05, 0.1, 0.2):
                small = space6.mu_infinity_ball(P[j], r).estimate
                ratios.append(space6.mu_infinity_ball(P[j], 2 * r).estimate / small)
        # finite doubling constant; for a 1-dimensional measure it sits well below 2^3
        assert max(ratios) < 8

    def test_cell_masses_pushforward(self, space6, laakso6):
        # mu_K of the preimage of a level-k cell equals the cell mass exactly
        G = space6.graph
        for k in (1, 3, 5):
            img = space6.project_many(GraphPoints(np.arange(G.n_edges), G.lengths / 2), k).edges
            tot = {}
            for e in range(G.n_edges):
                tot[int(img[e])] = tot.get(int(img[e]), Fraction(0)) + G.edges[e].mass
            for c, mass in tot.items():
                assert mass == space6.cell_mass(k, c)


class TestGeodesics:
    def test_interval_identity(self, line_system):
        X = LimitSpace(line_system)
        frag = X.monotone_geodesic_through(X.at_phi(Fraction(1, 3)))
        ts = np.linspace(0, 1, 11)
        assert np.allclose(X.phi_many(frag.evaluate(ts)), ts)

    def test_passes_through_point_and_branch(self):
        s = generate_standard(AdmissibilityProfile(2), 1)
        X = LimitSpace(s)
        lifts = enumerate_lifts(s, 0, X.base_geodesic(), 1)
        for lift in lifts:
            q = GraphPoint(lift.edges[-1], Fraction(1, 4))
            geo = X.monotone_geodesic(through=q)
            assert geo.edges == lift.edges

    def test_reverse_direction(self, space4, rng):
        p = space4.point(space4.sample_points(1, rng)[0])
        frag = space4.monotone_geodesic_through(p, direction=-1)
        t = -space4.phi(p)
        got = frag.evaluate([t])
        assert space4.graph.distances_from(p.top, got)[0] == pytest.approx(0, abs=1e-12)
        ts = np.linspace(-0.9, -0.1, 5)
        assert np.allclose(space4.phi_many(frag.evaluate(ts)), -ts)

    def test_bad_direction(self, space4):
        with pytest.raises(GraphError):
            space4.monotone_geodesic_through(space4.vertex_point(0), direction=2)

    @given(st.integers(0, 10 ** 6))
    def test_unit_speed(self, seed):
        s = generate_standard(AdmissibilityProfile(2), 5)
        X = LimitSpace(s)
        rng = np.random.default_rng(seed)
        geo = X.monotone_geodesic(rng)
        frag = geodesic_fragment(X, geo)
        ts = np.sort(rng.random(5))
        P = frag.evaluate(ts)
        for j in range(4):
            d = X.graph.distances_from(P[j], P[j + 1:j + 2])[0]
            assert d == pytest.approx(ts[j + 1] - ts[j], abs=1e-12)
