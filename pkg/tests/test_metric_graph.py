from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdl.metric_graph import (
    AdmissibilityProfile,
    Edge,
    GraphError,
    GraphPoint,
    GraphPoints,
    MetricGraph,
    ball_measure,
    path_distance,
    star,
    subdivide,
    subdivided_point,
)


def triangle(mass=1):
    return MetricGraph(3, [(0, 1, 1, mass), (1, 2, 1, mass), (2, 0, 1, mass)])


def path3():
    return MetricGraph(3, [(0, 1, 1, 1), (1, 2, 1, 1)])


def brute_ball(g: MetricGraph, p: GraphPoint, r: float, n: int = 4000) -> float:
    """Mass of B(p, r) by dense sampling of every edge."""
    total = 0.0
    for k, e in enumerate(g.edges):
        L = float(e.length)
        s = (np.arange(n) + 0.5) / n * L
        d = g.distances_from(p, GraphPoints(np.full(n, k), s))
        total += float(e.mass) * np.mean(d <= r)
    return total


class TestPathDistance:
    def test_triangle_midpoints(self):
        g = triangle()
        assert path_distance(g, GraphPoint(0, 0.5), GraphPoint(1, 0.5)) == pytest.approx(1.0)

    def test_identity(self):
        g = triangle()
        assert path_distance(g, GraphPoint(2, 0.3), GraphPoint(2, 0.3)) == 0.0

    def test_path_additive(self):
        assert path_distance(path3(), GraphPoint(0, 0.25), GraphPoint(1, 0.75)) == pytest.approx(1.5)

    def test_same_edge_shortcut_through_loop(self):
        # on a unit triangle the within-edge path 0.1 -> 0.9 is 0.8, the way round is 0.2 + 2... not shorter
        g = triangle()
        assert path_distance(g, GraphPoint(0, 0.1), GraphPoint(0, 0.9)) == pytest.approx(0.8)
        # a short parallel edge makes the detour shorter
        h = MetricGraph(2, [(0, 1, 1, 1), (0, 1, Fraction(1, 10), 1)])
        assert path_distance(h, GraphPoint(0, 0.1), GraphPoint(0, 0.9)) == pytest.approx(0.3)

    def test_disconnected(self):
        g = MetricGraph(4, [(0, 1, 1, 1), (2, 3, 1, 1)])
        with pytest.raises(GraphError, match="unreachable"):
            path_distance(g, GraphPoint(0, 0.5), GraphPoint(1, 0.5))

    def test_bad_point(self):
        with pytest.raises(GraphError, match="bad point"):
            path_distance(triangle(), GraphPoint(0, 0.5), GraphPoint(7, 0.5))
        with pytest.raises(GraphError, match="bad point"):
            path_distance(triangle(), GraphPoint(0, 1.5), GraphPoint(1, 0.5))


class TestSubdivide:
    def test_single_edge(self):
        g = subdivide(MetricGraph(2, [(0, 1, 1, 1)]), 2)
        assert g.n_edges == 2
        assert [e.length for e in g.edges] == [Fraction(1, 2)] * 2
        assert g.edges[0].mass == g.edges[1].mass

    def test_bad_factor(self):
        with pytest.raises(GraphError):
            subdivide(triangle(), 1)

    @pytest.mark.parametrize("m", [2, 3, 5])
    def test_isometry_and_mass(self, m):
        g = triangle()
        h = subdivide(g, m)
        assert h.total_mass == g.total_mass
        p, q = GraphPoint(0, Fraction(1, 2)), GraphPoint(1, Fraction(1, 3))
        d0 = g.distance(p, q)
        d1 = h.distance(subdivided_point(g, m, p), subdivided_point(g, m, q))
        assert d1 == pytest.approx(d0, abs=1e-12)

    def test_star_preserved(self):
        g = MetricGraph(4, [(0, 1, 1, 1), (0, 2, 1, 1), (0, 3, 1, 1)])
        h = subdivide(g, 3)
        assert len(star(h, 0)) == len(star(g, 0)) == 3


class TestStar:
    def test_degree_three_and_leaf(self):
        g = MetricGraph(4, [(0, 1, 1, 1), (0, 2, 1, 1), (0, 3, 1, 1)])
        assert star(g, 0) == {0, 1, 2}
        assert star(g, 3) == {2}

    def test_unknown_vertex(self):
        with pytest.raises(GraphError):
            star(triangle(), 9)


class TestBallMeasure:
    def test_midpoint(self):
        g = MetricGraph(2, [(0, 1, 1, 1)])
        assert ball_measure(g, GraphPoint(0, 0.5), 0.25) == pytest.approx(0.5)

    def test_zero_radius(self):
        assert ball_measure(triangle(), GraphPoint(1, 0.5), 0.0) == 0.0

    def test_negative_radius(self):
        with pytest.raises(GraphError):
            ball_measure(triangle(), GraphPoint(1, 0.5), -0.1)

    def test_triangle_vertex_against_brute_force(self):
        g = triangle()
        p = g.vertex_point(0)
        assert ball_measure(g, p, 0.5) == pytest.approx(1.0)
        assert ball_measure(g, p, 0.5) == pytest.approx(brute_ball(g, p, 0.5), abs=1e-3)

    @pytest.mark.parametrize("r", [0.1, 0.35, 0.7, 1.2])
    def test_random_graph_against_brute_force(self, r):
        g = MetricGraph(4, [(0, 1, 1, 1), (1, 2, 0.5, 2), (2, 0, 0.7, 1), (2, 3, 0.3, 0.5), (0, 1, 0.4, 1)])
        p = GraphPoint(1, 0.2)
        assert ball_measure(g, p, r) == pytest.approx(brute_ball(g, p, r), abs=2e-3)


class TestValidation:
    def test_profile_bounds(self):
        with pytest.raises(GraphError):
            AdmissibilityProfile(1)
        with pytest.raises(GraphError):
            AdmissibilityProfile(2, theta=0)
        with pytest.raises(GraphError):
            AdmissibilityProfile(2, C=0.5)

    def test_nonpositive_length_or_mass(self):
        with pytest.raises(GraphError):
            MetricGraph(2, [(0, 1, 0, 1)])
        with pytest.raises(GraphError):
            MetricGraph(2, [(0, 1, 1, 0)])

    def test_endpoint_canonical(self):
        g = triangle()
        # vertex 1 is the head of edge 0 and the tail of edge 1: smallest incident edge wins
        assert g.point(1, 0) == g.point(0, 1) == g.vertex_point(1) == GraphPoint(0, Fraction(1))

    def test_round_trip(self):
        g = triangle(Fraction(1, 3))
        h = MetricGraph.from_dict(g.to_dict())
        assert h.edges == g.edges and h.level == g.level
        assert isinstance(h.edges[0], Edge)


# -- properties ------------------------------------------------------------

_graphs = st.builds(
    lambda ls: MetricGraph(4, [(0, 1, ls[0], 1), (1, 2, ls[1], 1), (2, 3, ls[2], 1), (3, 0, ls[3], 1),
                               (0, 2, ls[4], 1)]),
    st.lists(st.floats(0.05, 2.0), min_size=5, max_size=5),
)


def _pt(g, draw):
    k = draw(st.integers(0, g.n_edges - 1))
    return GraphPoint(k, draw(st.floats(0, 1)) * float(g.edges[k].length))


@given(_graphs, st.data())
def test_metric_axioms(g, data):
    p, q, r = (_pt(g, data.draw) for _ in range(3))
    dpq, dqp = g.distance(p, q), g.distance(q, p)
    assert dpq >= 0
    assert dpq == pytest.approx(dqp, abs=1e-12)
    assert g.distance(p, r) <= dpq + g.distance(q, r) + 1e-12


@given(_graphs, st.data(), st.floats(0.0, 3.0))
def test_ball_measure_monotone(g, data, r):
    p = _pt(g, data.draw)
    assert g.ball_measure(p, r) <= g.ball_measure(p, r + 0.1) + 1e-12
    assert g.ball_measure(p, r) <= float(g.total_mass) + 1e-12


@given(_graphs, st.data(), st.sampled_from([2, 3]))
def test_subdivision_isometry(g, data, m):
    p, q = _pt(g, data.draw), _pt(g, data.draw)
    h = subdivide(g, m)
    d = h.distance(subdivided_point(g, m, p), subdivided_point(g, m, q))
    assert d == pytest.approx(g.distance(p, q), abs=1e-9)
