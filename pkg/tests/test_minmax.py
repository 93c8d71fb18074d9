import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sll.curvature import cos_polar, from_expression
from sll.errors import NoFeasibleSplit, SetupInfeasible, TopologyMismatch
from sll.minmax import (ChartCircle, StereoChart, TorusChart, TorusLoop, _circular_gap, approx_minmax,
                        build_retraction, sample_B)
from sll.problem import ProblemData, SingularData
from sll.search import SearchConfig
from sll.surface import FlatTorus, UnitSphere

S = UnitSphere(32, 64)
T = FlatTorus(1.0, 1.0, 64, 64)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.0, 2.8), st.floats(-1, 1), st.floats(-1, 1))
def test_stereo_chart_roundtrip(lon, colat, s1, s2):
    chart = StereoChart(np.array([0.3, -0.2, 0.9]), shift=(s1, s2))
    x = S.from_chart(np.array([lon, colat]))
    if 1 + x @ chart.n < 1e-3:
        return
    assert np.allclose(chart.inverse(chart.forward(x)), x, atol=1e-10)


def test_stereo_chart_isometric_at_center():
    chart = StereoChart(np.array([0.0, 0.0, 1.0]))
    n = np.array([0.0, 0.0, 1.0])
    assert np.allclose(chart.forward(n), 0.0)
    e = S.tangent_frame(n)
    h = 1e-6
    for k in range(2):
        du = chart.forward(S._exp(n, h * e[k])) / h
        assert np.linalg.norm(du) == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.05, 2.5))
def test_chart_circle_retraction(lon, colat):
    c = ChartCircle(StereoChart(np.array([0.0, 0.0, 1.0])), (0.1, -0.05), 0.4)
    x = S.from_chart(np.array([lon, colat]))
    y = c.retract(x)
    assert S.distance(c.retract(y), y) < 1e-12
    t = c.param(y)
    assert S.distance(c.point(t), y) < 1e-12


def test_torus_loop_and_chart():
    loop = TorusLoop(T, 1, 0.25)
    x = np.array([0.7, 0.9])
    y = loop.retract(x)
    assert np.allclose(y, [0.25, 0.9])
    assert np.allclose(loop.retract(y), y)
    ch = TorusChart(T, np.array([0.95, 0.95]))
    assert np.allclose(ch.forward(np.array([0.05, 0.05])), [0.1, 0.1])
    assert np.allclose(ch.inverse(ch.forward(x)), x)


def test_circular_gap():
    assert _circular_gap(0.05, 0.95) == pytest.approx(0.1)
    assert _circular_gap(0.3, 0.3) == 0.0


@pytest.fixture(scope="module")
def two_sources():
    pts = S.from_chart(np.array([[0.0, 0.5], [np.pi, 0.5]]))
    return ProblemData(S, cos_polar(S), SingularData.build(S, pts, [0.9, 0.9]), 2)


def test_contractible_circles_split(two_sources):
    setup = build_retraction(two_sources, "ContractibleCircles")
    assert setup.info["split"] == [1, 1]
    base = setup.base
    assert np.all(setup.on_curves(base[None]))
    assert np.allclose(setup.retract(base), base, atol=1e-12)
    for c, p in zip(setup.curves, two_sources.p):
        # each circle surrounds its source
        pts = c.point(np.linspace(0, 1, 16, endpoint=False))
        assert np.all(cos_polar(S)(pts) > 0)
        assert np.ptp(S.distance(pts, p)) < 0.05


def test_wrong_topology(two_sources):
    with pytest.raises(TopologyMismatch):
        build_retraction(two_sources, "RayGenus0")
    with pytest.raises(TopologyMismatch):
        build_retraction(two_sources, "TorusCurve")
    with pytest.raises(ValueError):
        build_retraction(two_sources, "Spiral")


def test_no_feasible_split():
    d = ProblemData(S, cos_polar(S), SingularData.build(S, [[0.0, 0.0, 1.0]], [0.5]), 2)
    with pytest.raises(NoFeasibleSplit, match="= 1"):
        build_retraction(d, "ContractibleCircles")


def test_small_M_infeasible(two_sources):
    with pytest.raises(SetupInfeasible):
        build_retraction(two_sources, "ContractibleCircles", M=0.5)


@pytest.fixture(scope="module")
def band():
    return ProblemData(S, from_expression(S, "1/4 - z**2 + 0.05*x"), SingularData.empty(S), 2)


def test_ray_genus0(band):
    setup = build_retraction(band, "RayGenus0")
    X, B0 = sample_B(setup, 24)
    assert np.all(setup.on_curves(X))
    assert np.all(setup.in_B_set(X))
    assert len(B0) and np.all(setup.in_B0(B0))
    res = approx_minmax(band, setup, SearchConfig(curve_samples=24), steps=50)
    assert res.boundary_gap > 1.0
    assert res.psi_star >= res.min_identity - 1e-12
    # identity family: no ascent steps gives min over B
    res0 = approx_minmax(band, setup, SearchConfig(curve_samples=24), steps=0)
    assert res0.psi_star == res0.min_identity


def test_torus_curve():
    d = ProblemData(T, from_expression(T, "cos(2*pi*y) + 0.3"), SingularData.build(T, [[0.5, 0.05]], [0.5]), 1)
    setup = build_retraction(d, "TorusCurve")
    assert np.all(np.cos(2 * np.pi * setup.curves[0].point(np.linspace(0, 1, 50))[:, 1]) + 0.3 > 0)
    res = approx_minmax(d, setup, SearchConfig(curve_samples=16), steps=20)
    out = res.to_dict(T)
    assert out["n_boundary"] == 0 and math.isinf(out["boundary_gap"])
