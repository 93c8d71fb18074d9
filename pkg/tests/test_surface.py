import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sll.errors import CoincidentPoints, StepTooLarge
from sll.surface import SPHERE_C0, FlatTorus, UnitSphere, make_surface, torus_green_rowsum

SPHERE = UnitSphere(32, 64)
TORUS = FlatTorus(1.0, 1.3, 32, 32)

lon = st.floats(0.0, 2 * math.pi)
colat = st.floats(0.01, math.pi - 0.01)
unit = st.floats(0.0, 1.0, exclude_max=True)


def sphere_pt(a, b):
    return SPHERE.from_chart(np.array([a, b]))


def test_c0_closed_form():
    assert SPHERE_C0 == pytest.approx((2 * math.log(2) - 1) / (4 * math.pi), rel=1e-15)


def test_make_surface():
    assert make_surface("sphere").kind == "sphere"
    t = make_surface("torus", periods=(2.0, 1.0), quadrature=(16, 16))
    assert t.area == pytest.approx(2.0)
    with pytest.raises(ValueError):
        make_surface("cube")


@settings(max_examples=40, deadline=None)
@given(lon, colat, lon, colat)
def test_sphere_distance_and_green_symmetric(a1, b1, a2, b2):
    x, y = sphere_pt(a1, b1), sphere_pt(a2, b2)
    d = SPHERE.distance(x, y)
    assert d == pytest.approx(SPHERE.distance(y, x), abs=1e-14)
    assert 0.0 <= d <= math.pi + 1e-12
    if d > 1e-6:
        assert SPHERE.green(x, y) == pytest.approx(SPHERE.green(y, x), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(unit, unit, unit, unit)
def test_torus_distance_minimal_image(a, b, c, e):
    x = np.array([a * TORUS.a, b * TORUS.b])
    y = np.array([c * TORUS.a, e * TORUS.b])
    shifts = [np.array([i * TORUS.a, j * TORUS.b]) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    brute = min(np.linalg.norm(y + s - x) for s in shifts)
    assert TORUS.distance(x, y) == pytest.approx(brute, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(lon, colat, st.floats(0.0, 2 * math.pi), st.floats(0.0, 2.5))
def test_sphere_exp_log_roundtrip(a, b, ang, r):
    x = sphere_pt(a, b)
    e = SPHERE.tangent_frame(x)
    v = r * (math.cos(ang) * e[0] + math.sin(ang) * e[1])
    y = SPHERE.tangent_step(x, v)
    assert SPHERE.distance(x, y) == pytest.approx(r, abs=1e-12)
    assert np.allclose(SPHERE.log(x, y), v, atol=1e-9)


def test_step_past_injectivity_radius(sphere):
    x = np.array([0.0, 0.0, 1.0])
    with pytest.raises(StepTooLarge):
        sphere.tangent_step(x, np.array([3.5, 0.0, 0.0]))


def test_green_coincident_points(sphere, torus):
    x = np.array([0.0, 0.0, 1.0])
    with pytest.raises(CoincidentPoints):
        sphere.green(x, x)
    with pytest.raises(CoincidentPoints):
        torus.green(np.array([0.2, 0.3]), np.array([0.2, 0.3]))


@pytest.mark.parametrize("surf", [SPHERE, TORUS], ids=["sphere", "torus"])
def test_regular_part_continuous_and_constant(surf, rng):
    x = surf.random_points(rng, 5)
    diag = surf.green_regular_diag(x)
    assert np.ptp(diag) < 1e-12
    for p in x:
        e = surf.tangent_frame(p)
        y = surf._exp(p, 1e-6 * e[0])
        assert surf.green_regular(y, p) == pytest.approx(diag[0], abs=1e-8)


def test_torus_green_rowsum_oracle(rng):
    for a, b in ((1.0, 1.0), (2.0, 0.7)):
        s = FlatTorus(a, b, 16, 16)
        X, Y = s.random_points(rng, 10), s.random_points(rng, 10)
        assert np.max(np.abs(s.green(X, Y) - torus_green_rowsum(s, X, Y))) < 1e-10


def test_torus_green_periodic(torus):
    x, p = np.array([0.1, 0.2]), np.array([0.6, 1.1])
    assert torus.green(x + [torus.a, 0.0], p) == pytest.approx(torus.green(x, p), abs=1e-13)
    assert torus.green(x, p + [0.0, torus.b]) == pytest.approx(torus.green(x, p), abs=1e-13)


@pytest.mark.parametrize("surf", [SPHERE, TORUS], ids=["sphere", "torus"])
def test_grad_green_matches_fd(surf, rng):
    x, p = surf.random_points(rng, 2)
    g = surf.grad_green(x, p)
    e = surf.tangent_frame(x)
    h = 1e-6
    for k in range(2):
        fd = (surf.green(surf._exp(x, h * e[k]), p) - surf.green(surf._exp(x, -h * e[k]), p)) / (2 * h)
        assert fd == pytest.approx(g @ e[k], abs=1e-7)


def test_poisson_solve_inverts_laplacian(sphere, rng):
    c = np.zeros((2, sphere.lmax + 1, sphere.lmax + 1))
    c[0, 1:6, :5] = rng.standard_normal((5, 5)) * np.tril(np.ones((5, 5)))
    f = sphere.synthesize(c)
    rhs = sphere.synthesize(sphere.eigenvalues() * c)
    u = sphere.solve_poisson(rhs)
    assert np.max(np.abs(u.values - f)) < 1e-11


def test_area_by_grid(sphere, torus):
    assert sphere.integrate(np.ones(sphere.grid_shape)) == pytest.approx(4 * math.pi, rel=1e-14)
    assert torus.integrate(np.ones(torus.grid_shape)) == pytest.approx(1.3, rel=1e-14)
