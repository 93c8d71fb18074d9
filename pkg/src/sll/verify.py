"""Checks attached to a critical point: bubble ansatz, masses, residual.

The ansatz glues a planar Liouville bubble U_d(r) = log(8 d^2 / (d^2 + r^2)^2)
at each xi_j to the far field 8 pi G(., xi_j):

    v = sum_j [ 8 pi G(x, xi_j) - 2 chi_j(x) log(1 + d_j^2 / r_j^2) ]

with chi_j a smooth cutoff equal to 1 on B_{r_c/2}(xi_j) and 0 outside
B_{r_c}(xi_j).  Inside the core this is U_d + 8 pi h(., xi_j) - log(8 d^2),
so v is smooth and agrees with the far field to O(d^2) at r_c.  Its
Laplacian is evaluated in closed form from the radial calculus, and all
integrals use the composite rule of :mod:`sll.quadrature`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import energy as en
from .errors import BallsOverlap, DomainX, NormalizationFailed, OutOfDomain, ScaleTooLarge
from .problem import _level_set_points, chi_alpha_and_rho, f_g_value, source_potential
from .quadrature import Rule, composite_rule, polar_patch, smooth_step

EIGHT_PI = 8.0 * np.pi
RC_CAP = 0.5


def _cot_gap(surface, d):
    """cot(d) - 1/d on the sphere (0 on the flat torus): Lap f = f'' + f'/d + gap f'."""
    if surface.kind != "sphere":
        return np.zeros_like(d)
    small = d < 1e-3
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(small, 1.0, d)
        exact = 1.0 / np.tan(safe) - 1.0 / safe
    return np.where(small, -d / 3.0 - d ** 3 / 45.0 - 2.0 * d ** 5 / 945.0, exact)


def _step_derivatives(t):
    """smooth_step and its first two derivatives in closed form.

    With phi = 1/(1 - t) - 1/t the step is S = 1/(1 + e^phi), so
    S' = -S(1 - S) phi' and S'' = -S'(1 - 2S) phi' - S(1 - S) phi''.
    """
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tt = np.where(inside, t, 0.5)
    a = np.exp(-1.0 / (1.0 - tt))
    b = np.exp(-1.0 / tt)
    S = a / (a + b)
    Q = b / (a + b)
    p1 = 1.0 / tt ** 2 + 1.0 / (1.0 - tt) ** 2
    p2 = -2.0 / tt ** 3 + 2.0 / (1.0 - tt) ** 3
    d1 = -S * Q * p1
    d2 = d1 * (S - Q) * p1 - S * Q * p2
    S = np.where(inside, S, smooth_step(t))
    return S, np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)


def _cutoff(d, rc):
    """chi(d) = 1 on [0, rc/2], 0 beyond rc, with d/dd and d^2/dd^2."""
    half = 0.5 * rc
    S, S1, S2 = _step_derivatives((d - half) / half)
    return S, S1 / half, S2 / half ** 2


@dataclass(eq=False)
class BubbleField:
    surface: object
    centers: np.ndarray
    scales: np.ndarray
    rc: float
    constant: float = 0.0

    def __call__(self, x):
        s = self.surface
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], self.constant)
        for q, dl in zip(self.centers, self.scales):
            d = s.distance(x, q)
            chi = _cutoff(d, self.rc)[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                outer = np.where(chi < 1.0, (1.0 - chi) * -4.0 * np.log(d), 0.0)
            out = out + EIGHT_PI * s._green_regular(x, q, d) - 2.0 * chi * np.log(d * d + dl * dl) + outer
        return out

    def laplacian(self, x):
        s = self.surface
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], EIGHT_PI * len(self.centers) / s.area)
        for q, dl in zip(self.centers, self.scales):
            d = s.distance(x, q)
            chi, c1, c2 = _cutoff(d, self.rc)
            d2 = dl * dl
            with np.errstate(divide="ignore", invalid="ignore"):
                L = np.log1p(d2 / (d * d))
                L1 = np.where(d > 0, -2.0 * d2 / (d * (d * d + d2)), 0.0)
                # Lap L for d > 0, written without the 1/d^2 cancellation
                lapL = 4.0 * d2 / (d * d + d2) ** 2 + _cot_gap(s, d) * np.where(d > 0, L1, 0.0)
                lapchi = s.radial_laplacian(d, c1, c2)
                term = chi * lapL + np.where(c1 != 0, 2.0 * c1 * L1 + L * lapchi, 0.0)
            out = out - 2.0 * term
        return out

    def shifted(self, c):
        return BubbleField(self.surface, self.centers, self.scales, self.rc, self.constant + c)


@dataclass(eq=False)
class BubbleAnsatz:
    centers: np.ndarray
    scales: np.ndarray
    field: object
    rc: float

    def shifted(self, c):
        return BubbleAnsatz(self.centers, self.scales, self.field.shifted(c), self.rc)


@dataclass
class ResidualReport:
    rho: float
    l2_residual: float
    dual_residual: float
    masses: list
    total_mass: float
    gauss_bonnet_gap: float
    j_rho: float
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("rho", "l2_residual", "dual_residual", "masses",
                                           "total_mass", "gauss_bonnet_gap", "j_rho")}
        d.update(self.extras)
        return d


# ---------------------------------------------------------------------------
# ansatz
# ---------------------------------------------------------------------------


def gluing_radius(data, xi):
    """0.2 x distance from the centers to each other, the sources and {K = 0}."""
    s = data.surface
    xi = np.asarray(xi, dtype=float)
    dist = np.inf
    if len(xi) > 1:
        dist = min(dist, float(en.pair_distances(s, xi).min()))
    if data.sing.m:
        dist = min(dist, float(en.source_distances(data, xi).min()))
    level = _level_set_points(s, data.K, *((128, 256) if s.kind == "sphere" else (256, 256)))
    if len(level):
        dist = min(dist, float(s.distance(xi[:, None, :], level[None]).min()))
    return min(0.2 * dist, RC_CAP)


def balanced_scales(data, xi, delta):
    """Scales with d_j^2 proportional to exp(w_j) (equal masses to leading order).

    w_j = log K~(xi_j) + 8 pi h(xi_j, xi_j) + 8 pi sum_{k != j} G(xi_j, xi_k).
    """
    w = en.log_weights(data, np.asarray(xi, dtype=float))
    return delta * np.exp(0.5 * (w - w.max()))


def assemble_bubble(data, xi, delta, balance=False):
    """Bubble ansatz at the configuration ``xi`` with scales ``delta``."""
    s = data.surface
    xi = en._points(xi)
    xi = s.point(np.asarray(xi, dtype=float).reshape(-1, s.dim))
    if not en.domain_flags(data, xi).in_M_plus:
        raise OutOfDomain("bubble centers must form a configuration in M+")
    if balance:
        scales = balanced_scales(data, xi, float(delta))
    else:
        scales = np.broadcast_to(np.asarray(delta, dtype=float), (len(xi),)).copy()
    if np.any(scales <= 0) or np.any(scales >= 0.1 * s.injectivity_radius):
        raise ScaleTooLarge("scales must lie in (0, 0.1 x injectivity radius)")
    rc = gluing_radius(data, xi)
    if np.any(scales >= 0.5 * rc):
        raise ScaleTooLarge(f"scale exceeds half the gluing radius {rc:.3g}")
    return BubbleAnsatz(xi, scales, BubbleField(s, xi, scales, rc), rc)


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------


def quadrature_rule(data, centers, surface=None):
    """Composite rule with patches at the given centers and at every source."""
    s = surface or data.surface
    pts = [np.asarray(centers, dtype=float).reshape(-1, s.dim)]
    if data.sing.m:
        pts.append(data.p)
    pts = np.vstack(pts)
    if len(pts) == 0:
        return Rule(s.nodes, s.weights)
    radius = 0.8
    if len(pts) > 1:
        i, j = np.triu_indices(len(pts), 1)
        radius = min(radius, 0.45 * float(s.distance(pts[i], pts[j]).min()))
    return composite_rule(s, pts, radius)


def log_weight(data, x):
    """f_g - 4 pi sum alpha_i G(x, p_i); K~ = K exp(log_weight)."""
    return f_g_value(data, x) - 4.0 * np.pi * source_potential(data, x)


def weighted_density(data, field, x, weight=None):
    """K~ e^v at x; ``weight`` overrides K~ (a callable)."""
    v = field(x)
    if weight is not None:
        return weight(x) * np.exp(v)
    return data.K(x) * np.exp(v + log_weight(data, x))


def concentration_measure(data, ansatz, rho, r, weight=None):
    """mu(B_r(xi_j)) = rho int_{B_r} K~ e^v / int K~ e^v; returns (masses, total)."""
    s = data.surface
    xi = ansatz.centers
    if len(xi) > 1 and en.pair_distances(s, xi).min() <= 2 * r:
        raise BallsOverlap(f"balls of radius {r:g} about the centers intersect")
    if data.sing.m and en.source_distances(data, xi).min() <= r:
        raise BallsOverlap(f"a ball of radius {r:g} contains a singular source")
    rule = quadrature_rule(data, xi)
    total = rule.integrate(weighted_density(data, ansatz.field, rule.nodes, weight))
    if not total > 0:
        raise DomainX("int K~ e^v must be positive")
    masses = []
    for q in xi:
        disk = polar_patch(s, q, r, cutoff=False)
        vals = weighted_density(data, ansatz.field, disk.nodes, weight)
        if np.any(data.K(disk.nodes) <= 0) and weight is None:
            raise OutOfDomain("ball leaves Sigma+")
        masses.append(float(rho * disk.integrate(vals) / total))
    return masses, float(rho * total / total)


def _dual_norm(surface, values):
    """||(-Lap)^(-1/2) R|| of the grid-resolved part of R."""
    c = surface.analyze(values)
    lam = surface.eigenvalues()
    nz = lam > 0
    return float(np.sqrt(np.sum(np.abs(c[nz]) ** 2 / lam[nz]) * surface._coeff_norm))


def pde_residual(data, ansatz, rho, weight=None, rule=None):
    """Residual of -Lap v = rho (K~ e^v / int K~ e^v - 1/|Sigma|) and J_rho(v)."""
    s = data.surface
    rule = rule or quadrature_rule(data, ansatz.centers)
    f = ansatz.field
    dens = weighted_density(data, f, rule.nodes, weight)
    total = rule.integrate(dens)
    if not total > 0:
        raise DomainX("int K~ e^v must be positive")
    v = f(rule.nodes)
    neg_lap = -f.laplacian(rule.nodes)
    R = neg_lap - rho * (dens / total - 1.0 / s.area)
    l2 = float(np.sqrt(rule.integrate(R * R)))
    nodes = s.nodes
    grid_dens = weighted_density(data, f, nodes, weight)
    grid_R = -f.laplacian(nodes) - rho * (grid_dens / total - 1.0 / s.area)
    dual = _dual_norm(s, grid_R - s.integrate(grid_R) / s.area)
    # int |grad v|^2 = int (v - mean v)(-Lap v); the mean makes J exactly shift invariant
    vbar = rule.integrate(v) / rule.integrate(np.ones_like(v))
    dirichlet = rule.integrate((v - vbar) * neg_lap)
    j = 0.5 * dirichlet + rho / s.area * rule.integrate(v) - rho * np.log(total)
    return ResidualReport(rho=float(rho), l2_residual=l2, dual_residual=dual, masses=[],
                          total_mass=float(rho), gauss_bonnet_gap=float("nan"), j_rho=float(j),
                          extras={"int_weighted": float(total), "dirichlet": float(dirichlet)})


def j_rho(data, ansatz, rho, weight=None):
    return pde_residual(data, ansatz, rho, weight).j_rho


def gauss_bonnet_check(data, ansatz, surface=None, rule="composite"):
    """|2 int K e^u - 4 pi chi(Sigma, alpha)| for u recovered from the ansatz.

    v is shifted so that int K~ e^v = rho_geo / 2 (computed with the accurate
    composite rule); the gap is then measured with ``rule`` on ``surface``
    ("composite" or the plain "grid"), so it isolates that rule's error.
    """
    s = surface or data.surface
    chi, rho_geo = chi_alpha_and_rho(data)
    if chi > 0 and float(np.max(data.K(s.nodes))) <= 0:
        raise NormalizationFailed("chi(Sigma, alpha) > 0 needs K > 0 somewhere")
    if rho_geo <= 0:
        raise NormalizationFailed("normalization needs rho_geo > 0")
    accurate = quadrature_rule(data, ansatz.centers, s)
    total = accurate.integrate(weighted_density(data, ansatz.field, accurate.nodes))
    if not total > 0:
        raise NormalizationFailed("int K~ e^v is not positive")
    shift = np.log(0.5 * rho_geo / total)
    q = accurate if rule == "composite" else Rule(s.nodes, s.weights)
    x = q.nodes
    u = ansatz.field(x) + shift - 4.0 * np.pi * source_potential(data, x) + f_g_value(data, x)
    value = 2.0 * q.integrate(data.K(x) * np.exp(u))
    return float(abs(value - 4.0 * np.pi * chi))


# ---------------------------------------------------------------------------
# manufactured solution
# ---------------------------------------------------------------------------


def band_limited_field(surface, rng, max_eigenvalue=20.0, amplitude=1.0):
    """Random zero-mean GridField with -Lap eigenvalues <= max_eigenvalue."""
    shape = surface.analyze(np.zeros(surface.grid_shape)).shape
    lam = surface.eigenvalues()
    c = np.where((lam > 0) & (lam <= max_eigenvalue), rng.standard_normal(shape), 0.0)
    if np.iscomplexobj(surface.analyze(np.zeros(surface.grid_shape))):
        c = c + 1j * np.where((lam > 0) & (lam <= max_eigenvalue), rng.standard_normal(shape), 0.0)
    values = np.real(surface.synthesize(c))
    scale = amplitude / np.max(np.abs(values))
    values = values * scale
    from .surface import GridField

    return GridField(surface, values)


@dataclass(eq=False)
class ManufacturedField:
    """A band-limited GridField; samples at the grid nodes are read directly."""

    grid: object

    def _on_grid(self, x):
        nodes = self.grid.surface.nodes
        return x.shape == nodes.shape and np.array_equal(x, nodes)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._on_grid(x):
            return self.grid.values.reshape(-1)
        return self.grid(x)

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        if self._on_grid(x):
            return self.grid.laplacian_field().values.reshape(-1)
        return self.grid.laplacian(x)

    def shifted(self, c):
        from .surface import GridField

        return ManufacturedField(GridField(self.grid.surface, self.grid.values + c))


def manufactured_problem(surface, rho, rng, max_eigenvalue=20.0, amplitude=0.5):
    """(ansatz, weight) with K~ := c (-Lap v0 + rho/|Sigma|) e^{-v0}, an exact
    solution of the mean-field equation by construction."""
    v0 = ManufacturedField(band_limited_field(surface, rng, max_eigenvalue, amplitude))
    floor = float(np.min(-v0.laplacian(surface.nodes))) + rho / surface.area
    if floor <= 0:
        raise NormalizationFailed("-Lap v0 + rho/|Sigma| must be positive; lower the amplitude")
    c = 1.0 / surface.area

    def weight(x):
        return c * (-v0.laplacian(x) + rho / surface.area) * np.exp(-v0(x))

    ansatz = BubbleAnsatz(np.zeros((0, surface.dim)), np.zeros(0), v0, float("nan"))
    return ansatz, weight


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def verify_point(data, xi, deltas=(0.05, 0.02, 0.01), r=None, balance=False):
    """Residual reports along a scale sweep at a configuration (rho = 8 pi N)."""
    xi = en._points(xi)
    rho = EIGHT_PI * len(xi)
    out = []
    for dl in deltas:
        ans = assemble_bubble(data, xi, dl, balance=balance)
        radius = r if r is not None else ans.rc
        rep = pde_residual(data, ans, rho)
        rep.masses, rep.total_mass = concentration_measure(data, ans, rho, radius)
        try:
            rep.gauss_bonnet_gap = gauss_bonnet_check(data, ans)
        except NormalizationFailed as exc:
            rep.extras["gauss_bonnet_error"] = str(exc)
        rep.extras.update({"delta": float(dl), "ball_radius": float(radius),
                           "gluing_radius": float(ans.rc), "scales": ans.scales.tolist()})
        out.append(rep)
    return out
