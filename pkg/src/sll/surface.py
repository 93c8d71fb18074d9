"""Closed surfaces with exact Green's functions.

Two models are provided: the round unit sphere and the flat rectangular
torus ``[0, a) x [0, b)``.  Points are plain numpy arrays (unit 3-vectors on
the sphere, coordinate pairs on the torus) and every method broadcasts over
leading axes, so a batch of configurations of shape ``(B, N, dim)`` can be
pushed through in one call.

Tangent vectors are stored in ambient coordinates (3-vectors tangent to the
sphere, plain 2-vectors on the torus).  ``tangent_frame`` gives an
orthonormal basis per point when coordinates are needed.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import exp1

from .errors import CoincidentPoints, NonZeroMean, StepTooLarge

TWO_PI = 2.0 * np.pi
COINCIDENCE_RADIUS = 1e-13
EULER_GAMMA = 0.5772156649015329

# Zero-mean constant of the sphere Green's function.
SPHERE_C0 = (2.0 * np.log(2.0) - 1.0) / (4.0 * np.pi)


class Surface(ABC):
    """A closed orientable surface with constant Gauss curvature."""

    kind: str
    dim: int
    euler_char: int
    gauss_curvature: float

    @property
    @abstractmethod
    def area(self): ...

    @property
    @abstractmethod
    def injectivity_radius(self): ...

    # -- points and charts -------------------------------------------------
    @abstractmethod
    def point(self, coords): ...

    @abstractmethod
    def from_chart(self, chart): ...

    @abstractmethod
    def to_chart(self, x): ...

    @abstractmethod
    def random_points(self, rng, n): ...

    # -- metric ------------------------------------------------------------
    @abstractmethod
    def distance(self, x, y): ...

    @abstractmethod
    def tangent_frame(self, x): ...

    @abstractmethod
    def project(self, x, v): ...

    @abstractmethod
    def _exp(self, x, v): ...

    @abstractmethod
    def log(self, x, y): ...

    @abstractmethod
    def transport(self, y, x, w):
        """Parallel-transport ``w`` in T_y back to T_x along the geodesic."""

    @abstractmethod
    def polar_points(self, q, r, theta):
        """Points ``exp_q(r (cos t e1 + sin t e2))`` and the area density."""

    def tangent_step(self, x, v):
        """Exponential map; raises :class:`StepTooLarge` past the injectivity radius."""
        v = np.asarray(v, dtype=float)
        if np.any(np.linalg.norm(v, axis=-1) >= self.injectivity_radius):
            raise StepTooLarge(
                f"step length exceeds injectivity radius {self.injectivity_radius:g}"
            )
        return self._exp(np.asarray(x, dtype=float), v)

    exp = tangent_step

    # -- Green's function --------------------------------------------------
    @abstractmethod
    def _green(self, x, p): ...

    @abstractmethod
    def _green_regular(self, x, p, d): ...

    @abstractmethod
    def _grad_green(self, x, p): ...

    @abstractmethod
    def green_regular_diag(self, x):
        """h(x, x); constant on both built-in (homogeneous) surfaces."""

    def _check_apart(self, x, p):
        d = self.distance(x, p)
        if np.any(d < COINCIDENCE_RADIUS):
            raise CoincidentPoints("Green's function evaluated at coincident points")
        return d

    def green(self, x, p):
        """G(x, p) with -Lap G = delta_p - 1/area and zero mean."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        self._check_apart(x, p)
        return self._green(x, p)

    def green_regular(self, x, p):
        """h(x, p) = G(x, p) + log(d(x, p)) / (2 pi), continuous across x = p."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        d = self.distance(x, p)
        return self._green_regular(x, p, d)

    def grad_green(self, x, p):
        """Riemannian gradient of G(., p) at x."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        self._check_apart(x, p)
        return self._grad_green(x, p)

    def grad_log_distance(self, x, p):
        """Gradient of log d(., p) at x (x != p)."""
        v = self.log(x, p)
        d2 = np.sum(v * v, axis=-1, keepdims=True)
        return -v / d2

    # -- radial calculus ---------------------------------------------------
    @abstractmethod
    def radial_laplacian(self, d, f1, f2):
        """Lap f(d(., q)) from the profile derivatives f'(d), f''(d)."""

    # -- quadrature and spectral machinery ----------------------------------
    @property
    @abstractmethod
    def nodes(self): ...

    @property
    @abstractmethod
    def weights(self): ...

    @property
    @abstractmethod
    def grid_shape(self): ...

    def integrate(self, values):
        """Grid quadrature of samples on the nodes (flat or grid-shaped)."""
        values = np.asarray(values, dtype=float)
        if values.shape[-2:] == self.grid_shape:
            values = values.reshape(values.shape[:-2] + (-1,))
        return values @ self.weights

    @abstractmethod
    def analyze(self, grid_values): ...

    @abstractmethod
    def synthesize(self, coeffs): ...

    @abstractmethod
    def eigenvalues(self):
        """-Lap eigenvalue attached to every coefficient slot."""

    @abstractmethod
    def evaluate_coeffs(self, coeffs, x): ...

    def field(self, values):
        return GridField(self, np.asarray(values, dtype=float).reshape(self.grid_shape))

    def sample(self, func):
        """GridField of ``func`` evaluated on the quadrature nodes."""
        return self.field(np.asarray(func(self.nodes), dtype=float).reshape(self.grid_shape))

    def solve_poisson(self, rhs):
        """Zero-mean solution u of -Lap u = rhs, computed in the eigenbasis."""
        values = _grid_values(self, rhs)
        mean = self.integrate(values)
        if abs(mean) > 1e-8 * self.area:
            raise NonZeroMean(f"right-hand side has integral {mean:.3e}")
        c = self.analyze(values)
        lam = self.eigenvalues()
        out = np.zeros_like(c)
        nz = lam > 0
        out[nz] = c[nz] / lam[nz]
        return GridField(self, self.synthesize(out), coeffs=out)

    def laplacian_at(self, f, x):
        """Lap f at x for analytic fields (``f.laplacian``) or grid fields."""
        x = np.asarray(x, dtype=float)
        if isinstance(f, (int, float)):
            return np.zeros(x.shape[:-1])
        return f.laplacian(x)

    @abstractmethod
    def sample_mesh(self, n1, n2):
        """Triangulated sampling grid: (vertices, triangles)."""


def _grid_values(surface, f):
    if isinstance(f, GridField):
        return f.values
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full(surface.grid_shape, float(f))
    return f.reshape(surface.grid_shape)


@dataclass(eq=False)
class GridField:
    """A scalar field sampled on the quadrature grid of ``surface``.

    Differentiation and off-grid evaluation go through the spectral
    expansion, so the field is treated as band-limited at the surface's
    spectral degree.
    """

    surface: Surface
    values: np.ndarray
    coeffs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = self.surface.analyze(self.values)

    def __call__(self, x):
        return self.surface.evaluate_coeffs(self.coeffs, np.asarray(x, dtype=float))

    def laplacian_field(self):
        c = -self.surface.eigenvalues() * self.coeffs
        return GridField(self.surface, self.surface.synthesize(c), coeffs=c)

    def laplacian(self, x):
        c = -self.surface.eigenvalues() * self.coeffs
        return self.surface.evaluate_coeffs(c, np.asarray(x, dtype=float))

    def integral(self):
        return self.surface.integrate(self.values)

    def dirichlet(self):
        """Integral of |grad f|^2 from the spectral coefficients."""
        lam = self.surface.eigenvalues()
        return float(np.sum(lam * np.abs(self.coeffs) ** 2) * self.surface._coeff_norm)


@dataclass(eq=False)
class RadialField:
    """f(d(x, q)) for a profile with derivatives; Laplacian from the radial formula."""

    surface: Surface
    center: np.ndarray
    f0: object
    f1: object
    f2: object

    def __call__(self, x):
        return self.f0(self.surface.distance(x, self.center))

    def laplacian(self, x):
        d = self.surface.distance(x, self.center)
        return self.surface.radial_laplacian(d, self.f1(d), self.f2(d))


def _safe_norm(v, axis=-1, keepdims=True):
    return np.sqrt(np.sum(v * v, axis=axis, keepdims=keepdims))


# ---------------------------------------------------------------------------
# sphere
# ---------------------------------------------------------------------------


def legendre_table(lmax, mu):
    """Orthonormal associated Legendre values p[l, m, k] at mu[k].

    Y_l0 = p[l, 0], Y_lm = sqrt(2) p[l, m] cos(m lon) (or sin), m > 0, are
    orthonormal on the unit sphere.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.clip(1.0 - mu * mu, 0.0, None))
    p = np.zeros((lmax + 1, lmax + 1) + mu.shape)
    p[0, 0] = np.sqrt(1.0 / (4.0 * np.pi))
    for m in range(1, lmax + 1):
        p[m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * p[m - 1, m - 1]
    for m in range(0, lmax):
        p[m + 1, m] = np.sqrt(2.0 * m + 3.0) * mu * p[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (mu * p[l - 1, m] - b * p[l - 2, m])
    return p


class UnitSphere(Surface):
    """The round unit sphere in R^3.

    Chart coordinates are (longitude, colatitude) in radians.  The quadrature
    is Gauss-Legendre in cos(colatitude) times a uniform longitude grid.
    """

    kind = "sphere"
    dim = 3
    euler_char = 2
    gauss_curvature = 1.0

    def __init__(self, nlat=128, nlon=256, spectral_degree=None):
        if spectral_degree is None:
            spectral_degree = min(nlat - 1, nlon // 2 - 1)
        if spectral_degree > nlat - 1 or 2 * spectral_degree >= nlon:
            raise ValueError("spectral degree too high for the quadrature grid")
        self.nlat = int(nlat)
        self.nlon = int(nlon)
        self.lmax = int(spectral_degree)
        self._coeff_norm = 1.0

    def __repr__(self):
        return f"UnitSphere(nlat={self.nlat}, nlon={self.nlon}, spectral_degree={self.lmax})"

    def refined(self, factor=2):
        return UnitSphere(self.nlat * factor, self.nlon * factor,
                          min(self.lmax * factor, self.nlat * factor - 1))

    @property
    def area(self):
        return 4.0 * np.pi

    @property
    def injectivity_radius(self):
        return np.pi

    def point(self, coords):
        x = np.asarray(coords, dtype=float)
        return x / _safe_norm(x)

    def from_chart(self, chart):
        c = np.asarray(chart, dtype=float)
        lon, colat = c[..., 0], c[..., 1]
        st = np.sin(colat)
        return np.stack([st * np.cos(lon), st * np.sin(lon), np.cos(colat)], axis=-1)

    def to_chart(self, x):
        x = np.asarray(x, dtype=float)
        lon = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
        colat = np.arctan2(np.hypot(x[..., 0], x[..., 1]), x[..., 2])
        return np.stack([lon, colat], axis=-1)

    def random_points(self, rng, n):
        return self.point(rng.standard_normal((n, 3)))

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = np.linalg.norm(np.cross(x, y), axis=-1)
        return np.arctan2(c, np.sum(x * y, axis=-1))

    def chord2(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return np.sum(diff * diff, axis=-1)

    def tangent_frame(self, x):
        x = np.asarray(x, dtype=float)
        # two-chart atlas: reference axis z away from the poles, x near them
        ref = np.where(np.abs(x[..., 2:3]) < 0.9, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
        e1 = np.cross(ref, x)
        e1 = e1 / _safe_norm(e1)
        e2 = np.cross(x, e1)
        return np.stack([e1, e2], axis=-2)

    def project(self, x, v):
        return v - np.sum(v * x, axis=-1, keepdims=True) * x

    def _exp(self, x, v):
        t = _safe_norm(v)
        with np.errstate(invalid="ignore", divide="ignore"):
            sinc = np.where(t > 1e-300, np.sin(t) / np.where(t > 0, t, 1.0), 1.0)
        y = np.cos(t) * x + sinc * v
        return y / _safe_norm(y)

    def log(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = y - np.sum(x * y, axis=-1, keepdims=True) * x
        nw = _safe_norm(w)
        d = self.distance(x, y)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(nw > 0, w * d / np.where(nw > 0, nw, 1.0), 0.0)
        return out

    def transport(self, y, x, w):
        v = self.log(y, x)
        t = _safe_norm(v)
        u = np.where(t > 0, v / np.where(t > 0, t, 1.0), 0.0)
        wu = np.sum(w * u, axis=-1, keepdims=True)
        end_tangent = -np.sin(t) * y + np.cos(t) * u
        return w + wu * (end_tangent - u)

    def polar_points(self, q, r, theta):
        q = np.asarray(q, dtype=float)
        e = self.tangent_frame(q)
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        dirs = np.cos(theta)[..., None] * e[0] + np.sin(theta)[..., None] * e[1]
        pts = np.cos(r)[..., None] * q + np.sin(r)[..., None] * dirs
        return pts, np.sin(r)

    def _green(self, x, p):
        return -np.log(np.sqrt(self.chord2(x, p))) / TWO_PI + SPHERE_C0

    def _green_regular(self, x, p, d):
        # h = -(1/2pi) log(2 sin(d/2) / d) + c0, series near d = 0
        half = 0.5 * d
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(d > 1e-4, np.sin(half) / np.where(d > 0, half, 1.0),
                             1.0 - half * half / 6.0 + half ** 4 / 120.0)
        return -np.log(ratio) / TWO_PI + SPHERE_C0

    def green_regular_diag(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], SPHERE_C0)

    def _grad_green(self, x, p):
        tangential = p - np.sum(p * x, axis=-1, keepdims=True) * x
        return tangential / (TWO_PI * self.chord2(x, p)[..., None])

    def radial_laplacian(self, d, f1, f2):
        d = np.asarray(d, dtype=float)
        small = d < 1e-8
        with np.errstate(invalid="ignore", divide="ignore"):
            cot_term = np.where(small, f2, f1 / np.tan(np.where(small, 1.0, d)))
        return f2 + cot_term

    # quadrature -----------------------------------------------------------
    @cached_property
    def _gauss(self):
        mu, w = np.polynomial.legendre.leggauss(self.nlat)
        order = np.argsort(-mu)  # north to south
        return mu[order], w[order]

    @property
    def grid_shape(self):
        return (self.nlat, self.nlon)

    @cached_property
    def lon(self):
        return TWO_PI * np.arange(self.nlon) / self.nlon

    @cached_property
    def colat(self):
        return np.arccos(self._gauss[0])

    @cached_property
    def nodes(self):
        lon, colat = np.meshgrid(self.lon, self.colat)
        return self.from_chart(np.stack([lon, colat], axis=-1)).reshape(-1, 3)

    @cached_property
    def weights(self):
        w = np.repeat(self._gauss[1], self.nlon) * (TWO_PI / self.nlon)
        return w

    # spectral -------------------------------------------------------------
    @cached_property
    def _ptable(self):
        return legendre_table(self.lmax, self._gauss[0])

    @cached_property
    def _mscale(self):
        s = np.full(self.lmax + 1, np.sqrt(2.0))
        s[0] = 1.0
        return s

    def analyze(self, grid_values):
        """Real spherical-harmonic coefficients, shape (2, L+1, L+1).

        Slot ``[0, l, m]`` holds the cos(m lon) coefficient, ``[1, l, m]``
        the sin(m lon) one.
        """
        f = np.asarray(grid_values, dtype=float).reshape(self.grid_shape)
        L = self.lmax
        F = np.fft.rfft(f, axis=1)[:, : L + 1] * (TWO_PI / self.nlon)
        wmu = self._gauss[1]
        P = self._ptable  # (l, m, lat)
        re = np.einsum("lmk,k,km->lm", P, wmu, F.real)
        im = np.einsum("lmk,k,km->lm", P, wmu, F.imag)
        c = np.zeros((2, L + 1, L + 1))
        c[0] = re * self._mscale
        c[1] = -im * self._mscale
        c[:, np.triu_indices(L + 1, 1)[0], np.triu_indices(L + 1, 1)[1]] = 0.0
        return c

    def _fourier_from_coeffs(self, c, P):
        A = np.einsum("lm...,lm->m...", P, c[0]) * self._mscale.reshape((-1,) + (1,) * (P.ndim - 2))
        B = np.einsum("lm...,lm->m...", P, c[1]) * self._mscale.reshape((-1,) + (1,) * (P.ndim - 2))
        return A, B

    def synthesize(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        A, B = self._fourier_from_coeffs(c, self._ptable)  # (m, lat)
        n = self.nlon
        X = np.zeros((self.nlat, n // 2 + 1), dtype=complex)
        X[:, 0] = n * A[0]
        X[:, 1 : self.lmax + 1] = 0.5 * n * (A[1:] - 1j * B[1:]).T
        return np.fft.irfft(X, n=n, axis=1)

    def eigenvalues(self):
        l = np.arange(self.lmax + 1, dtype=float)
        lam = l * (l + 1.0)
        return np.broadcast_to(lam[None, :, None], (2, self.lmax + 1, self.lmax + 1))

    def evaluate_coeffs(self, coeffs, x, chunk=2048):
        c = np.asarray(coeffs, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        pts = x.reshape(-1, 3)
        nz = np.nonzero(np.any(np.abs(c) > 0, axis=(0, 2)))[0]
        lmax = int(nz.max()) if nz.size else 0
        c = c[:, : lmax + 1, : lmax + 1]
        out = np.empty(len(pts))
        scale = self._mscale[: lmax + 1]
        for start in range(0, len(pts), chunk):
            q = pts[start : start + chunk]
            P = legendre_table(lmax, np.clip(q[:, 2], -1.0, 1.0))
            lon = np.arctan2(q[:, 1], q[:, 0])
            m = np.arange(lmax + 1)[:, None]
            cos_m = np.cos(m * lon) * scale[:, None]
            sin_m = np.sin(m * lon) * scale[:, None]
            A = np.einsum("lmk,lm->mk", P, c[0])
            B = np.einsum("lmk,lm->mk", P, c[1])
            out[start : start + chunk] = np.sum(A * cos_m + B * sin_m, axis=0)
        return out.reshape(shape)

    def harmonic(self, l, m, kind="cos"):
        """Coefficient array of a single real harmonic."""
        c = np.zeros((2, self.lmax + 1, self.lmax + 1))
        c[0 if kind == "cos" or m == 0 else 1, l, m] = 1.0
        return c

    def sample_mesh(self, n1, n2):
        """Uniform colatitude x longitude grid plus both poles, triangulated."""
        colat = np.pi * (np.arange(n1) + 0.5) / n1
        lon = TWO_PI * np.arange(n2) / n2
        LON, COL = np.meshgrid(lon, colat)
        verts = self.from_chart(np.stack([LON, COL], axis=-1)).reshape(-1, 3)
        north = n1 * n2
        south = north + 1
        verts = np.vstack([verts, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])
        idx = np.arange(n1 * n2).reshape(n1, n2)
        right = np.roll(idx, -1, axis=1)
        a, b = idx[:-1], right[:-1]
        c, d = idx[1:], right[1:]
        tris = [np.stack([a, b, d], -1).reshape(-1, 3), np.stack([a, d, c], -1).reshape(-1, 3)]
        tris.append(np.stack([np.full(n2, north), idx[0], right[0]], -1))
        tris.append(np.stack([np.full(n2, south), right[-1], idx[-1]], -1))
        return verts, np.vstack(tris)


# ---------------------------------------------------------------------------
# flat torus
# ---------------------------------------------------------------------------


def _ein(x):
    """E1(x) + log(x), smooth at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    term = xs.copy()
    acc = xs.copy()
    for k in range(2, 30):
        term = -term * xs / k
        acc = acc + term / k
    out[small] = -EULER_GAMMA + acc
    xl = x[~small]
    out[~small] = exp1(xl) + np.log(xl)
    return out


class FlatTorus(Surface):
    """Flat torus R^2 / (aZ x bZ); chart coordinates are the point itself."""

    kind = "torus"
    dim = 2
    euler_char = 0
    gauss_curvature = 0.0

    def __init__(self, a=1.0, b=1.0, n1=256, n2=256, ewald_tol=1e-16):
        self.a = float(a)
        self.b = float(b)
        self.n1 = int(n1)
        self.n2 = int(n2)
        self._setup_ewald(ewald_tol)
        self._coeff_norm = self.area / (self.n1 * self.n2) ** 2

    def __repr__(self):
        return f"FlatTorus(a={self.a}, b={self.b}, n1={self.n1}, n2={self.n2})"

    def refined(self, factor=2):
        return FlatTorus(self.a, self.b, self.n1 * factor, self.n2 * factor)

    @property
    def periods(self):
        return np.array([self.a, self.b])

    @property
    def area(self):
        return self.a * self.b

    @property
    def injectivity_radius(self):
        return 0.5 * min(self.a, self.b)

    def point(self, coords):
        return np.mod(np.asarray(coords, dtype=float), self.periods)

    def from_chart(self, chart):
        return self.point(chart)

    def to_chart(self, x):
        return self.point(x)

    def random_points(self, rng, n):
        return rng.random((n, 2)) * self.periods

    def offset(self, x, y):
        """Minimal-image representative of y - x."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - self.periods * np.round(d / self.periods)

    def distance(self, x, y):
        return np.linalg.norm(self.offset(x, y), axis=-1)

    def tangent_frame(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def project(self, x, v):
        return np.asarray(v, dtype=float)

    def _exp(self, x, v):
        return self.point(x + v)

    def log(self, x, y):
        return self.offset(x, y)

    def transport(self, y, x, w):
        return np.asarray(w, dtype=float)

    def polar_points(self, q, r, theta):
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return self.point(np.asarray(q) + r[..., None] * dirs), r

    # Ewald splitting --------------------------------------------------------
    def _setup_ewald(self, tol):
        A = self.area
        self.kappa2 = np.pi / A
        cut = -np.log(tol)
        rmax = np.sqrt(cut / self.kappa2)
        na = int(np.ceil(rmax / self.a)) + 1
        nb = int(np.ceil(rmax / self.b)) + 1
        I, J = np.meshgrid(np.arange(-na, na + 1), np.arange(-nb, nb + 1), indexing="ij")
        self._images = np.stack([I.ravel() * self.a, J.ravel() * self.b], axis=-1)
        kmax = 2.0 * np.sqrt(self.kappa2 * cut)
        ma = int(np.ceil(kmax * self.a / TWO_PI)) + 1
        mb = int(np.ceil(kmax * self.b / TWO_PI)) + 1
        I, J = np.meshgrid(np.arange(-ma, ma + 1), np.arange(-mb, mb + 1), indexing="ij")
        k = np.stack([TWO_PI * I.ravel() / self.a, TWO_PI * J.ravel() / self.b], axis=-1)
        k2 = np.sum(k * k, axis=-1)
        keep = k2 > 0
        self._kvec = k[keep]
        self._kfac = np.exp(-k2[keep] / (4.0 * self.kappa2)) / (k2[keep] * A)
        self._background = -1.0 / (4.0 * self.kappa2 * A)
        nonzero = np.any(self._images != 0, axis=1)
        r2 = np.sum(self._images[nonzero] ** 2, axis=-1)
        self._hdiag = (
            (-EULER_GAMMA - np.log(self.kappa2)) / (4.0 * np.pi)
            + np.sum(exp1(self.kappa2 * r2)) / (4.0 * np.pi)
            + np.sum(self._kfac)
            + self._background
        )

    def _ewald_parts(self, r, skip_origin):
        """Real-space and reciprocal sums at minimal-image offsets r (..., 2)."""
        rr = r[..., None, :] + self._images
        rho2 = np.sum(rr * rr, axis=-1)
        x = self.kappa2 * rho2
        if skip_origin:
            origin = np.all(self._images == 0, axis=1)
            real_far = np.sum(exp1(x[..., ~origin]), axis=-1) / (4.0 * np.pi)
            real_near = x[..., origin][..., 0]
        else:
            real_far = np.sum(exp1(x), axis=-1) / (4.0 * np.pi)
            real_near = None
        phase = r @ self._kvec.T
        recip = np.cos(phase) @ self._kfac
        return real_far, real_near, recip

    def _green(self, x, p):
        r = self.offset(p, x)
        real, _, recip = self._ewald_parts(r, skip_origin=False)
        return real + recip + self._background

    def _green_regular(self, x, p, d):
        r = self.offset(p, x)
        far, near, recip = self._ewald_parts(r, skip_origin=True)
        # origin image: E1(k r^2)/4pi + log(r)/2pi = (Ein(k r^2) - log k)/4pi
        origin = (_ein(near) - np.log(self.kappa2)) / (4.0 * np.pi)
        return origin + far + recip + self._background

    def green_regular_diag(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self._hdiag)

    def _grad_green(self, x, p):
        r = self.offset(p, x)
        rr = r[..., None, :] + self._images
        rho2 = np.sum(rr * rr, axis=-1)
        coef = -np.exp(-self.kappa2 * rho2) / (TWO_PI * rho2)
        real = np.sum(coef[..., None] * rr, axis=-2)
        phase = r @ self._kvec.T
        recip = -(np.sin(phase) * self._kfac) @ self._kvec
        return real + recip

    def radial_laplacian(self, d, f1, f2):
        d = np.asarray(d, dtype=float)
        small = d < 1e-12
        with np.errstate(invalid="ignore", divide="ignore"):
            over = np.where(small, f2, f1 / np.where(small, 1.0, d))
        return f2 + over

    # quadrature -----------------------------------------------------------
    @property
    def grid_shape(self):
        return (self.n1, self.n2)

    @cached_property
    def nodes(self):
        X, Y = np.meshgrid(self.a * np.arange(self.n1) / self.n1,
                           self.b * np.arange(self.n2) / self.n2, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    @cached_property
    def weights(self):
        return np.full(self.n1 * self.n2, self.area / (self.n1 * self.n2))

    @cached_property
    def _wavenumbers(self):
        kx = TWO_PI * np.fft.fftfreq(self.n1, d=self.a / self.n1)
        ky = TWO_PI * np.fft.fftfreq(self.n2, d=self.b / self.n2)
        return np.meshgrid(kx, ky, indexing="ij")

    def analyze(self, grid_values):
        return np.fft.fft2(np.asarray(grid_values, dtype=float).reshape(self.grid_shape))

    def synthesize(self, coeffs):
        return np.fft.ifft2(coeffs).real

    def eigenvalues(self):
        kx, ky = self._wavenumbers
        return kx * kx + ky * ky

    def evaluate_coeffs(self, coeffs, x, chunk=4096):
        c = np.asarray(coeffs)
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        pts = x.reshape(-1, 2)
        kx, ky = self._wavenumbers
        mask = np.abs(c) > 1e-14 * max(np.abs(c).max(), 1e-300)
        cs = c[mask] / (self.n1 * self.n2)
        ks = np.stack([kx[mask], ky[mask]], axis=-1)
        out = np.empty(len(pts))
        for start in range(0, len(pts), chunk):
            ph = pts[start : start + chunk] @ ks.T
            out[start : start + chunk] = (np.exp(1j * ph) @ cs).real
        return out.reshape(shape)

    def sample_mesh(self, n1, n2):
        X, Y = np.meshgrid(self.a * (np.arange(n1) + 0.5) / n1,
                           self.b * (np.arange(n2) + 0.5) / n2, indexing="ij")
        verts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        idx = np.arange(n1 * n2).reshape(n1, n2)
        right = np.roll(idx, -1, axis=1)
        down = np.roll(idx, -1, axis=0)
        diag = np.roll(right, -1, axis=0)
        tris = np.vstack([np.stack([idx, right, diag], -1).reshape(-1, 3),
                          np.stack([idx, diag, down], -1).reshape(-1, 3)])
        return verts, tris


def torus_green_rowsum(surface, x, p, rows=50):
    """Independent G on a rectangular torus: lattice rows summed in closed form.

    Each horizontal row of images contributes a log|sin| term; the rows are
    summed directly up to ``rows`` periods.  Used as an oracle for the Ewald
    evaluation.
    """
    a, b = surface.a, surface.b
    r = surface.offset(p, x)
    z = r[..., 0] + 1j * r[..., 1]
    y = r[..., 1]
    val = b / (12.0 * a) + y * y / (2.0 * a * b)
    val = val - np.log(np.abs(2.0 * np.sin(np.pi * z / a))) / TWO_PI
    for n in range(1, rows + 1):
        up = np.exp(2j * np.pi * (z + 1j * n * b) / a)
        dn = np.exp(-2j * np.pi * (z - 1j * n * b) / a)
        val = val - (np.log(np.abs(1.0 - up)) + np.log(np.abs(1.0 - dn))) / TWO_PI
    return val


def make_surface(kind, periods=None, quadrature=None, spectral_degree=None):
    if kind == "sphere":
        nlat, nlon = quadrature or (128, 256)
        return UnitSphere(nlat, nlon, spectral_degree)
    if kind == "torus":
        a, b = periods or (1.0, 1.0)
        n1, n2 = quadrature or (256, 256)
        return FlatTorus(a, b, n1, n2)
    raise ValueError(f"unknown surface type {kind!r}")
