"""Prescribed curvature functions K with exact derivatives.

K is held as a sympy expression in ambient coordinates (x, y, z on the
sphere, x, y on the torus).  Tangential gradients and the Laplace-Beltrami
operator are derived symbolically once and compiled with ``lambdify``; on
the sphere the ambient formula

    Lap_S F = Lap F - n.Hess(F).n - 2 dF/dn

avoids the coordinate singularities of (longitude, colatitude).
"""

import numpy as np
import sympy as sp

from .errors import InvalidData

X, Y, Z = sp.symbols("x y z", real=True)
LON, COLAT = sp.symbols("lon colat", real=True)


def _lambdify(args, expr):
    f = sp.lambdify(args, expr, modules="numpy")

    def call(*vals):
        out = f(*vals)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(vals[0])).copy()

    return call


class CurvatureField:
    """A C^2 function on the surface with value, gradient and Laplacians."""

    def __init__(self, surface, expr, label=None):
        self.surface = surface
        self.expr = sp.sympify(expr)
        self.label = label or str(self.expr)
        if surface.kind == "sphere":
            self._vars = (X, Y, Z)
        else:
            self._vars = (X, Y)
        free = self.expr.free_symbols - set(self._vars)
        if free:
            raise InvalidData(f"curvature expression has unknown symbols {sorted(map(str, free))}")
        grad = [sp.diff(self.expr, v) for v in self._vars]
        hess = [[sp.diff(g, v) for v in self._vars] for g in grad]
        self._f = _lambdify(self._vars, self.expr)
        self._grad = [_lambdify(self._vars, g) for g in grad]
        self._hess = [[_lambdify(self._vars, h) for h in row] for row in hess]

    def __repr__(self):
        return f"CurvatureField({self.label})"

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        return [x[..., i] for i in range(x.shape[-1])]

    def __call__(self, x):
        return self._f(*self._split(x))

    value = __call__

    def _ambient_grad(self, comps):
        return np.stack([g(*comps) for g in self._grad], axis=-1)

    def grad(self, x):
        """Tangential gradient of K."""
        x = np.asarray(x, dtype=float)
        return self.surface.project(x, self._ambient_grad(self._split(x)))

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        comps = self._split(x)
        n = len(comps)
        H = np.stack([np.stack([self._hess[i][j](*comps) for j in range(n)], -1)
                      for i in range(n)], -2)
        trace = np.trace(H, axis1=-2, axis2=-1)
        if self.surface.kind != "sphere":
            return trace
        g = self._ambient_grad(comps)
        nHn = np.einsum("...i,...ij,...j->...", x, H, x)
        return trace - nHn - 2.0 * np.sum(g * x, axis=-1)

    def grad_log(self, x):
        return self.grad(x) / self(x)[..., None]

    def laplacian_log(self, x):
        """Lap log K = Lap K / K - |grad K|^2 / K^2 (meaningful where K > 0)."""
        k = self(x)
        g = self.grad(x)
        return self.laplacian(x) / k - np.sum(g * g, axis=-1) / (k * k)

    def perturbed(self, bump, amplitude):
        """K * exp(amplitude * bump): an additive perturbation of log K."""
        bump = sp.sympify(bump)
        return CurvatureField(self.surface, self.expr * sp.exp(amplitude * bump),
                              label=f"{self.label} * exp({amplitude:g} * bump)")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _vec(surface, c):
    return [sp.Float(float(v)) for v in np.asarray(c, dtype=float)]


def square_distance_expr(surface, center):
    """Smooth surrogate of d(., q)^2: the squared chord on the sphere, the
    periodic sin^2 form on the torus.  Both agree with d^2 to O(d^4)."""
    q = _vec(surface, center)
    if surface.kind == "sphere":
        return (X - q[0]) ** 2 + (Y - q[1]) ** 2 + (Z - q[2]) ** 2
    a, b = surface.a, surface.b
    return ((a / sp.pi) ** 2 * sp.sin(sp.pi * (X - q[0]) / a) ** 2
            + (b / sp.pi) ** 2 * sp.sin(sp.pi * (Y - q[1]) / b) ** 2)


def constant(surface, value=1.0):
    return CurvatureField(surface, sp.Float(float(value)), label=f"constant({value:g})")


def cos_polar(surface, shift=0.0):
    """K = cos(colatitude) - shift on the sphere (i.e. z - shift)."""
    if surface.kind != "sphere":
        raise InvalidData("cos_polar is defined on the sphere only")
    return CurvatureField(surface, Z - float(shift), label="cos_polar")


def gaussians(surface, base, terms):
    """K = base + sum amp * exp(sign * c * d(., q)^2) over ``terms``.

    ``terms`` holds dicts with keys ``center`` (surface point), ``amplitude``,
    ``width`` (c > 0) and optional ``sign`` (+1 or -1, default -1).
    """
    expr = sp.Float(float(base))
    for t in terms:
        sign = float(t.get("sign", -1.0))
        expr += float(t["amplitude"]) * sp.exp(
            sign * float(t["width"]) * square_distance_expr(surface, t["center"]))
    return CurvatureField(surface, expr, label="gaussians")


def wells(surface, scale, centers, depth, width):
    """Product of Gaussian wells: K = scale * prod(1 + depth(1 - exp(-c d_j^2))).

    Each factor has a nondegenerate local minimum of log K at its center with
    Lap log K = 4 depth c there; with large c the wells are sufficiently
    convex for the class-membership certificate.
    """
    expr = sp.Float(float(scale))
    for q in centers:
        expr *= 1 + float(depth) * (1 - sp.exp(-float(width) * square_distance_expr(surface, q)))
    return CurvatureField(surface, expr, label="wells")


def from_expression(surface, text):
    """Parse a user expression.

    Sphere: symbols x, y, z (ambient) or lon, colat (chart, singular
    derivatives at the poles).  Torus: x, y.
    """
    try:
        expr = sp.sympify(text, locals={"x": X, "y": Y, "z": Z, "lon": LON, "colat": COLAT})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise InvalidData(f"cannot parse curvature expression {text!r}: {exc}") from None
    if surface.kind == "sphere":
        expr = expr.subs({COLAT: sp.acos(Z), LON: sp.atan2(Y, X)})
    return CurvatureField(surface, expr, label=str(text))


def random_bump(surface, rng, degree=3):
    """A random smooth bump with sup norm about 1 (low-degree trigonometric
    polynomial on the torus, ambient polynomial on the sphere)."""
    terms = []
    if surface.kind == "sphere":
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                for k in range(degree + 1 - i - j):
                    terms.append(float(rng.uniform(-1, 1)) * X ** i * Y ** j * Z ** k)
    else:
        a, b = surface.a, surface.b
        for i in range(degree + 1):
            for j in range(degree + 1):
                ph = float(rng.uniform(0, 2 * np.pi))
                terms.append(float(rng.uniform(-1, 1))
                             * sp.cos(2 * sp.pi * (i * X / a + j * Y / b) + ph))
    expr = sp.Add(*terms)
    f = _lambdify((X, Y, Z) if surface.kind == "sphere" else (X, Y), expr)
    vals = f(*[surface.nodes[:, i] for i in range(surface.dim)])
    return expr / float(np.max(np.abs(vals)))
