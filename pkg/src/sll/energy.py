"""Reduced energies on N-point configurations.

Configurations are arrays of shape ``(..., N, dim)``; every functional
broadcasts over the leading batch axes.  With ``H(xi) = sum_j h(xi_j, xi_j)
- sum_{i > ell} alpha_i sum_j G(xi_j, p_i)`` the functionals are

    Psi = H + (1/4pi) sum log K(xi_j) - sum_{i <= ell} alpha_i sum_j G(xi_j, p_i)
          + sum_{j != k} G(xi_j, xi_k)
    Phi = same with the interaction sum subtracted
    D_s = sum h(xi_j, xi_j) + (1/4pi) sum f_g(xi_j) - sum_i s_i sum_j G(xi_j, p_i)
          + sum_{j != k} G(xi_j, xi_k)

and the sign functional A.  f_g vanishes on both built-in surfaces.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import BallNotInDomain, OutOfDomain, SOutOfBox
from .problem import f_g_value

FOUR_PI = 4.0 * np.pi
FD_STEP = 1e-4


@dataclass(frozen=True)
class DomainFlags:
    in_M_plus: bool
    in_M: bool
    min_pair_dist: float
    min_source_dist: float


@dataclass(eq=False)
class Configuration:
    points: np.ndarray
    flags: DomainFlags

    @property
    def N(self):
        return len(self.points)


def configuration(data, points):
    pts = data.surface.point(np.asarray(points, dtype=float).reshape(-1, data.surface.dim))
    return Configuration(pts, domain_flags(data, pts))


def _points(xi):
    return xi.points if isinstance(xi, Configuration) else np.asarray(xi, dtype=float)


def pair_distances(surface, xi):
    N = xi.shape[-2]
    j, k = np.triu_indices(N, 1)
    return surface.distance(xi[..., j, :], xi[..., k, :])


def source_distances(data, xi):
    """Distances (..., N, m) from each xi_j to each p_i."""
    if data.sing.m == 0:
        return np.full(xi.shape[:-1] + (0,), np.inf)
    return data.surface.distance(xi[..., :, None, :], data.p)


def domain_flags(data, xi, batch=False):
    """Membership in M+ (xi_j in Sigma+ minus inner sources, distinct) and M."""
    xi = _points(xi)
    pd = pair_distances(data.surface, xi)
    sd = source_distances(data, xi)
    min_pair = pd.min(axis=-1) if pd.shape[-1] else np.full(xi.shape[:-2], np.inf)
    min_src = sd.min(axis=(-1, -2)) if sd.shape[-1] else np.full(xi.shape[:-2], np.inf)
    tiny = 1e-13
    distinct = min_pair > tiny
    off_all = min_src > tiny
    if data.ell:
        off_inner = sd[..., : data.ell].min(axis=(-1, -2)) > tiny
    else:
        off_inner = np.ones(xi.shape[:-2], dtype=bool)
    positive = np.all(data.K(xi) > 0, axis=-1)
    in_plus = positive & off_inner & distinct
    in_M = off_all & distinct
    if batch:
        return in_plus, in_M
    return DomainFlags(bool(in_plus), bool(in_M), float(min_pair), float(min_src))


def _require_plus(data, xi):
    in_plus, _ = domain_flags(data, xi, batch=True)
    if not np.all(in_plus):
        raise OutOfDomain("configuration is not in M+")


def _require_M(data, xi):
    _, in_M = domain_flags(data, xi, batch=True)
    if not np.all(in_M):
        raise OutOfDomain("configuration is not in M")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def interaction(surface, xi):
    """sum_{j != k} G(xi_j, xi_k) (both orders)."""
    N = xi.shape[-2]
    if N < 2:
        return np.zeros(xi.shape[:-2])
    j, k = np.triu_indices(N, 1)
    return 2.0 * np.sum(surface._green(xi[..., j, :], xi[..., k, :]), axis=-1)


def pair_matrix(surface, xi):
    """G(xi_j, xi_k) as an (..., N, N) array with zero diagonal."""
    N = xi.shape[-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        G = surface._green(xi[..., :, None, :], xi[..., None, :, :])
    G[..., np.arange(N), np.arange(N)] = 0.0
    return G


def source_sums(data, xi):
    """g_i = sum_j G(xi_j, p_i), shape (..., m)."""
    if data.sing.m == 0:
        return np.zeros(xi.shape[:-2] + (0,))
    return np.sum(data.surface._green(xi[..., :, None, :], data.p), axis=-2)


def diag_sum(surface, xi):
    return np.sum(surface.green_regular_diag(xi), axis=-1)


def outer_part(data, xi):
    """H(xi) = sum h(xi_j, xi_j) - sum_{i > ell} alpha_i sum_j G(xi_j, p_i)."""
    g = source_sums(data, xi)
    return diag_sum(data.surface, xi) - g[..., data.ell:] @ data.alpha[data.ell:]


def _base(data, xi):
    g = source_sums(data, xi)
    logk = np.sum(np.log(data.K(xi)), axis=-1) / FOUR_PI
    return diag_sum(data.surface, xi) + logk - g @ data.alpha


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


def psi(data, xi, check=True):
    xi = _points(xi)
    if check:
        _require_plus(data, xi)
    return _base(data, xi) + interaction(data.surface, xi)


def phi(data, xi, check=True):
    xi = _points(xi)
    if check:
        _require_plus(data, xi)
    return _base(data, xi) - interaction(data.surface, xi)


def d_s(data, xi, s, box=None, check=True):
    """D_s; ``box`` = (alpha_lo, alpha_hi) enforces the admissible s range."""
    xi = _points(xi)
    s = np.asarray(s, dtype=float)
    if box is not None and np.any((s < box[0]) | (s > box[1])):
        raise SOutOfBox(f"s outside [{box[0]}, {box[1]}]")
    if check:
        _require_M(data, xi)
    fg = np.sum(f_g_value(data, xi), axis=-1) / FOUR_PI
    return (diag_sum(data.surface, xi) + fg - source_sums(data, xi) @ s
            + interaction(data.surface, xi))


def log_weights(data, xi):
    """log K~(xi_j) + 8 pi h(xi_j, xi_j) + 8 pi sum_{k != j} G(xi_j, xi_k), per point."""
    s = data.surface
    N = xi.shape[-2]
    out = np.log(data.K(xi)) + 8.0 * np.pi * s.green_regular_diag(xi)
    if data.sing.m:
        out = out - FOUR_PI * (s._green(xi[..., :, None, :], data.p) @ data.alpha)
    if N > 1:
        out = out + 8.0 * np.pi * pair_matrix(s, xi).sum(axis=-1)
    return out


def a_bracket(data, xi):
    s = data.surface
    chi = s.euler_char + float(np.sum(data.alpha))
    return data.K.laplacian_log(xi) + (8.0 * np.pi * data.N - FOUR_PI * chi) / s.area


def a_fun(data, xi, check=True):
    """A(xi) = 4 pi sum_j K~(xi_j) exp(8 pi h + 8 pi sum G) [Lap log K + (8 pi N - 4 pi chi)/|Sigma|]."""
    xi = _points(xi)
    if check:
        _require_plus(data, xi)
    return FOUR_PI * np.sum(np.exp(log_weights(data, xi)) * a_bracket(data, xi), axis=-1)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def _pair_grad(surface, xi):
    """sum_{k != j} grad_x G(x, xi_k) at x = xi_j, shape (..., N, dim)."""
    N = xi.shape[-2]
    out = np.zeros_like(xi)
    if N < 2:
        return out
    for j in range(N):
        others = np.delete(xi, j, axis=-2)
        out[..., j, :] = np.sum(surface._grad_green(xi[..., j : j + 1, :], others), axis=-2)
    return out


def _source_grad(data, xi, weights):
    if data.sing.m == 0:
        return np.zeros_like(xi)
    g = data.surface._grad_green(xi[..., :, None, :], data.p)  # (..., N, m, dim)
    return np.einsum("...nmd,m->...nd", g, weights)


def grad_psi(data, xi, check=True, interaction_sign=1.0):
    """Riemannian gradient of Psi per point (Phi with ``interaction_sign=-1``).

    h(x, x) is constant on both surfaces, so only log K, the sources and the
    pair interaction contribute.
    """
    xi = _points(xi)
    if check:
        _require_plus(data, xi)
    g = data.K.grad_log(xi) / FOUR_PI
    g = g - _source_grad(data, xi, data.alpha)
    return g + 2.0 * interaction_sign * _pair_grad(data.surface, xi)


def grad_phi(data, xi, check=True):
    return grad_psi(data, xi, check, interaction_sign=-1.0)


def grad_d_s(data, xi, s):
    xi = _points(xi)
    return -_source_grad(data, xi, np.asarray(s, dtype=float)) + 2.0 * _pair_grad(data.surface, xi)


def frames(surface, xi, rotations=None):
    """Orthonormal tangent frames (N, 2, dim), optionally rotated by angles."""
    e = surface.tangent_frame(xi)
    if rotations is None:
        return e
    c, s = np.cos(rotations), np.sin(rotations)
    e1 = c[:, None] * e[:, 0] + s[:, None] * e[:, 1]
    e2 = -s[:, None] * e[:, 0] + c[:, None] * e[:, 1]
    return np.stack([e1, e2], axis=1)


def to_coords(surface, xi, vecs, e=None):
    """Tangent vectors (N, dim) -> frame coordinates (2N,)."""
    e = frames(surface, xi) if e is None else e
    return np.einsum("nkd,nd->nk", e, vecs).ravel()


def from_coords(surface, xi, coords, e=None):
    e = frames(surface, xi) if e is None else e
    return np.einsum("nkd,nk->nd", e, np.asarray(coords).reshape(-1, 2))


def _fd_hessian(s, xi, gradient, e, step):
    N = xi.shape[0]
    batch = []
    for k in range(N):
        for b in range(2):
            for sgn in (1.0, -1.0):
                z = xi.copy()
                z[k] = s._exp(xi[k], sgn * step * e[k, b])
                batch.append(z)
    batch = np.array(batch)
    grads = gradient(batch)  # (4N, N, dim)
    H = np.zeros((2 * N, 2 * N))
    col = 0
    for k in range(N):
        for b in range(2):
            gp, gm = grads[col].copy(), grads[col + 1].copy()
            gp[k] = s.transport(batch[col][k], xi[k], gp[k])
            gm[k] = s.transport(batch[col + 1][k], xi[k], gm[k])
            diff = (gp - gm) / (2.0 * step)
            H[:, 2 * k + b] = np.einsum("nkd,nd->nk", e, diff).ravel()
            col += 2
    return H


def hessian(data, xi, gradient=None, rotations=None, step=FD_STEP):
    """Riemannian Hessian (2N x 2N) in orthonormal frames.

    Central differences of the analytic gradient along geodesics; the moving
    point's gradient is parallel-transported back to its base point.  One
    Richardson step (h and h/2) removes the O(h^2) term.
    """
    s = data.surface
    xi = _points(xi)
    gradient = gradient or (lambda z: grad_psi(data, z, check=False))
    e = frames(s, xi, rotations)
    H = (4.0 * _fd_hessian(s, xi, gradient, e, 0.5 * step) - _fd_hessian(s, xi, gradient, e, step)) / 3.0
    return 0.5 * (H + H.T)


@dataclass
class EnergyReport:
    psi: float
    phi: float
    a_value: float
    grad: np.ndarray
    grad_norm: float
    hessian_spectrum: np.ndarray

    def to_dict(self):
        return {"psi": self.psi, "phi": self.phi, "a_value": self.a_value,
                "grad": self.grad.tolist(), "grad_norm": self.grad_norm,
                "hessian_spectrum": self.hessian_spectrum.tolist()}


def evaluate(data, xi, with_hessian=True):
    xi = _points(xi)
    _require_plus(data, xi)
    g = grad_psi(data, xi, check=False)
    spec = np.linalg.eigvalsh(hessian(data, xi)) if with_hessian else np.zeros(0)
    return EnergyReport(float(psi(data, xi, False)), float(phi(data, xi, False)),
                        float(a_fun(data, xi, False)), g, float(np.linalg.norm(g)), spec)


# ---------------------------------------------------------------------------
# class membership certificate
# ---------------------------------------------------------------------------


@dataclass
class ClassCertificate:
    sign: str
    verdict: str
    positivity_margin: float
    gap_margin: float
    laplacian_margin: float
    M: float
    m: float
    logk_inner: float
    logk_outer: float
    details: dict

    def to_dict(self):
        return dict(self.__dict__)


class _BallMap:
    """Points of Sigma^N at product-tangent offset v from xi_bar."""

    def __init__(self, surface, xibar):
        self.s = surface
        self.xibar = xibar
        self.e = frames(surface, xibar)
        self.N = len(xibar)

    def __call__(self, v):
        v = np.asarray(v, dtype=float).reshape(v.shape[:-1] + (self.N, 2))
        t = np.einsum("...nk,nkd->...nd", v, self.e)
        return self.s._exp(self.xibar, t)


def _optimize_ball(f, bmap, radius, maximize, on_sphere, rng, starts=32, samples=4096):
    """Extremum of f(xi) over the closed product ball (or its boundary sphere)."""
    dim = 2 * bmap.N
    sgn = -1.0 if maximize else 1.0
    w = rng.standard_normal((samples, dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    if not on_sphere:
        w *= rng.random((samples, 1)) ** (1.0 / dim)
        w = np.vstack([w, np.zeros((1, dim))])
    v = radius * w
    vals = sgn * f(bmap(v))
    best = float(vals.min())
    best_v = v[np.argmin(vals)]
    for v0 in v[np.argsort(vals)[:starts]]:
        if on_sphere:
            obj = lambda u: float(sgn * f(bmap((radius * u / np.linalg.norm(u))[None]))[0])
            res = minimize(obj, v0, method="BFGS", options={"gtol": 1e-10, "maxiter": 200})
            u = radius * res.x / np.linalg.norm(res.x)
        else:
            obj = lambda u: float(sgn * f(bmap(u[None]))[0])
            cons = {"type": "ineq", "fun": lambda u: radius ** 2 - u @ u}
            res = minimize(obj, v0, method="SLSQP", constraints=[cons],
                           options={"ftol": 1e-13, "maxiter": 200})
            u = res.x
            nu = np.linalg.norm(u)
            if nu > radius:
                u = u * radius / nu
        val = float(sgn * f(bmap(u[None]))[0])
        if val < best:
            best, best_v = val, u
    return sgn * best, best_v


def _disk_extremum(f, surface, center, radius, maximize, n_r=24, n_t=64):
    """Extremum of a scalar point function over the closed geodesic disk."""
    r = radius * np.linspace(0.0, 1.0, n_r)
    t = 2.0 * np.pi * np.arange(n_t) / n_t
    R, T = np.meshgrid(r, t, indexing="ij")
    pts, _ = surface.polar_points(center, R, T)
    vals = f(pts)
    sgn = -1.0 if maximize else 1.0
    i = np.unravel_index(np.argmin(sgn * vals), vals.shape)
    e = surface.tangent_frame(center)

    def obj(u):
        nu = np.linalg.norm(u)
        if nu > radius:
            u = u * radius / nu
        return float(sgn * f(surface._exp(center, u @ e)[None])[0])

    u0 = R[i] * np.array([np.cos(T[i]), np.sin(T[i])])
    res = minimize(obj, u0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
    return sgn * min(float(sgn * vals[i]), res.fun)


def class_membership(data, xibar, r, alpha_lo, alpha_hi, sign="+", seed=0, starts=32,
                     tol=1e-4):
    """Certificate for membership of K in the convex (+) or concave (-) class.

    Checks positivity of K on the disks B_r(xibar_j), the energy gap between
    the ball of radius r/2 and the sphere of radius r (product metric on
    Sigma^N), and the Laplacian bound Lap log K >= 1/|Sigma| (resp. <= -1/|Sigma|).
    Margins within ``tol`` of zero make the verdict "inconclusive".
    """
    s = data.surface
    xibar = s.point(np.asarray(_points(xibar), dtype=float))
    N = len(xibar)
    if alpha_lo > alpha_hi:
        raise ValueError("alpha_lo must not exceed alpha_hi")
    # closed 2r-ball inside M: sources and collisions out of reach
    if data.sing.m and np.min(source_distances(data, xibar)) <= 2.0 * r:
        raise BallNotInDomain("a source lies within 2r of the ball center")
    if N > 1 and np.min(pair_distances(s, xibar)) <= 2.0 * np.sqrt(2.0) * r:
        raise BallNotInDomain("the 2r-ball contains colliding configurations")
    if 2.0 * r >= s.injectivity_radius:
        raise BallNotInDomain("radius exceeds the injectivity radius")
    rng = np.random.default_rng(seed)
    bmap = _BallMap(s, xibar)

    pos = min(_disk_extremum(data.K, s, q, r, maximize=False) for q in xibar)
    lap = data.K.laplacian_log
    lap_min = min(_disk_extremum(lap, s, q, r, maximize=False) for q in xibar)
    lap_max = max(_disk_extremum(lap, s, q, r, maximize=True) for q in xibar)

    def logk(z):
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.sum(np.log(np.where(data.K(z) > 0, data.K(z), np.nan)), axis=-1) / FOUR_PI
        return np.where(np.isnan(v), -np.inf, v)

    vertices = [np.array(v) for v in itertools.product((alpha_lo, alpha_hi), repeat=data.sing.m)]
    inner_r, outer_r = 0.5 * r, r
    if sign == "+":
        M = max(_optimize_ball(lambda z, sv=sv: d_s(data, z, sv, check=False), bmap, inner_r,
                               True, False, rng, starts)[0] for sv in vertices)
        m = min(_optimize_ball(lambda z, sv=sv: d_s(data, z, sv, check=False), bmap, outer_r,
                               False, True, rng, starts)[0] for sv in vertices)
        lk_in = _optimize_ball(logk, bmap, inner_r, True, False, rng, starts)[0]
        lk_out = _optimize_ball(logk, bmap, outer_r, False, True, rng, starts)[0]
        gap = lk_out + m - M - lk_in
        lap_margin = lap_min - 1.0 / s.area
    elif sign == "-":
        M = max(_optimize_ball(lambda z, sv=sv: d_s(data, z, sv, check=False), bmap, outer_r,
                               True, True, rng, starts)[0] for sv in vertices)
        m = min(_optimize_ball(lambda z, sv=sv: d_s(data, z, sv, check=False), bmap, inner_r,
                               False, False, rng, starts)[0] for sv in vertices)
        lk_in = _optimize_ball(logk, bmap, inner_r, False, False, rng, starts)[0]
        lk_out = _optimize_ball(logk, bmap, outer_r, True, True, rng, starts)[0]
        gap = lk_in + m - M - lk_out
        lap_margin = -1.0 / s.area - lap_max
    else:
        raise ValueError("sign must be '+' or '-'")
    margins = np.array([pos, gap, lap_margin])
    if np.all(margins > tol):
        verdict = "pass"
    elif np.any(margins < -tol):
        verdict = "fail"
    else:
        verdict = "inconclusive"
    return ClassCertificate(
        sign=sign, verdict=verdict, positivity_margin=float(pos), gap_margin=float(gap),
        laplacian_margin=float(lap_margin), M=float(M), m=float(m),
        logk_inner=float(lk_in), logk_outer=float(lk_out),
        details={"r": r, "alpha_box": [alpha_lo, alpha_hi], "vertices": len(vertices),
                 "lap_log_k_range": [float(lap_min), float(lap_max)]},
    )
