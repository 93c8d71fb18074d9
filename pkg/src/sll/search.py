"""Critical points of the reduced energy Psi and their stability.

Search runs a Riemannian trust-region Newton method in orthonormal tangent
frames: the model Hessian is the finite-difference Hessian of the analytic
gradient, steps are retracted with the exponential map, and any step that
leaves D = {Phi > -M} inside M+ is rejected and the region shrunk.  Mode
``any`` drives |grad Psi| to zero with a Levenberg-Marquardt variant, which
also converges to saddles.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import energy as en
from .errors import DomainEscape, NotCritical, OutOfDomain


@dataclass
class SearchConfig:
    multistarts: int = 16
    grad_tol: float = 1e-8
    radius0: float = 0.1
    radius_max: float = 0.5
    max_iters: int = 300
    seed: int = 0
    M: float = 100.0
    curve_samples: int = 48
    tau: float = 1e-6
    dedup_tol: float = 1e-6

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.M <= 0:
            raise ValueError("M must be positive")


@dataclass
class CriticalPointReport:
    config: np.ndarray
    value: float
    grad_norm: float
    hessian_spectrum: np.ndarray
    classification: str
    index: int
    stable: bool
    reason: str
    a_sign: str
    a_value: float
    extras: dict = field(default_factory=dict)

    def to_dict(self, surface=None):
        pts = self.config if surface is None else surface.to_chart(self.config)
        return {
            "config": np.asarray(pts).tolist(),
            "value": self.value,
            "grad_norm": self.grad_norm,
            "hessian_spectrum": np.asarray(self.hessian_spectrum).tolist(),
            "classification": self.classification,
            "index": self.index,
            "stable": self.stable,
            "reason": self.reason,
            "a_sign": self.a_sign,
            "a_value": self.a_value,
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _retract(s, xi, coords):
    return s._exp(xi, en.from_coords(s, xi, coords))


def in_domain(data, xi, M):
    """xi in D: M+ membership and Phi > -M (batched)."""
    xi = np.asarray(xi, dtype=float)
    ok, _ = en.domain_flags(data, xi, batch=True)
    out = np.zeros(ok.shape, dtype=bool)
    if np.any(ok):
        with np.errstate(all="ignore"):
            ph = en.phi(data, xi, check=False)
        out = ok & np.isfinite(ph) & (ph > -M)
    return out


def _tr_step(g, H, radius):
    """Minimize g.p + p.H.p/2 over |p| <= radius (eigen-decomposition solver)."""
    lam, V = np.linalg.eigh(H)
    gt = V.T @ g
    if lam[0] > 0:
        p = -gt / lam
        if np.linalg.norm(p) <= radius:
            return V @ p
    lo = max(0.0, -lam[0]) + 1e-12 * max(1.0, abs(lam).max())
    norm = lambda mu: np.linalg.norm(gt / (lam + mu))
    if norm(lo) <= radius:
        # hard case: move to the boundary along the lowest eigenvector
        p = -gt / (lam + lo)
        extra = np.sqrt(max(radius ** 2 - p @ p, 0.0))
        p[0] += extra if gt[0] <= 0 else -extra
        return V @ p
    hi = lo + np.linalg.norm(g) / radius + abs(lam).max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm(mid) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    return V @ (-gt / (lam + hi))


def random_start(data, rng, n_points, max_tries=10000):
    """Random configuration in M+ (rejection sampling)."""
    s = data.surface
    out = []
    for _ in range(max_tries):
        x = s.random_points(rng, 1)[0]
        if data.K(x[None])[0] <= 0:
            continue
        if data.ell and np.min(s.distance(x, data.p[: data.ell])) < 1e-3:
            continue
        if out and np.min(s.distance(x, np.array(out))) < 1e-3:
            continue
        out.append(x)
        if len(out) == n_points:
            return np.array(out)
    raise DomainEscape("could not sample a configuration inside M+")


# ---------------------------------------------------------------------------
# local solvers
# ---------------------------------------------------------------------------


def trust_region(data, xi, cfg, sign=1.0):
    """Minimize sign * Psi from xi; returns (xi, converged)."""
    s = data.surface
    f = lambda z: sign * en.psi(data, z, check=False)
    grad = lambda z: sign * en.grad_psi(data, z, check=False)
    radius = cfg.radius0
    fx = f(xi)
    for _ in range(cfg.max_iters):
        g = en.to_coords(s, xi, grad(xi))
        if np.linalg.norm(g) < cfg.grad_tol:
            return xi, True
        H = sign * en.hessian(data, xi)
        p = _tr_step(g, H, radius)
        pred = -(g @ p + 0.5 * p @ H @ p)
        cand = _retract(s, xi, p)
        if not in_domain(data, cand, cfg.M):
            radius *= 0.25
            if radius < 1e-14:
                break
            continue
        fc = f(cand)
        rho = (fx - fc) / pred if pred > 0 else -1.0
        if rho < 0.25:
            radius *= 0.25
        elif rho > 0.75 and np.linalg.norm(p) > 0.99 * radius:
            radius = min(2.0 * radius, cfg.radius_max)
        if rho > 0.0 or (pred <= 0 and abs(fx - fc) < 1e-15):
            xi, fx = cand, fc
        if radius < 1e-14:
            break
    g = en.to_coords(s, xi, grad(xi))
    return xi, bool(np.linalg.norm(g) < cfg.grad_tol)


def stationary(data, xi, cfg):
    """Drive |grad Psi| to zero (Levenberg-Marquardt on the gradient)."""
    s = data.surface
    merit = lambda z: 0.5 * float(np.sum(en.grad_psi(data, z, check=False) ** 2))
    mu = 1e-3
    fx = merit(xi)
    for _ in range(cfg.max_iters):
        g = en.to_coords(s, xi, en.grad_psi(data, xi, check=False))
        if np.linalg.norm(g) < cfg.grad_tol:
            return xi, True
        H = en.hessian(data, xi)
        A = H.T @ H
        p = -np.linalg.solve(A + mu * np.eye(len(g)), H.T @ g)
        step = np.linalg.norm(p)
        if step > cfg.radius_max:
            p *= cfg.radius_max / step
        cand = _retract(s, xi, p)
        if not in_domain(data, cand, cfg.M):
            mu *= 10.0
            if mu > 1e12:
                break
            continue
        fc = merit(cand)
        if fc < fx:
            xi, fx = cand, fc
            mu = max(mu / 10.0, 1e-12)
        else:
            mu *= 10.0
            if mu > 1e12:
                break
    g = en.to_coords(s, xi, en.grad_psi(data, xi, check=False))
    return xi, bool(np.linalg.norm(g) < cfg.grad_tol)


def newton_polish(data, xi, tol=1e-11, iters=8):
    s = data.surface
    for _ in range(iters):
        g = en.to_coords(s, xi, en.grad_psi(data, xi, check=False))
        if np.linalg.norm(g) < tol:
            break
        H = en.hessian(data, xi)
        p = -np.linalg.lstsq(H, g, rcond=1e-12)[0]
        if np.linalg.norm(p) > 1e-2:
            break
        xi = _retract(s, xi, p)
    return xi


# ---------------------------------------------------------------------------
# classification and search
# ---------------------------------------------------------------------------


def _probe_extremum(data, xi, null=None, radii=(1e-3, 1e-2, 5e-2), samples=400, seed=0):
    """Sampled test for a degenerate local min/max: returns 'min', 'max' or None.

    Random directions are mixed with both signs of the near-null Hessian eigenvectors
    (frame coordinates, columns of ``null``), where higher-order terms decide.
    """
    s = data.surface
    rng = np.random.default_rng(seed)
    n = 2 * xi.shape[0]
    w = rng.standard_normal((samples, n))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    if null is not None and null.size:
        w = np.vstack([w, null.T, -null.T])
    w = np.vstack([r * w for r in radii])
    pts = np.array([_retract(s, xi, c) for c in w])
    ok = in_domain(data, pts, np.inf)
    vals = en.psi(data, pts[ok], check=False) - en.psi(data, xi, check=False)
    if np.all(vals >= -1e-14):
        return "min"
    if np.all(vals <= 1e-14):
        return "max"
    return None


def classify(data, xi, grad_tol=1e-8, tau=1e-6):
    """Signature classification and stability verdict of a critical point."""
    xi = np.asarray(xi, dtype=float)
    try:
        g = en.grad_psi(data, xi)
    except OutOfDomain:
        raise
    gn = float(np.linalg.norm(g))
    if gn >= grad_tol:
        raise NotCritical(f"|grad Psi| = {gn:.3e} is not below {grad_tol:g}")
    spec, vecs = np.linalg.eigh(en.hessian(data, xi))
    neg = int(np.sum(spec < -tau))
    pos = int(np.sum(spec > tau))
    small = len(spec) - neg - pos
    if small == 0:
        if neg == 0:
            cls, stable, reason = "min", True, "nondegenerate local minimum"
        elif pos == 0:
            cls, stable, reason = "max", True, "nondegenerate local maximum"
        else:
            cls, stable, reason = "saddle", True, f"nondegenerate saddle of index {neg}"
    else:
        probe = _probe_extremum(data, xi, vecs[:, np.abs(spec) <= tau])
        if probe is not None:
            cls, stable, reason = probe, True, f"degenerate local {probe}imum (sampled)"
        else:
            cls, stable, reason = "degenerate", False, "undetermined by implemented criteria"
    a = float(en.a_fun(data, xi, check=False))
    weights = np.exp(en.log_weights(data, xi))
    scale = 4.0 * np.pi * float(np.sum(np.abs(weights)))
    if abs(a) <= 1e-12 * max(scale, 1e-300):
        a_sign = "inconclusive"
    else:
        a_sign = "+" if a > 0 else "-"
    return CriticalPointReport(
        config=xi, value=float(en.psi(data, xi, check=False)), grad_norm=gn,
        hessian_spectrum=spec, classification=cls, index=neg, stable=stable,
        reason=reason, a_sign=a_sign, a_value=a,
    )


def canonical(surface, xi):
    """Permutation-canonical ordering: points sorted lexicographically."""
    order = np.lexsort(np.asarray(xi).T[::-1])
    return np.asarray(xi)[order]


def same_configuration(surface, a, b, tol):
    D = surface.distance(a[:, None, :], b[None, :, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max()) < tol


def find_critical_points(data, cfg, mode="any", starts=None):
    """Multistart search; returns deduplicated :class:`CriticalPointReport` list.

    ``mode`` is 'min', 'max' or 'any'.  An empty list means none was found;
    :class:`DomainEscape` is raised when every start left D.
    """
    rng = np.random.default_rng(cfg.seed)
    if starts is None:
        starts = [random_start(data, rng, data.N) for _ in range(cfg.multistarts)]
    found = []
    escapes = 0
    for x0 in starts:
        x0 = np.asarray(x0, dtype=float)
        if not in_domain(data, x0, cfg.M):
            escapes += 1
            continue
        if mode == "min":
            xi, ok = trust_region(data, x0, cfg, sign=1.0)
        elif mode == "max":
            xi, ok = trust_region(data, x0, cfg, sign=-1.0)
        elif mode == "any":
            xi, ok = stationary(data, x0, cfg)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if not ok:
            if not in_domain(data, xi, cfg.M):
                escapes += 1
            continue
        xi = newton_polish(data, xi)
        if not in_domain(data, xi, cfg.M):
            escapes += 1
            continue
        try:
            rep = classify(data, xi, cfg.grad_tol, cfg.tau)
        except NotCritical:
            continue
        if mode == "min" and rep.classification not in ("min",):
            continue
        if mode == "max" and rep.classification not in ("max",):
            continue
        if any(same_configuration(data.surface, xi, r.config, cfg.dedup_tol) for r in found):
            continue
        rep.config = canonical(data.surface, xi)
        found.append(rep)
    if not found and escapes == len(starts):
        raise DomainEscape("every start left the admissible domain")
    found.sort(key=lambda r: (r.classification, -r.value if mode == "max" else r.value,
                              tuple(np.round(r.config.ravel(), 12))))
    return found
