"""Problem data and the scalar invariants of the singular Liouville problem.

A problem is a surface, a prescribed curvature K, conical points p_i with
orders alpha_i > -1, and the number N of concentration points.  From these
we derive chi(Sigma, alpha), rho_geo, the quantized set Gamma, the weight
K~ = K exp(f_g - 4 pi sum alpha_i G(., p_i)), and a sampled certificate for
the structural hypotheses (H1)-(H4).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import AtSingularPoint, GridTooCoarse, InvalidData, OnNodalLine


def bracket_minus(alpha):
    """[alpha]^- = max{n integer : n < alpha}."""
    return int(math.ceil(alpha)) - 1


@dataclass(frozen=True, eq=False)
class SingularData:
    points: np.ndarray
    orders: np.ndarray

    def __post_init__(self):
        orders = np.atleast_1d(np.asarray(self.orders, dtype=float))
        pts = np.asarray(self.points, dtype=float)
        if orders.size == 0:
            pts = pts.reshape(0, pts.shape[-1] if pts.ndim > 1 else 0)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "points", pts)
        if len(pts) != len(orders):
            raise InvalidData("singular points and orders differ in length")
        if np.any(orders <= -1.0):
            raise InvalidData("conical orders must satisfy alpha > -1")
        if np.any(orders == 0.0):
            raise InvalidData("conical orders must be nonzero")

    @property
    def m(self):
        return len(self.orders)

    @classmethod
    def empty(cls, surface):
        return cls(np.zeros((0, surface.dim)), np.zeros(0))

    @classmethod
    def build(cls, surface, points, orders):
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            return cls.empty(surface)
        pts = surface.point(pts.reshape(-1, surface.dim))
        for i, j in itertools.combinations(range(len(pts)), 2):
            if surface.distance(pts[i], pts[j]) < 1e-12:
                raise InvalidData(f"singular points {i} and {j} coincide")
        return cls(pts, orders)


@dataclass(frozen=True, eq=False)
class ProblemData:
    surface: object
    K: object
    sing: SingularData
    N: int
    ell: int = None

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidData("N must be a positive integer")
        if self.ell is None:
            sing, ell = _split(self, tol=None)
            object.__setattr__(self, "sing", sing)
            object.__setattr__(self, "ell", ell)

    @property
    def alpha(self):
        return self.sing.orders

    @property
    def p(self):
        return self.sing.points

    @property
    def inner(self):
        """Indices i <= ell (sources inside Sigma+)."""
        return np.arange(self.ell)

    def with_curvature(self, K):
        return ProblemData(self.surface, K, self.sing, self.N)

    def with_orders(self, orders):
        return ProblemData(self.surface, self.K, SingularData(self.p, orders), self.N)


# ---------------------------------------------------------------------------
# elementary derivations
# ---------------------------------------------------------------------------


def _nodal_distance(data, x):
    k = data.K(x)
    g = np.linalg.norm(data.K.grad(x), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k == 0.0, 0.0, np.abs(k) / g)


def _split(data, tol):
    pts, orders = data.sing.points, data.sing.orders
    if len(orders) == 0:
        return data.sing, 0
    if tol is not None:
        bad = np.nonzero(_nodal_distance(data, pts) < tol)[0]
        if bad.size:
            raise OnNodalLine(f"singular point {int(bad[0])} lies on the zero set of K")
    positive = data.K(pts) > 0
    # stable reorder keeps the relative order inside each group
    order = np.concatenate([np.nonzero(positive)[0], np.nonzero(~positive)[0]])
    return SingularData(pts[order], orders[order]), int(positive.sum())


def split_ell(data, tol=1e-8):
    """Reorder the sources so that p_1..p_ell lie in Sigma+; returns (data, ell).

    A source whose first-order distance |K|/|grad K| to {K = 0} is below
    ``tol`` raises :class:`OnNodalLine`.
    """
    sing, ell = _split(data, tol)
    return ProblemData(data.surface, data.K, sing, data.N, ell), ell


def chi_alpha_and_rho(data):
    chi = data.surface.euler_char + float(np.sum(data.alpha))
    return chi, 4.0 * np.pi * chi


def gamma_set(data, cap, tol=1e-12):
    """Sorted values of Gamma(alpha) = {8 pi n + 8 pi sum_{i in I}(1 + alpha_i)} <= cap."""
    base = [0.0]
    for a in data.alpha:
        base = base + [b + 8.0 * np.pi * (1.0 + a) for b in base]
    vals = []
    for b in base:
        n = 0
        while b + 8.0 * np.pi * n <= cap + tol:
            vals.append(b + 8.0 * np.pi * n)
            n += 1
    vals.sort()
    out = []
    for v in vals:
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def gamma_member(data, rho, tol=1e-9):
    return any(abs(v - rho) <= tol for v in gamma_set(data, rho + 1.0))


def f_g(data):
    """Zero-mean solution of -Lap f = 4 pi chi / |Sigma| - 2 kappa_g (a GridField)."""
    s = data.surface
    rhs = 4.0 * np.pi * s.euler_char / s.area - 2.0 * s.gauss_curvature
    return s.solve_poisson(np.full(s.grid_shape, rhs))


def f_g_value(data, x):
    # f_g vanishes identically on constant-curvature surfaces
    return np.zeros(np.shape(x)[:-1])


def source_potential(data, x, indices=None):
    """sum_i alpha_i G(x, p_i) over the given source indices."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    idx = range(data.sing.m) if indices is None else indices
    for i in idx:
        out = out + data.alpha[i] * data.surface.green(x, data.p[i])
    return out


def _check_off_sources(data, x):
    for i in range(data.sing.m):
        if np.any(data.surface.distance(x, data.p[i]) < 1e-13):
            raise AtSingularPoint(f"point coincides with singular source {i}")


def k_tilde(data, x):
    """K~(x) = K(x) exp(f_g(x) - 4 pi sum alpha_i G(x, p_i))."""
    x = np.asarray(x, dtype=float)
    _check_off_sources(data, x)
    return data.K(x) * np.exp(f_g_value(data, x) - 4.0 * np.pi * source_potential(data, x))


def log_k_tilde(data, x):
    x = np.asarray(x, dtype=float)
    _check_off_sources(data, x)
    return np.log(data.K(x)) + f_g_value(data, x) - 4.0 * np.pi * source_potential(data, x)


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------


@dataclass
class Verdict:
    applies: bool
    reason: str
    flags: dict = field(default_factory=dict)
    eps_window: tuple = None

    def to_dict(self):
        out = {"applies": self.applies, "reason": self.reason, "flags": self.flags}
        if self.eps_window is not None:
            out["eps_window"] = list(self.eps_window)
        return out


@dataclass
class HypothesisReport:
    H1: bool
    H2: bool
    H3: bool
    H4: bool
    ell: int
    n_components: int
    contractible: list
    component_euler: list
    min_grad_on_level_set: float
    grad_threshold: float
    max_laplacian_log_k: float
    beta: float
    chi_alpha: float
    rho_geo: float
    eps: float
    rho_in_gamma: bool
    order_exclusion: bool
    split_inequality: bool
    orders_positive: bool
    verdicts: dict

    def to_dict(self):
        d = dict(self.__dict__)
        d["verdicts"] = {k: v.to_dict() for k, v in self.verdicts.items()}
        return d


def positive_components(surface, K, n1, n2):
    """Label the sample-mesh vertices by component of {K > 0} (-1 elsewhere).

    Returns (verts, vals, labels, euler) where ``euler[c]`` is V - E + F of
    component ``c``.
    """
    verts, tris = surface.sample_mesh(n1, n2)
    vals = K(verts)
    pos = vals > 0
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    keep = pos[edges[:, 0]] & pos[edges[:, 1]]
    e = edges[keep]
    nv = len(verts)
    graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv))
    _, raw = connected_components(graph, directed=False)
    comp_ids = np.unique(raw[pos])
    labels = np.full(nv, -1)
    labels[pos] = np.searchsorted(comp_ids, raw[pos])
    tri_keep = pos[tris].all(axis=1)
    euler = []
    for c in range(len(comp_ids)):
        V = int(np.sum(labels == c))
        E = int(np.sum(labels[e[:, 0]] == c))
        F = int(np.sum(tri_keep & (labels[tris[:, 0]] == c)))
        euler.append(V - E + F)
    return verts, vals, labels, euler


def _positive_components(surface, K, n1, n2):
    verts, vals, _, euler = positive_components(surface, K, n1, n2)
    return verts, vals, len(euler), euler


def _level_set_points(surface, K, n1, n2):
    """Marching-squares zero contour of K on the chart grid, as surface points."""
    from skimage.measure import find_contours

    if surface.kind == "sphere":
        colat = np.pi * (np.arange(n1) + 0.5) / n1
        lon = 2.0 * np.pi * np.arange(n2 + 1) / n2
        L, C = np.meshgrid(lon, colat)
        grid = K(surface.from_chart(np.stack([L, C], -1)))
        to_chart = lambda r, c: np.stack([np.interp(c, np.arange(n2 + 1), lon),
                                          np.interp(r, np.arange(n1), colat)], -1)
    else:
        xs = surface.a * np.arange(n1 + 1) / n1
        ys = surface.b * np.arange(n2 + 1) / n2
        Xg, Yg = np.meshgrid(xs, ys, indexing="ij")
        grid = K(np.stack([Xg, Yg], -1))
        to_chart = lambda r, c: np.stack([np.interp(r, np.arange(n1 + 1), xs),
                                          np.interp(c, np.arange(n2 + 1), ys)], -1)
    pts = [to_chart(c[:, 0], c[:, 1]) for c in find_contours(grid, 0.0)]
    if not pts:
        return np.zeros((0, surface.dim))
    return surface.from_chart(np.vstack(pts))


def _verdict(required, eps_window=None):
    failed = [k for k, v in required.items() if not v]
    if failed:
        return Verdict(False, "fails: " + ", ".join(failed), dict(required), eps_window)
    return Verdict(True, "all hypotheses hold", dict(required), eps_window)


def hypotheses(data, grid=(128, 256), grad_rel=1e-3, check_refinement=True):
    """Sampled certificate of (H1)-(H4) and the theorem preconditions."""
    s, K = data.surface, data.K
    n1, n2 = grid
    verts, vals, ncomp, euler = _positive_components(s, K, n1, n2)
    if check_refinement:
        _, _, ncomp2, _ = _positive_components(s, K, 2 * n1, 2 * n2)
        if ncomp2 != ncomp:
            raise GridTooCoarse(f"Sigma+ has {ncomp} components at {grid} but {ncomp2} after refinement")
    H1 = bool(vals.min() < 0.0 < vals.max())
    grads = np.linalg.norm(K.grad(verts), axis=-1)
    threshold = grad_rel * float(grads.max()) if grads.size else 0.0
    level = _level_set_points(s, K, n1, n2)
    min_grad = float(np.linalg.norm(K.grad(level), axis=-1).min()) if len(level) else float("inf")
    H3 = bool(min_grad > threshold)
    try:
        data, ell = split_ell(data)
        H4 = True
    except OnNodalLine:
        ell = 0
        H4 = False
    pos = vals > 0
    lap = K.laplacian_log(verts[pos]) if pos.any() else np.array([np.inf])
    max_lap = float(np.max(lap))
    beta = -max_lap if max_lap < 0 else None

    N = data.N
    chi, rho = chi_alpha_and_rho(data)
    eps = 8.0 * np.pi * N - rho
    inner = data.alpha[: data.ell]
    exclusion = bool(all(not (float(a).is_integer() and 0 <= a <= N - 1) for a in inner))
    split_ok = bool(N <= data.ell + sum(bracket_minus(a) for a in inner))
    positive_orders = bool(np.all(inner > 0))
    contractible = [e == 1 for e in euler]
    beta_ok = beta is not None
    chi_ok = beta_ok and chi > 2 * N - beta * s.area / (4.0 * np.pi)
    window = (0.0, beta * s.area) if beta_ok else None
    eps_ok = bool(eps > 0 and (not beta_ok or eps < beta * s.area))

    verdicts = {
        "Thm1.1": _verdict({
            "H1": H1, "H2": True, "components>=N": ncomp >= N, "beta>0": beta_ok,
            "alpha_i>0 (i<=ell)": positive_orders, "eps in window": eps_ok,
            "chi condition": bool(chi_ok)}, window),
        "Thm1.2": _verdict({
            "H1": H1, "H2": True, "H3": H3, "H4": H4,
            "noncontractible component": any(not c for c in contractible),
            "beta>0": beta_ok, "order exclusion": exclusion, "eps in window": eps_ok,
            "chi condition": bool(chi_ok)}, window),
        "Thm1.3": _verdict({
            "H1": H1, "H2": True, "H3": H3, "H4": H4, "beta>0": beta_ok,
            "order exclusion": exclusion, "split inequality": split_ok,
            "eps in window": eps_ok, "chi condition": bool(chi_ok)}, window),
        # Theorems 5.1/5.2 need a class certificate (see energy.class_membership);
        # here only the structural sign of eps is checked.
        "Thm5.1": _verdict({"eps<0 (rho_geo > 8 pi N)": eps < 0,
                            "class K+ certificate": False}),
        "Thm5.2": _verdict({"eps>0 (rho_geo < 8 pi N)": eps > 0,
                            "class K- certificate": False}),
    }
    for key in ("Thm5.1", "Thm5.2"):
        verdicts[key].reason += " (run the classes command for the certificate)"

    return HypothesisReport(
        H1=H1, H2=True, H3=H3, H4=H4, ell=int(ell), n_components=int(ncomp),
        contractible=contractible, component_euler=[int(e) for e in euler],
        min_grad_on_level_set=min_grad, grad_threshold=threshold,
        max_laplacian_log_k=max_lap, beta=beta, chi_alpha=chi, rho_geo=rho, eps=eps,
        rho_in_gamma=gamma_member(data, rho), order_exclusion=exclusion,
        split_inequality=split_ok, orders_positive=positive_orders, verdicts=verdicts,
    )


def feasible_splits(N, caps):
    """All compositions N = N_1 + ... + N_ell with 0 <= N_i <= caps[i]."""
    out = []

    def rec(i, left, acc):
        if i == len(caps):
            if left == 0:
                out.append(tuple(acc))
            return
        for n in range(min(left, caps[i]), -1, -1):
            rec(i + 1, left - n, acc + [n])

    rec(0, N, [])
    return out


def greedy_split(N, orders):
    """Greedy split of N over the inner sources with N_i <= 1 + [alpha_i]^-.

    Returns None when N > sum of caps.
    """
    caps = [max(0, 1 + bracket_minus(a)) for a in orders]
    if N > sum(caps):
        return None
    split, left = [], N
    for c in caps:
        take = min(left, c)
        split.append(take)
        left -= take
    return split
