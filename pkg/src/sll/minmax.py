"""Discrete max-min scheme with retractions onto closed curves in Sigma+.

A setup fixes N closed curves sigma_j in Sigma+, retractions P_j onto them
and a base configuration xi0 on the curves.  The set B is the connected
component containing xi0 of {xi_j in sigma_j, d(xi_j, xi_k) > 1/M}; its
relative boundary B0 is where the minimal pair distance equals 1/M.

The family of all homotopies pinning B0 is replaced by gradient-ascent
deformations of a sampled B: every sample climbs Psi inside
D = {Phi > -M} while B0 stays fixed, and the minimum over the deformed
samples is a lower bound for the max-min value over that family.

Three constructions are provided:

``RayGenus0``
    Sphere, annular component of Sigma+.  A stereographic chart sends one
    hole to the origin; sigma is a chart circle and P projects along rays.
``TorusCurve``
    Flat torus, a non-contractible straight loop inside Sigma+; P drops the
    coordinate transverse to the loop.
``ContractibleCircles``
    Contractible Sigma+.  N is split over the inner sources with
    N_i <= 1 + [alpha_i]^-, sigma_j is the chart circle of radius delta about
    p_i and P_j projects radially from p_i.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import energy as en
from .errors import NoFeasibleSplit, SetupInfeasible, TopologyMismatch
from .problem import _level_set_points, bracket_minus, greedy_split, positive_components
from .search import in_domain

CASES = ("RayGenus0", "TorusCurve", "ContractibleCircles")
MAX_SAMPLES = 250_000
MESH = (128, 256)


# ---------------------------------------------------------------------------
# charts and curves
# ---------------------------------------------------------------------------


class StereoChart:
    """Stereographic chart of the sphere from -n, scaled to be isometric at n.

    u = 2 (x.e1, x.e2) / (1 + x.n) - shift.
    """

    def __init__(self, n, shift=(0.0, 0.0)):
        n = np.asarray(n, dtype=float)
        self.n = n / np.linalg.norm(n)
        ref = np.array([1.0, 0.0, 0.0]) if abs(self.n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = ref - (ref @ self.n) * self.n
        self.e1 = e1 / np.linalg.norm(e1)
        self.e2 = np.cross(self.n, self.e1)
        self.shift = np.asarray(shift, dtype=float)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        den = 1.0 + x @ self.n
        u = 2.0 * np.stack([x @ self.e1, x @ self.e2], -1) / den[..., None]
        return u - self.shift

    def inverse(self, u):
        v = 0.5 * (np.asarray(u, dtype=float) + self.shift)
        r2 = np.sum(v * v, axis=-1, keepdims=True)
        x = (2.0 * v[..., :1] * self.e1 + 2.0 * v[..., 1:] * self.e2 + (1.0 - r2) * self.n)
        return x / (1.0 + r2)

    def to_dict(self):
        return {"type": "stereographic", "center": self.n.tolist(), "shift": self.shift.tolist()}


class TorusChart:
    """Minimal-image coordinates about a reference point."""

    def __init__(self, surface, center):
        self.surface = surface
        self.center = np.asarray(center, dtype=float)

    def forward(self, x):
        return self.surface.offset(self.center, x)

    def inverse(self, u):
        return self.surface.point(self.center + np.asarray(u, dtype=float))

    def to_dict(self):
        return {"type": "translation", "center": self.center.tolist()}


class ChartCircle:
    """Chart circle center + radius e^{2 pi i t}; retraction by radial projection."""

    def __init__(self, chart, center, radius):
        self.chart = chart
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def point(self, t):
        a = 2.0 * np.pi * np.asarray(t, dtype=float)
        u = self.center + self.radius * np.stack([np.cos(a), np.sin(a)], -1)
        return self.chart.inverse(u)

    def param(self, x):
        w = self.chart.forward(x) - self.center
        return np.mod(np.arctan2(w[..., 1], w[..., 0]) / (2.0 * np.pi), 1.0)

    def retract(self, x):
        return self.point(self.param(x))

    def to_dict(self):
        return {"type": "chart_circle", "chart": self.chart.to_dict(),
                "center": self.center.tolist(), "radius": self.radius}


class TorusLoop:
    """Straight loop {x[axis'] = level} of the flat torus; the retraction
    keeps the coordinate along the loop and replaces the other by ``level``."""

    def __init__(self, surface, axis, level):
        self.surface = surface
        self.axis = int(axis)
        self.level = float(level)
        self.length = surface.periods[self.axis]

    def point(self, t):
        t = np.asarray(t, dtype=float)
        along = np.mod(t, 1.0) * self.length
        level = np.full_like(along, self.level)
        pts = [along, level] if self.axis == 0 else [level, along]
        return self.surface.point(np.stack(pts, -1))

    def param(self, x):
        x = np.asarray(x, dtype=float)
        return np.mod(x[..., self.axis] / self.length, 1.0)

    def retract(self, x):
        return self.point(self.param(x))

    def to_dict(self):
        return {"type": "torus_loop", "axis": self.axis, "level": self.level}


def _circular_gap(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), 1.0)
    return np.minimum(d, 1.0 - d)


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MinMaxSetup:
    data: object
    case: str
    curves: list
    base_params: np.ndarray
    M: float
    info: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.curves)

    @property
    def base(self):
        return self.config(self.base_params)

    def config(self, params):
        """Configuration(s) with xi_j = sigma_j(params[..., j])."""
        params = np.asarray(params, dtype=float)
        return np.stack([c.point(params[..., j]) for j, c in enumerate(self.curves)], axis=-2)

    def retract(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.stack([c.retract(xi[..., j, :]) for j, c in enumerate(self.curves)], axis=-2)

    def params_of(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.stack([c.param(xi[..., j, :]) for j, c in enumerate(self.curves)], axis=-1)

    def min_pair(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.N < 2:
            return np.full(xi.shape[:-2], np.inf)
        return en.pair_distances(self.data.surface, xi).min(axis=-1)

    def on_curves(self, xi, tol=1e-9):
        xi = np.asarray(xi, dtype=float)
        d = self.data.surface.distance(xi, self.retract(xi))
        return np.all(d < tol, axis=-1)

    def in_B_set(self, xi):
        """Membership in {xi_j in sigma_j, d(xi_j, xi_k) > 1/M} (before taking
        the component of xi0)."""
        return self.on_curves(xi) & (self.min_pair(xi) > 1.0 / self.M)

    def in_B0(self, xi, tol=1e-9):
        return self.on_curves(xi) & (np.abs(self.min_pair(xi) - 1.0 / self.M) < tol)

    def in_D(self, xi):
        return in_domain(self.data, xi, self.M)

    def to_dict(self):
        s = self.data.surface
        return {
            "case": self.case,
            "M": self.M,
            "curves": [c.to_dict() for c in self.curves],
            "base": np.asarray(s.to_chart(self.base)).tolist(),
            "base_params": self.base_params.tolist(),
            "info": self.info,
        }


def _boundary_points(data):
    return _level_set_points(data.surface, data.K, *_mesh(data.surface))


def _mesh(surface):
    return MESH if surface.kind == "sphere" else (MESH[1], MESH[1])


def _curve_margin(data, pts, boundary):
    """Minimum distance from sampled curve points to {K = 0} and the sources."""
    s = data.surface
    margin = np.inf
    if len(boundary):
        near = boundary[_tree(s, boundary).query(s.point(pts))[1]]
        margin = min(margin, float(np.min(s.distance(pts, near))))
    if data.sing.m:
        margin = min(margin, float(np.min(s.distance(pts[:, None, :], data.p[None, :, :]))))
    return margin


def _tree(surface, pts):
    """Nearest-neighbour index: chordal on the sphere, periodic on the torus."""
    if surface.kind == "sphere":
        return cKDTree(pts)
    return cKDTree(surface.point(pts), boxsize=surface.periods)


def _labels_at(surface, verts, labels, x):
    _, idx = _tree(surface, verts).query(surface.point(np.asarray(x, dtype=float)))
    return labels[idx]


def _ray_genus0(data, M, n_circle=512):
    s = data.surface
    if s.kind != "sphere":
        raise TopologyMismatch("RayGenus0 needs the sphere")
    verts, vals, labels, euler = positive_components(s, data.K, *_mesh(s))
    annuli = [c for c, e in enumerate(euler) if e == 0]
    if not annuli:
        raise TopologyMismatch("Sigma+ has no annular (non-contractible) component")
    comp = annuli[0]
    inside = labels == comp
    # complement of the annulus splits into two caps
    _, tris = s.sample_mesh(*_mesh(s))
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    out = ~inside
    e = edges[out[edges[:, 0]] & out[edges[:, 1]]]
    nv = len(verts)
    _, holes = connected_components(
        coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv)), directed=False)
    hole_ids = np.unique(holes[out])
    if len(hole_ids) < 2:
        raise TopologyMismatch("annular component does not separate two holes")
    ring = verts[inside]
    tree = _tree(s, verts)
    # deepest vertex of each hole: farthest from the annulus
    deep = []
    for h in hole_ids[:2]:
        cand = verts[out & (holes == h)]
        far, _ = _tree(s, ring).query(cand)
        deep.append(cand[np.argmax(far)])
    center, pole = deep
    chart = StereoChart(-pole)
    chart.shift = chart.forward(center)
    boundary = _boundary_points(data)
    radii = np.linalg.norm(chart.forward(ring), axis=-1)
    best = None
    t = np.arange(n_circle) / n_circle
    for rho in np.geomspace(radii.min(), radii.max(), 64)[1:-1]:
        curve = ChartCircle(chart, (0.0, 0.0), rho)
        pts = curve.point(t)
        if np.any(data.K(pts) <= 0) or np.any(labels[tree.query(pts)[1]] != comp):
            continue
        margin = _curve_margin(data, pts, boundary)
        if best is None or margin > best[0]:
            best = (margin, curve)
    if best is None:
        raise TopologyMismatch("no chart circle fits inside the annular component")
    margin, curve = best
    N = data.N
    base = (np.arange(N) + 0.5) / N
    return MinMaxSetup(data, "RayGenus0", [curve] * N, base, M,
                       {"margin": margin, "chart_radius": curve.radius})


def _torus_curve(data, M, n_lines=256, n_curve=512):
    s = data.surface
    if s.kind != "torus":
        raise TopologyMismatch("TorusCurve needs the flat torus")
    boundary = _boundary_points(data)
    t = np.arange(n_curve) / n_curve
    best = None
    for axis in (0, 1):
        other = 1 - axis
        for level in s.periods[other] * (np.arange(n_lines) + 0.5) / n_lines:
            curve = TorusLoop(s, axis, level)
            pts = curve.point(t)
            if np.any(data.K(pts) <= 0):
                continue
            margin = _curve_margin(data, pts, boundary)
            if best is None or margin > best[0]:
                best = (margin, curve)
    if best is None:
        raise TopologyMismatch("no straight non-contractible loop lies inside Sigma+")
    margin, curve = best
    N = data.N
    base = (np.arange(N) + 0.5) / N
    return MinMaxSetup(data, "TorusCurve", [curve] * N, base, M,
                       {"margin": margin, "axis": curve.axis, "level": curve.level})


def _cones_disjoint(apexes, thetas, delta, length):
    from shapely.geometry import Polygon

    polys = []
    for c, th in zip(apexes, thetas):
        arc = th + np.linspace(-delta, delta, 33)
        ring = np.vstack([c, c + length * np.stack([np.cos(arc), np.sin(arc)], -1)])
        polys.append(Polygon(ring))
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            if polys[i].intersects(polys[j]):
                return False
    return True


def _contractible_circles(data, M, n_circle=256, tries=32):
    s = data.surface
    ell = data.ell
    if ell < 1:
        raise TopologyMismatch("ContractibleCircles needs at least one source inside Sigma+")
    split = greedy_split(data.N, data.alpha[:ell])
    if split is None:
        cap = ell + sum(bracket_minus(a) for a in data.alpha[:ell])
        raise NoFeasibleSplit(f"N = {data.N} exceeds ell + sum [alpha_i]^- = {cap}")
    verts, vals, labels, euler = positive_components(s, data.K, *_mesh(s))
    comps = _labels_at(s, verts, labels, data.p[:ell])
    for i, c in enumerate(comps):
        if c < 0 or euler[c] != 1:
            raise TopologyMismatch(f"source {i} does not lie in a contractible component of Sigma+")
    if s.kind == "sphere":
        chart = StereoChart(-verts[np.argmin(vals)])
    else:
        chart = TorusChart(s, data.p[0])
    centers = chart.forward(data.p[:ell])
    boundary = chart.forward(_boundary_points(data))
    others = chart.forward(data.p)
    scale = np.inf
    for i, c in enumerate(centers):
        if len(boundary):
            scale = min(scale, float(np.min(np.linalg.norm(boundary - c, axis=-1))))
        d = np.linalg.norm(np.delete(others, i, axis=0) - c, axis=-1)
        if d.size:
            scale = min(scale, float(d.min()))
    if not np.isfinite(scale):
        raise SetupInfeasible("cannot size the circles: Sigma+ has no boundary and one source")
    extent = np.max(np.linalg.norm(boundary[:, None, :] - centers[None], axis=-1)) if len(boundary) else 1.0
    length = 2.0 * extent
    if ell == 1:
        theta_sets = [np.zeros(1)]
    else:
        mean = centers.mean(axis=0)
        w = centers - mean
        theta_sets = [np.arctan2(w[:, 1], w[:, 0])]
        rng = np.random.default_rng(0)
        theta_sets += [rng.uniform(0, 2 * np.pi, ell) for _ in range(tries)]
    t = np.arange(n_circle) / n_circle
    pair = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    pair[np.diag_indices(ell)] = np.inf
    for k in range(12):
        delta = 0.2 * 0.5 ** k * scale
        if delta >= 0.5 * np.pi or np.any(pair <= 2 * delta):
            continue
        ok = True
        for c in centers:
            pts = ChartCircle(chart, c, delta).point(t)
            if np.any(data.K(pts) <= 0):
                ok = False
                break
        if not ok:
            continue
        for thetas in theta_sets:
            if ell == 1 or _cones_disjoint(centers, thetas, delta, length):
                break
        else:
            continue
        curves, params = [], []
        j = 0
        for i, Ni in enumerate(split):
            circle = ChartCircle(chart, centers[i], delta)
            for _ in range(Ni):
                j += 1
                curves.append(circle)
                params.append((thetas[i] + j * delta / data.N) / (2 * np.pi))
        params = np.mod(np.array(params), 1.0)
        info = {"delta": delta, "split": [int(n) for n in split],
                "theta": [float(v) for v in thetas], "scale": scale}
        return MinMaxSetup(data, "ContractibleCircles", curves, params, M, info)
    raise SetupInfeasible("no delta passes the circle and cone conditions")


def build_retraction(data, case, M=100.0):
    """Curves, retractions and base point for one of the three constructions."""
    if case not in CASES:
        raise ValueError(f"unknown retraction case {case!r}; expected one of {CASES}")
    builder = {"RayGenus0": _ray_genus0, "TorusCurve": _torus_curve,
               "ContractibleCircles": _contractible_circles}[case]
    setup = builder(data, float(M))
    base = setup.base
    if setup.min_pair(base) <= 1.0 / setup.M:
        raise SetupInfeasible(
            f"base points are closer than 1/M = {1.0 / setup.M:g}; increase M")
    if not setup.in_D(base):
        raise SetupInfeasible("base configuration is outside D")
    return setup


# ---------------------------------------------------------------------------
# discrete deformation
# ---------------------------------------------------------------------------


@dataclass
class MinMaxResult:
    psi_star: float
    witness: en.Configuration
    boundary_gap: float
    min_boundary: float
    min_identity: float
    lemma_hit: bool
    lemma_residual: float
    n_samples: int
    n_boundary: int
    fraction_in_D: float
    history: list

    def to_dict(self, surface=None):
        pts = self.witness.points
        if surface is not None:
            pts = surface.to_chart(pts)
        return {
            "psi_star": self.psi_star,
            "witness": np.asarray(pts).tolist(),
            "boundary_gap": self.boundary_gap,
            "min_boundary": self.min_boundary,
            "min_identity": self.min_identity,
            "positive_gap": bool(self.boundary_gap > 0),
            "lemma_hit": self.lemma_hit,
            "lemma_residual": self.lemma_residual,
            "n_samples": self.n_samples,
            "n_boundary": self.n_boundary,
            "fraction_in_D": self.fraction_in_D,
        }


def _grid_graph(valid):
    """Periodic nearest-neighbour graph on the valid nodes of an N-d grid."""
    shape = valid.shape
    idx = np.arange(valid.size).reshape(shape)
    rows, cols = [], []
    for ax in range(valid.ndim):
        nb = np.roll(idx, -1, axis=ax)
        ok = valid & np.roll(valid, -1, axis=ax)
        rows.append(idx[ok])
        cols.append(nb[ok])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return coo_matrix((np.ones(len(r)), (r, c)), shape=(valid.size, valid.size))


def sample_B(setup, n):
    """Sampled B (grid nodes of the component of xi0) and sampled B0."""
    N = setup.N
    if n ** N > MAX_SAMPLES:
        raise SetupInfeasible(f"{n}^{N} samples exceed the limit {MAX_SAMPLES}")
    axes = [setup.base_params[j] + np.arange(n) / n for j in range(N)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    params = np.mod(grid, 1.0)
    xi = setup.config(params)
    valid = setup.min_pair(xi) > 1.0 / setup.M
    if not valid.flat[0]:
        raise SetupInfeasible("base configuration is not in B")
    _, comp = connected_components(_grid_graph(valid), directed=False)
    comp = comp.reshape(valid.shape)
    member = valid & (comp == comp.flat[0])

    # B0: bisect every grid edge leaving the component
    starts, ends = [], []
    for ax in range(N):
        for shift in (-1, 1):
            cut = member & ~np.roll(valid, shift, axis=ax)
            if not np.any(cut):
                continue
            step = np.zeros(N)
            step[ax] = -shift / n
            a = grid[cut]
            starts.append(a)
            ends.append(a + step)
    boundary = np.zeros((0, N, setup.data.surface.dim))
    if starts:
        lo = np.vstack(starts)
        hi = np.vstack(ends)
        target = 1.0 / setup.M
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            above = setup.min_pair(setup.config(np.mod(mid, 1.0))) > target
            lo = np.where(above[:, None], mid, lo)
            hi = np.where(above[:, None], hi, mid)
        boundary = setup.config(np.mod(0.5 * (lo + hi), 1.0))
    return xi[member], boundary


def _values(data, xi, M):
    """Psi on D and -inf off it; Phi and Psi share the same two sums."""
    ok, _ = en.domain_flags(data, xi, batch=True)
    out = np.full(xi.shape[:-2], -np.inf)
    if np.any(ok):
        x = xi[ok]
        with np.errstate(all="ignore"):
            base = en._base(data, x)
            inter = en.interaction(data.surface, x)
        ph = base - inter
        good = np.isfinite(ph) & (ph > -M)
        vals = np.where(good, base + inter, -np.inf)
        out[ok] = vals
    return out


def approx_minmax(data, setup, cfg, steps=None, dt=0.01, max_move=0.1, armijo=1e-4):
    """Max-min value of Psi over ascent deformations of the sampled B.

    Each sample follows the explicit gradient flow of Psi with time step
    ``dt`` (halved per sample when a step leaves D or fails the ascent test,
    displacement capped at ``max_move``), so every sample is deformed over
    the same time horizon of at most ``steps * dt``.
    """
    s = data.surface
    M = setup.M
    steps = cfg.max_iters if steps is None else int(steps)
    X, B0 = sample_B(setup, cfg.curve_samples)
    vals = _values(data, X, M)
    in_D = np.isfinite(vals)
    fraction = float(np.mean(in_D))
    X, vals = X[in_D], vals[in_D]
    if len(X) == 0:
        raise SetupInfeasible("no sample of B lies in D")
    b0_vals = _values(data, B0, M) if len(B0) else np.zeros(0)
    min_b0 = float(np.min(b0_vals)) if len(b0_vals) else float("inf")
    min_identity = float(min(vals.min(), min_b0))

    h = np.full(len(X), float(dt))
    active = np.ones(len(X), dtype=bool)
    history = [float(vals.min())]
    for _ in range(steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        x = X[idx]
        g = en.grad_psi(data, x, check=False)
        gn = np.sqrt(np.sum(g * g, axis=(-1, -2)))
        keep = gn >= cfg.grad_tol
        active[idx[~keep]] = False
        idx, x, g, gn = idx[keep], x[keep], g[keep], gn[keep]
        if idx.size == 0:
            break
        hh = np.minimum(h[idx], max_move / gn)
        trial = s._exp(x, hh[:, None, None] * g)
        tv = _values(data, trial, M)
        ok = tv >= vals[idx] + armijo * hh * gn * gn
        X[idx[ok]] = trial[ok]
        vals[idx[ok]] = tv[ok]
        h[idx] = np.where(ok, np.minimum(2.0 * h[idx], dt), 0.5 * h[idx])
        active[idx[h[idx] < 1e-14 * dt]] = False
        history.append(float(vals.min()))

    k = int(np.argmin(vals))
    inner_min = float(vals[k])
    psi_star = min(inner_min, min_b0)
    witness = X[k] if inner_min <= min_b0 else B0[int(np.argmin(b0_vals))]

    # Lemma 4.1: some deformed sample retracts onto xi0
    deformed = np.concatenate([X, B0]) if len(B0) else X
    resid = np.max(_circular_gap(setup.params_of(deformed), setup.base_params), axis=-1)
    lemma_residual = float(resid.min())
    return MinMaxResult(
        psi_star=float(psi_star),
        witness=en.configuration(data, witness),
        boundary_gap=float(min_b0 - inner_min),
        min_boundary=min_b0,
        min_identity=min_identity,
        lemma_hit=bool(lemma_residual <= 1.0 / cfg.curve_samples),
        lemma_residual=lemma_residual,
        n_samples=int(len(X)),
        n_boundary=int(len(B0)),
        fraction_in_D=fraction,
        history=history,
    )
