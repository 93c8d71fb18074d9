"""Acceptance criteria 1-14.

Run under pytest (one test per criterion) or directly with
``python3 tests/test_acceptance.py`` to get one PASS/FAIL line per criterion.
"""

import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from sll import energy as en
from sll import verify as vf
from sll.curvature import constant, cos_polar, from_expression, random_bump, wells
from sll.errors import NoFeasibleSplit
from sll.minmax import approx_minmax, build_retraction
from sll.problem import ProblemData, SingularData, bracket_minus, f_g, greedy_split
from sll.quadrature import composite_rule
from sll.search import SearchConfig, find_critical_points
from sll.surface import FlatTorus, UnitSphere, torus_green_rowsum

FOUR_PI = 4.0 * np.pi
RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def band_limited(surface, rng, L=12):
    c = np.zeros((2, surface.lmax + 1, surface.lmax + 1))
    c[:, : L + 1, : L + 1] = rng.standard_normal((2, L + 1, L + 1)) * np.tril(np.ones((L + 1, L + 1)))
    c[1, :, 0] = 0.0
    return c


# ---------------------------------------------------------------------------
# 1-3: Green's functions
# ---------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    s = UnitSphere(128, 256)
    rng = np.random.default_rng(0)
    P = s.random_points(rng, 4)
    mean_err = 0.0
    c0_err = 0.0
    c0_ref = (2.0 * math.log(2.0) - 1.0) / FOUR_PI
    for p in P:
        rule = composite_rule(s, [p], [0.8])
        mean_err = max(mean_err, abs(rule.integrate(s.green(rule.nodes, p))))
        # zero mean of G forces c0 = (1 / (2 pi |S|)) * int log|x - p|
        chord = np.linalg.norm(rule.nodes - p, axis=-1)
        c0 = rule.integrate(np.log(chord)) / (2.0 * np.pi * s.area)
        c0_err = max(c0_err, abs(c0 - c0_ref))
    X, Y = s.random_points(rng, 200), s.random_points(rng, 200)
    sym = float(np.max(np.abs(s.green(X, Y) - s.green(Y, X))))
    weak = 0.0
    for k in range(20):
        c = band_limited(s, rng)
        p = P[k % len(P)]
        rule = composite_rule(s, [p], [0.8])
        minus_lap = s.evaluate_coeffs(s.eigenvalues() * c, rule.nodes)
        lhs = rule.integrate(s.green(rule.nodes, p) * minus_lap)
        rhs = s.evaluate_coeffs(c, p) - s.integrate(s.synthesize(c)) / s.area
        weak = max(weak, abs(float(lhs - rhs)))
    dt = time.perf_counter() - t0
    ok = mean_err < 1e-7 and sym < 1e-10 and weak < 1e-6 and c0_err < 1e-8 and dt < 10
    return report(1, ok, f"|int G|={mean_err:.1e} sym={sym:.1e} weak={weak:.1e} "
                         f"c0 err={c0_err:.1e} time={dt:.1f}s")


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    err = 0.0
    for a, b in ((1.0, 1.0), (1.0, 1.7)):
        s = FlatTorus(a, b, 32, 32)
        X, Y = s.random_points(rng, 25), s.random_points(rng, 25)
        err = max(err, float(np.max(np.abs(s.green(X, Y) - torus_green_rowsum(s, X, Y, rows=50)))))
    dt = time.perf_counter() - t0
    return report(2, err < 1e-10 and dt < 30, f"max |Ewald - lattice rows| = {err:.1e} at 50 pairs, "
                                              f"time={dt:.1f}s")


def criterion_3():
    worst = 0.0
    for s in (UnitSphere(64, 128), FlatTorus(1.0, 1.3, 64, 64)):
        data = ProblemData(s, constant(s, 1.0), SingularData.empty(s), 1)
        worst = max(worst, float(np.max(np.abs(f_g(data).values))))
    return report(3, worst < 1e-12, f"max |f_g| = {worst:.1e}")


# ---------------------------------------------------------------------------
# 4-8: reduced functionals
# ---------------------------------------------------------------------------


def _identity_problem(surface):
    rng = np.random.default_rng(2)
    if surface.kind == "sphere":
        K = from_expression(surface, "1.5 + 0.5*z + 0.3*x*y")
        pts = surface.from_chart(np.array([[0.3, 1.0], [2.0, 2.2]]))
    else:
        K = from_expression(surface, "1.5 + cos(2*pi*x) + 0.3*sin(2*pi*y)")
        pts = np.array([[0.2, 0.3], [0.7, 0.8]])
    return ProblemData(surface, K, SingularData.build(surface, pts, [0.7, -0.4]), 3), rng


def criterion_4():
    worst = 0.0
    for s in (UnitSphere(32, 64), FlatTorus(1.0, 1.0, 32, 32)):
        data, rng = _identity_problem(s)
        for _ in range(100):
            xi = s.random_points(rng, 3)
            ps, ph = float(en.psi(data, xi, False)), float(en.phi(data, xi, False))
            pair = sum(float(s.green(xi[j], xi[k])) for j in range(3) for k in range(3) if j != k)
            r1 = abs((ps - ph) - 2.0 * pair) / max(abs(ps - ph), 1.0)
            rhs = float(en.d_s(data, xi, data.alpha, check=False)) + np.sum(np.log(data.K(xi))) / FOUR_PI
            r2 = abs(ps - rhs) / max(abs(ps), 1.0)
            worst = max(worst, r1, r2)
    return report(4, worst < 1e-12, f"max relative identity error = {worst:.1e} (200 configurations)")


def criterion_5():
    worst_g, worst_h = 0.0, 0.0
    h = 1e-5
    for s in (UnitSphere(32, 64), FlatTorus(1.0, 1.0, 32, 32)):
        data, rng = _identity_problem(s)
        for _ in range(25):
            xi = s.random_points(rng, 3)
            while not en.domain_flags(data, xi).in_M_plus:
                xi = s.random_points(rng, 3)
            g = en.grad_psi(data, xi)
            e = en.frames(s, xi)
            fd = np.zeros((3, 2))
            an = np.zeros((3, 2))
            for j in range(3):
                for b in range(2):
                    p, m = xi.copy(), xi.copy()
                    p[j] = s._exp(xi[j], h * e[j, b])
                    m[j] = s._exp(xi[j], -h * e[j, b])
                    fd[j, b] = (en.psi(data, p) - en.psi(data, m)) / (2 * h)
                    an[j, b] = g[j] @ e[j, b]
            worst_g = max(worst_g, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1.0))
            ev1 = np.linalg.eigvalsh(en.hessian(data, xi))
            ev2 = np.linalg.eigvalsh(en.hessian(data, xi, rotations=rng.uniform(0, 2 * np.pi, 3)))
            worst_h = max(worst_h, float(np.max(np.abs(ev1 - ev2))))
    ok = worst_g < 1e-6 and worst_h < 1e-8
    return report(5, ok, f"gradient rel err={worst_g:.1e}, Hessian frame spread={worst_h:.1e} (50 configs)")


def _collapse(s, base, t, path):
    """Configuration at collision parameter d = 10^-t along one of three paths."""
    xi = base.copy()
    d = 10.0 ** (-t)
    e = s.tangent_frame(base[0])
    if path == "pair":
        xi[1] = s._exp(base[0], d * e[0])
    elif path == "two pairs":
        xi[1] = s._exp(base[0], d * e[0])
        f = s.tangent_frame(base[2])
        xi[3] = s._exp(base[2], d * f[0])
    else:  # three points shrinking onto base[0]
        xi[1] = s._exp(base[0], d * e[0])
        xi[2] = s._exp(base[0], d * (0.5 * e[0] + math.sqrt(0.75) * e[1]))
    return xi


def criterion_6():
    s = UnitSphere(32, 64)
    data = ProblemData(s, from_expression(s, "2 + z"), SingularData.empty(s), 4)
    base = s.from_chart(np.array([[0.0, 1.0], [2.0, 1.5], [4.0, 2.0], [1.0, 2.6]]))
    ts = np.linspace(1.0, 4.0, 13)
    per_pair = np.log(10.0) / np.pi
    errs = []
    for path, pairs in (("pair", 1), ("two pairs", 2), ("triple", 3)):
        vals = [float(en.psi(data, _collapse(s, base, t, path))) for t in ts]
        fit = np.polyfit(ts, vals, 1)[0]
        errs.append(abs(fit / (pairs * per_pair) - 1.0))
    return report(6, max(errs) < 0.05, "relative slope error per path (1, 2, 3 pairs): "
                                       + ", ".join(f"{e:.1e}" for e in errs))


def criterion_7():
    t0 = time.perf_counter()
    s = UnitSphere(64, 128)
    K = cos_polar(s)
    N = 2
    beta = 2.0
    alpha = 0.5
    data = ProblemData(s, K, SingularData.build(s, [[0.0, 0.0, -1.0]], [alpha]), N)
    rng = np.random.default_rng(7)
    # sampled sup of Lap log K over Sigma+
    probe = s.random_points(rng, 20000)
    probe = probe[K(probe) > 1e-3]
    sup_lap = float(np.max(K.laplacian_log(probe)))
    chi = s.euler_char + alpha
    hyp = sup_lap <= -beta and chi > 2 * N - beta * s.area / FOUR_PI
    xs = []
    while len(xs) < 1000:
        xi = s.random_points(rng, N)
        if np.all(K(xi) > 0) and en.domain_flags(data, xi).in_M_plus:
            xs.append(xi)
    vals = en.a_fun(data, np.stack(xs), check=False)
    margin = float(np.max(vals))
    dt = time.perf_counter() - t0
    ok = hyp and margin < 0 and dt < 20
    return report(7, ok, f"sup Lap log K={sup_lap:.3f} <= -{beta:g}, chi={chi:g}, "
                         f"max A over 1000 configs={margin:.3e}, time={dt:.1f}s")


def two_component_problem():
    s = UnitSphere(64, 128)
    K = from_expression(s, "z**2 - 1/4 + 0.05*x")
    return ProblemData(s, K, SingularData.empty(s), 2)


_C8 = {}


def criterion_8_points():
    if "reports" not in _C8:
        data = two_component_problem()
        reps = find_critical_points(data, SearchConfig(multistarts=8, seed=0), "max")
        _C8["data"], _C8["reports"] = data, reps
    return _C8["data"], _C8["reports"]


def _one_per_component(xi):
    z = xi[:, 2]
    return bool(np.all(np.abs(z) > 0.5) and z.min() < 0 < z.max())


def criterion_8():
    data, reps = criterion_8_points()
    good = [r for r in reps if r.classification == "max" and _one_per_component(r.config)
            and r.grad_norm < 1e-8 and np.all(r.hessian_spectrum < -1e-6)]
    if not good:
        return report(8, False, f"no split local maximum among {len(reps)} critical points")
    r = good[0]
    return report(8, True, f"local max, |grad|={r.grad_norm:.1e}, "
                           f"max eigenvalue={np.max(r.hessian_spectrum):.3e}, z={r.config[:, 2].round(3)}")


# ---------------------------------------------------------------------------
# 9-10: min-max
# ---------------------------------------------------------------------------


def minmax_fixture():
    s = UnitSphere(64, 128)
    colat = 2.0 * math.atan(1.0 / 3.0)
    pts = s.from_chart(np.array([[0.0, colat], [np.pi, colat]]))
    return ProblemData(s, cos_polar(s), SingularData.build(s, pts, [1.5, 0.5 - 0.5 / FOUR_PI]), 2)


def criterion_9():
    data = minmax_fixture()
    out = {}
    for M in (50.0, 100.0, 200.0):
        setup = build_retraction(data, "ContractibleCircles", M)
        res = approx_minmax(data, setup, SearchConfig(M=M, curve_samples=48), steps=300)
        out[M] = res
    stars = [out[M].psi_star for M in out]
    b0 = [out[M].min_boundary for M in out]
    gap = min(b - p for b, p in zip(b0, stars))
    spread = max(stars) - min(stars)
    expect = math.log(2.0) / math.pi
    incr = np.diff(b0)
    rel = float(np.max(np.abs(incr - expect)) / expect)
    ok = gap > 0 and spread < 0.1 * gap and rel < 0.15
    return report(9, ok, f"psi* spread={spread:.2e} vs gap={gap:.3f}; min over B0 increments "
                         f"{incr.round(4)} vs (1/pi)log 2={expect:.4f} (rel {rel:.1e})")


def _brute_force_feasible(N, orders):
    # N_i - 1 < alpha_i is the integer form of N_i <= 1 + [alpha_i]^-
    for split in itertools.product(range(N + 1), repeat=len(orders)):
        if sum(split) == N and all(n - 1 < a for n, a in zip(split, orders)):
            return True
    return False


def criterion_10():
    s = UnitSphere(32, 64)
    data = ProblemData(s, cos_polar(s), SingularData.build(s, [[0.0, 0.0, 1.0]], [0.5]), 2)
    try:
        build_retraction(data, "ContractibleCircles")
        raised, msg = False, "no error"
    except NoFeasibleSplit as exc:
        raised, msg = True, str(exc)
    # ell + sum [alpha_i]^- = 1 + 0 = 1 < N = 2
    arithmetic = 1 + bracket_minus(0.5) == 1 and "1" in msg
    rng = np.random.default_rng(10)
    mismatches = 0
    cases = 0
    for N in range(1, 7):
        for ell in range(1, 7):
            for _ in range(20):
                orders = list(rng.choice([-0.5, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.7], size=ell))
                split = greedy_split(N, orders)
                ok_split = split is not None and sum(split) == N and all(
                    n <= 1 + bracket_minus(a) for n, a in zip(split, orders))
                mismatches += (split is not None) != _brute_force_feasible(N, orders)
                mismatches += split is not None and not ok_split
                cases += 1
    ok = raised and arithmetic and mismatches == 0
    return report(10, ok, f"NoFeasibleSplit raised ({msg!r}); greedy vs brute force: "
                          f"{mismatches} mismatches in {cases} cases")


# ---------------------------------------------------------------------------
# 11-13
# ---------------------------------------------------------------------------


def criterion_11():
    t0 = time.perf_counter()
    s = UnitSphere(128, 256)
    data = ProblemData(s, constant(s, 1.0), SingularData.empty(s), 1)
    rng = np.random.default_rng(11)
    ans, w = vf.manufactured_problem(s, 8 * np.pi, rng, amplitude=0.1)
    man = vf.pde_residual(data, ans, 8 * np.pi, weight=w).l2_residual
    xi = np.array([[0.0, 0.0, 1.0]])
    masses, _ = vf.concentration_measure(data, vf.assemble_bubble(data, xi, 1e-3), 8 * np.pi, 0.3)
    mass_err = abs(masses[0] / (8 * np.pi) - 1.0)
    gaps = []
    for n in (64, 128):
        sn = UnitSphere(n, 2 * n)
        dn = ProblemData(sn, from_expression(sn, "1 + 0.3*z"),
                         SingularData.build(sn, [[0.0, 0.0, 1.0]], [0.5]), 1)
        an = vf.assemble_bubble(dn, np.array([[0.0, 0.0, -1.0]]), 0.2)
        gaps.append(vf.gauss_bonnet_check(dn, an, rule="grid"))
    dt = time.perf_counter() - t0
    ok = man < 1e-8 and mass_err < 0.02 and gaps[1] <= 0.5 * gaps[0] and dt < 60
    return report(11, ok, f"manufactured residual={man:.1e}, bubble mass error={mass_err:.1e}, "
                          f"Gauss-Bonnet gap {gaps[0]:.1e} -> {gaps[1]:.1e}, time={dt:.1f}s")


def criterion_12():
    t0 = time.perf_counter()
    s = UnitSphere(64, 128)
    N = 2
    centers = s.from_chart(np.array([[0.0, 0.6], [3.14159, 2.5]]))
    data = ProblemData(s, wells(s, 1.0, centers, 1.0, 10.0), SingularData.empty(s), N)
    cert = en.class_membership(data, centers, 0.1, -0.5, 2.0 * N, sign="+")
    margins = (cert.positivity_margin, cert.gap_margin, cert.laplacian_margin)
    control = ProblemData(s, constant(s, 1.0), SingularData.empty(s), N)
    cc = en.class_membership(control, centers, 0.1, -0.5, 2.0 * N, sign="+")
    dt = time.perf_counter() - t0
    ok = cert.verdict == "pass" and min(margins) > 0 and cc.gap_margin < 0 and dt < 120
    return report(12, ok, f"wells: {cert.verdict}, margins={np.round(margins, 4).tolist()}; "
                          f"constant K gap margin={cc.gap_margin:.3e} ({cc.verdict}), time={dt:.1f}s")


def _matched_move(surface, a, b):
    """Largest point displacement under the best matching (configurations are unordered)."""
    D = surface.distance(a[:, None, :], b[None, :, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max())


def criterion_13():
    data, reps = criterion_8_points()
    stable = [r for r in reps if r.stable]
    rng = np.random.default_rng(13)
    worst = 0.0
    same = True
    for _ in range(10):
        Kp = data.K.perturbed(random_bump(data.surface, rng), 1e-6)
        dp = data.with_curvature(Kp)
        for r in stable:
            new = find_critical_points(dp, SearchConfig(multistarts=1), "any", starts=[r.config])
            if not new:
                same = False
                continue
            move = _matched_move(data.surface, new[0].config, r.config)
            worst = max(worst, move)
            same &= new[0].classification == r.classification
    ok = bool(stable) and same and worst < 1e-3
    return report(13, ok, f"{len(stable)} stable points, max displacement={worst:.1e} "
                          f"over 10 bumps, classification kept={same}")


def criterion_14(tmp=None):
    import tempfile

    tmp = Path(tmp or tempfile.mkdtemp())
    cfg = tmp / "run.yaml"
    cfg.write_text(
        "surface: {type: sphere, grid: [64, 128]}\n"
        "curvature: {family: cos_polar}\n"
        "singularities:\n  - {at: [0.0, 2.6], alpha: 0.5}\n"
        "N: 1\n"
        "search: {multistarts: 4, seed: 5}\n"
        "verify: {delta_sweep: [0.05, 0.02]}\n")
    outs = []
    for k in range(2):
        blobs = []
        for cmd in ("search", "verify"):
            d = tmp / f"{cmd}{k}"
            proc = subprocess.run([sys.executable, "-m", "sll.cli", cmd, "--config", str(cfg),
                                   "--out", str(d), "--no-timings"], capture_output=True, text=True)
            if proc.returncode != 0:
                return report(14, False, f"{cmd} exited {proc.returncode}: {proc.stderr.strip()}")
            blobs.append((d / "report.json").read_bytes() + (d / "critical_points.csv").read_bytes())
        outs.append(blobs)
    ok = outs[0] == outs[1]
    masses = json.loads((tmp / "verify0" / "report.json").read_text())
    sweep = masses["results"]["verification"][0].get("sweep", [])
    total = [round(x["total_mass"] / (8 * np.pi), 6) for x in sweep]
    return report(14, ok, f"two runs byte-identical={ok}; verify masses / 8 pi = {total}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12,
            criterion_13, criterion_14]


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{k}" for k in range(1, 15)])
def test_criterion(crit, tmp_path):
    n = CRITERIA.index(crit) + 1
    try:
        ok = crit(tmp_path) if crit is criterion_14 else crit()
    except Exception as exc:
        report(n, False, f"raised {type(exc).__name__}: {exc}")
        raise
    assert ok, RESULTS[n]


if __name__ == "__main__":
    failed = 0
    for crit in CRITERIA:
        try:
            failed += not crit()
        except Exception as exc:  # report and continue
            n = CRITERIA.index(crit) + 1
            report(n, False, f"raised {type(exc).__name__}: {exc}")
            failed += 1
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
    sys.exit(1 if failed else 0)
