"""Command line entry point: ``sll <command> --config PATH``."""

import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import click
import numpy as np

from . import energy as en
from . import minmax as mm
from . import verify as vf
from .config import build_problem, config_from_dict, parse_config
from .errors import ConfigError, SemanticError, SLLError
from .problem import hypotheses
from .search import find_critical_points
from .surface import make_surface

COMMANDS = ("analyze", "landscape", "search", "minmax", "verify", "classes")
EXIT_OK, EXIT_ERROR, EXIT_NO_RESULT = 0, 1, 2


class NoResult(Exception):
    """A pipeline finished but found nothing to report (exit status 2)."""


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(report):
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(v):
    return "%.17g" % v


def _coord_names(surface):
    return ("lon", "colat") if surface.kind == "sphere" else ("x", "y")


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def _mesh(surface):
    return mm._mesh(surface)


def run_analyze(cfg, data, files):
    rep = hypotheses(data, grid=_mesh(data.surface))
    return {"hypotheses": rep.to_dict()}


def landscape_table(cfg, data):
    """Chart coordinates and (Psi, Phi, A) at every grid node; nan off M+."""
    if data.N != 1:
        raise SemanticError("the landscape export needs N = 1", "N")
    s = data.surface
    if cfg.landscape["shape"] is not None:
        periods = cfg.surface["periods"]
        nodes_surface = make_surface(s.kind, periods=tuple(periods) if periods else None,
                                     quadrature=tuple(cfg.landscape["shape"]))
    else:
        nodes_surface = s
    x = nodes_surface.nodes.reshape(-1, s.dim)
    chart = s.to_chart(x)
    xi = x[:, None, :]
    ok = data.K(x) > 0
    if data.sing.m:
        ok &= np.min(en.source_distances(data, xi), axis=(-2, -1)) > 0
    out = np.full((len(x), 3), np.nan)
    if ok.any():
        sub = xi[ok]
        out[ok, 0] = en.psi(data, sub, check=False)
        out[ok, 1] = en.phi(data, sub, check=False)
        out[ok, 2] = en.a_fun(data, sub, check=False)
    return chart, out, ok


def run_landscape(cfg, data, files):
    chart, vals, ok = landscape_table(cfg, data)
    a, b = _coord_names(data.surface)
    buf = io.StringIO()
    buf.write(f"{a},{b},psi,phi,A\n")
    for c, v in zip(chart, vals):
        buf.write(",".join(_g(t) for t in (*c, *v)) + "\n")
    files["landscape.csv"] = buf.getvalue()
    good = vals[ok]
    summary = {"nodes": int(len(chart)), "nodes_in_M_plus": int(ok.sum()), "columns": [a, b, "psi", "phi", "A"]}
    if len(good):
        i = int(np.argmin(good[:, 0]))
        summary.update(psi_min=good[i, 0], psi_argmin=chart[ok][i].tolist(),
                       psi_max=float(good[:, 0].max()), A_min=float(good[:, 2].min()),
                       A_max=float(good[:, 2].max()))
    return {"landscape": summary}


def _critical_points(cfg, data):
    reports = find_critical_points(data, cfg.search_config(), mode=cfg.search["mode"])
    return reports


def critical_points_csv(surface, reports, N):
    a, b = _coord_names(surface)
    head = ["id", "classification", "index", "stable", "value", "grad_norm", "a_sign", "a_value"]
    head += [f"{c}{j}" for j in range(N) for c in (a, b)]
    buf = io.StringIO()
    buf.write(",".join(head) + "\n")
    for k, r in enumerate(reports):
        row = [str(k), r.classification, str(r.index), str(bool(r.stable)).lower(),
               _g(r.value), _g(r.grad_norm), r.a_sign, _g(r.a_value)]
        row += [_g(t) for t in np.asarray(surface.to_chart(r.config)).ravel()]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def run_search(cfg, data, files):
    reports = _critical_points(cfg, data)
    files["critical_points.csv"] = critical_points_csv(data.surface, reports, data.N)
    out = {"critical_points": [r.to_dict(data.surface) for r in reports]}
    if not reports:
        raise NoResult(out)
    return out


def run_minmax(cfg, data, files):
    setup = mm.build_retraction(data, cfg.minmax["case"], M=cfg.minmax["M"])
    res = mm.approx_minmax(data, setup, cfg.minmax_config())
    return {"minmax": {"setup": setup.to_dict(), "result": res.to_dict(data.surface)}}


def run_verify(cfg, data, files):
    reports = _critical_points(cfg, data)
    files["critical_points.csv"] = critical_points_csv(data.surface, reports, data.N)
    out = {"critical_points": [r.to_dict(data.surface) for r in reports], "verification": []}
    if not reports:
        raise NoResult(out)
    v = cfg.verify
    for k, r in enumerate(reports):
        entry = {"critical_point": k}
        try:
            sweep = vf.verify_point(data, r.config, deltas=v["delta_sweep"], r=v["ball_radius"],
                                    balance=v["balance"])
            entry["sweep"] = [rep.to_dict() for rep in sweep]
        except SLLError as exc:
            entry["error"] = {"code": exc.code, "message": str(exc)}
        out["verification"].append(entry)
    return out


def run_classes(cfg, data, files):
    c = cfg.classes
    if c is None:
        raise SemanticError("the classes command needs a 'classes' section", "classes")
    xibar = data.surface.from_chart(np.asarray(c["xi_bar"], dtype=float))
    cert = en.class_membership(data, xibar, c["r"], c["alpha_star"], c["alpha_sup"],
                               sign=c["sign"], seed=cfg.search["seed"])
    return {"class_certificate": cert.to_dict()}


PIPELINES = {
    "analyze": run_analyze,
    "landscape": run_landscape,
    "search": run_search,
    "minmax": run_minmax,
    "verify": run_verify,
    "classes": run_classes,
}


def run(command, cfg, timings=True):
    """Execute ``command``; returns (status, report dict, {filename: text})."""
    files = {}
    report = {"command": command, "config": cfg.to_dict(), "config_sha256": cfg.sha256(),
              "warnings": list(cfg.warnings)}
    clock = {}
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        data = build_problem(cfg)
        clock["setup"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        report["results"] = PIPELINES[command](cfg, data, files)
        clock["run"] = time.perf_counter() - t1
    except NoResult as exc:
        report["results"] = exc.args[0]
        report["status"] = "no_result"
        status = EXIT_NO_RESULT
    except SLLError as exc:
        report["error"] = {"code": exc.code, "message": str(exc)}
        report["status"] = "error"
        status = EXIT_ERROR
    else:
        report["status"] = "ok"
    if timings:
        clock["total"] = time.perf_counter() - t0
        report["timings"] = clock
    return status, report, files


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------


def load_config(path, seed=None, tol=None, lenient=False):
    text = Path(path).read_text(encoding="utf-8")
    cfg = parse_config(text, lenient=lenient)
    if seed is None and tol is None:
        return cfg
    doc = cfg.to_dict()
    if seed is not None:
        doc["search"]["seed"] = int(seed)
    if tol is not None:
        doc["search"]["grad_tol"] = float(tol)
    out = config_from_dict(doc)
    out.warnings = cfg.warnings
    return out


def _execute(command, config, out, seed, tol, lenient, no_timings):
    try:
        cfg = load_config(config, seed, tol, lenient)
    except ConfigError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    out_dir = Path(out) if out is not None else Path(cfg.output["path"])
    status, report, files = run(command, cfg, timings=not no_timings)
    for name, text in sorted(files.items()):
        write_atomic(out_dir / name, text)
    write_atomic(out_dir / "report.json", dumps(report))
    if status == EXIT_ERROR:
        err = report["error"]
        click.echo(f"error [{err['code']}]: {err['message']}", err=True)
    elif status == EXIT_NO_RESULT:
        click.echo("no result", err=True)
    else:
        click.echo(str(out_dir / "report.json"))
    sys.exit(status)


def _options(f):
    f = click.option("--no-timings", is_flag=True, help="Omit timings (byte-stable reports).")(f)
    f = click.option("--lenient", is_flag=True, help="Warn on unknown keys instead of failing.")(f)
    f = click.option("--tol", type=float, default=None, help="Override search.grad_tol.")(f)
    f = click.option("--seed", type=int, default=None, help="Override search.seed.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (default: output.path).")(f)
    f = click.option("--config", "config", required=True,
                     type=click.Path(exists=True, dir_okay=False), help="JSON or YAML config.")(f)
    return f


@click.group()
def main():
    """Reduced energies and critical configurations for singular Liouville problems."""


def _command(name, doc):
    @_options
    def cmd(config, out, seed, tol, lenient, no_timings):
        _execute(name, config, out, seed, tol, lenient, no_timings)

    cmd.__doc__ = doc
    return main.command(name)(cmd)


_command("analyze", "Check the hypotheses and theorem preconditions.")
_command("landscape", "Export Psi, Phi and A on the grid (N = 1).")
_command("search", "Multistart search for critical configurations.")
_command("minmax", "Min-max level over the retraction class.")
_command("verify", "Search, then build bubble ansatzes at each critical point.")
_command("classes", "Convex/concave class certificate around xi_bar.")


if __name__ == "__main__":
    main()
