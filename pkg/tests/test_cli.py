import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from sll import cli
from sll.config import parse_config

CFG = """\
surface: {type: sphere, grid: [32, 64]}
curvature: {family: cos_polar}
singularities:
  - {at: [0.0, 2.6], alpha: 0.5}
N: 1
search: {multistarts: 4, seed: 3}
verify: {delta_sweep: [0.05, 0.02]}
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(CFG)
    return p


def invoke(*args):
    return CliRunner().invoke(cli.main, [str(a) for a in args])


def test_to_jsonable_non_finite():
    out = cli.to_jsonable({"a": np.inf, "b": [np.nan, -np.inf, np.float32(1.5)], "c": np.bool_(True)})
    assert out == {"a": "inf", "b": ["nan", "-inf", 1.5], "c": True}
    assert json.loads(cli.dumps({"x": np.arange(3)})) == {"x": [0, 1, 2]}


def test_write_atomic(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    cli.write_atomic(target, "one")
    cli.write_atomic(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


def test_analyze(cfg_path, tmp_path):
    r = invoke("analyze", "--config", cfg_path, "--out", tmp_path / "o", "--no-timings")
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    h = rep["results"]["hypotheses"]
    assert h["H1"] and h["n_components"] == 1 and h["contractible"] == [True]
    assert "timings" not in rep and rep["status"] == "ok"
    # echoed config re-parses to an equal RunConfig
    assert parse_config(json.dumps(rep["config"])) == parse_config(CFG)
    assert rep["config_sha256"] == parse_config(CFG).sha256()


def test_landscape_csv(cfg_path, tmp_path):
    r = invoke("landscape", "--config", cfg_path, "--out", tmp_path)
    assert r.exit_code == 0, r.output
    rows = list(csv.reader((tmp_path / "landscape.csv").open()))
    assert rows[0] == ["lon", "colat", "psi", "phi", "A"]
    assert len(rows) == 1 + 32 * 64
    vals = np.array(rows[1:], dtype=float)
    south = vals[:, 1] > np.pi / 2
    assert np.all(np.isnan(vals[south, 2])) and np.all(np.isfinite(vals[~south, 2]))
    assert np.allclose(vals[~south, 2], vals[~south, 3])
    # 17 significant digits round-trip the doubles
    assert all(repr(float(t)) == repr(float("%.17g" % float(t))) for t in rows[1][:3])
    rep = json.loads((tmp_path / "report.json").read_text())
    assert "timings" in rep


def test_landscape_needs_single_point(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(CFG.replace("N: 1", "N: 2"))
    r = invoke("landscape", "--config", p, "--out", tmp_path)
    assert r.exit_code == 1
    assert json.loads((tmp_path / "report.json").read_text())["error"]["code"] == "semantic_error"


def test_search_and_verify(cfg_path, tmp_path):
    r = invoke("verify", "--config", cfg_path, "--out", tmp_path, "--no-timings")
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    cps = rep["results"]["critical_points"]
    assert cps and cps[0]["classification"] == "max"
    sweep = rep["results"]["verification"][0]["sweep"]
    assert [s["delta"] for s in sweep] == [0.05, 0.02]
    rows = list(csv.reader((tmp_path / "critical_points.csv").open()))
    assert rows[0][:2] == ["id", "classification"] and rows[0][-2:] == ["lon0", "colat0"]


def test_seed_and_tol_overrides(cfg_path, tmp_path):
    r = invoke("search", "--config", cfg_path, "--out", tmp_path, "--seed", 9, "--tol", 1e-9, "--no-timings")
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["search"]["seed"] == 9 and rep["config"]["search"]["grad_tol"] == 1e-9


def test_no_result_exit_code(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "find_critical_points", lambda *a, **k: [])
    r = invoke("search", "--config", cfg_path, "--out", tmp_path)
    assert r.exit_code == 2
    assert json.loads((tmp_path / "report.json").read_text())["status"] == "no_result"


def test_config_errors_exit_1(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(CFG.replace("alpha: 0.5", "alpha: -1.5"))
    r = invoke("search", "--config", p, "--out", tmp_path)
    assert r.exit_code == 1
    p.write_text(CFG + "colour: red\n")
    assert invoke("search", "--config", p, "--out", tmp_path).exit_code == 1
    assert invoke("search", "--config", p, "--out", tmp_path, "--lenient").exit_code == 0


def test_minmax_and_classes(tmp_path):
    colat = 2 * math.atan(1 / 3)
    p = tmp_path / "mm.yaml"
    p.write_text(f"""\
surface: {{type: sphere, grid: [32, 64]}}
curvature: cos_polar
singularities:
  - {{at: [0.0, {colat!r}], alpha: 1.5}}
  - {{at: [{math.pi!r}, {colat!r}], alpha: {0.5 - 0.5 / (4 * math.pi)!r}}}
N: 2
minmax: {{curve_samples: 24, steps: 50}}
classes: {{xi_bar: [[0.0, 0.3], [3.0, 0.3]], r: 0.05}}
""")
    r = invoke("minmax", "--config", p, "--out", tmp_path / "m", "--no-timings")
    assert r.exit_code == 0, r.output
    res = json.loads((tmp_path / "m" / "report.json").read_text())["results"]["minmax"]
    assert res["setup"]["info"]["split"] == [2, 0]
    assert res["result"]["positive_gap"]
    r = invoke("classes", "--config", p, "--out", tmp_path / "c", "--no-timings")
    assert r.exit_code == 0, r.output
    cert = json.loads((tmp_path / "c" / "report.json").read_text())["results"]["class_certificate"]
    assert cert["verdict"] in ("pass", "fail", "inconclusive")


def test_classes_without_section(cfg_path, tmp_path):
    assert invoke("classes", "--config", cfg_path, "--out", tmp_path).exit_code == 1
