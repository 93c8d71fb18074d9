"""Run configuration: strict parsing, defaults and problem construction.

Configs are JSON or YAML documents.  Chart coordinates are (longitude,
colatitude) in radians on the sphere and fundamental-domain (x, y) on the
torus.  Unknown keys are errors, or warnings in lenient mode; every
diagnostic names the offending key path and, when the document allows it,
the line.
"""

import copy
import hashlib
import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .curvature import constant, cos_polar, from_expression, gaussians, wells
from .errors import ConfigError, InvalidData, OnNodalLine, ParseError, SemanticError
from .minmax import CASES
from .problem import ProblemData, SingularData
from .search import SearchConfig
from .surface import make_surface

class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-9)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))

FAMILIES = ("constant", "cos_polar", "gaussians", "wells", "expression")
SEARCH_MODES = ("min", "max", "any")

DEFAULTS = {
    "surface": {"type": "sphere", "periods": None, "grid": None},
    "curvature": {"family": "cos_polar", "parameters": {}, "expression": None},
    "singularities": [],
    "N": 1,
    "search": dict(asdict(SearchConfig()), mode="any"),
    "minmax": {"case": "ContractibleCircles", "M": 100.0, "curve_samples": 48, "steps": 300},
    "verify": {"delta_sweep": [0.05, 0.02, 0.01], "ball_radius": None, "balance": False},
    "classes": None,
    "landscape": {"shape": None},
    "output": {"path": "out", "format": "json"},
}
CLASS_DEFAULTS = {"xi_bar": None, "r": None, "alpha_star": None, "alpha_sup": None, "sign": "+"}
FAMILY_PARAMS = {
    "constant": {"value"},
    "cos_polar": {"shift"},
    "gaussians": {"base", "terms"},
    "wells": {"scale", "centers", "depth", "width"},
    "expression": set(),
}
TERM_KEYS = {"center", "amplitude", "width", "sign"}
SING_KEYS = {"at", "alpha"}


@dataclass
class RunConfig:
    surface: dict
    curvature: dict
    singularities: list
    N: int
    search: dict
    minmax: dict
    verify: dict
    classes: dict
    landscape: dict
    output: dict
    warnings: list = field(default_factory=list, compare=False, repr=False)

    def to_dict(self):
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)
                if f.name != "warnings"}

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def search_config(self):
        kw = {k: v for k, v in self.search.items() if k != "mode"}
        return SearchConfig(**kw)

    def minmax_config(self):
        """Search settings with the min-max overrides (M, samples, steps)."""
        kw = {k: v for k, v in self.search.items() if k != "mode"}
        kw.update(M=self.minmax["M"], curve_samples=self.minmax["curve_samples"],
                  max_iters=self.minmax["steps"])
        return SearchConfig(**kw)


# ---------------------------------------------------------------------------
# document loading
# ---------------------------------------------------------------------------


def _load(text):
    # YAML 1.1 would read a JSON 1e-08 as a string, so try strict JSON first
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        try:
            doc = yaml.load(text, Loader=_Loader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}" if mark is not None else None
            raise ParseError(f"malformed document: {getattr(exc, 'problem', exc)}", where) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be a mapping")
    return doc


def _line_of(text, path):
    """Line of the node at ``path`` (a tuple of keys and indices), if found."""
    try:
        node = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError:
        return None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = k if key == path[-1] else v
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return None
        if node is None:
            return None
    return node.start_mark.line + 1


class _Ctx:
    def __init__(self, text, lenient):
        self.text = text
        self.lenient = lenient
        self.warnings = []

    def where(self, path):
        name = ".".join(str(p) if not isinstance(p, int) else f"[{p}]" for p in path).replace(".[", "[")
        line = _line_of(self.text, path) if self.text else None
        return f"{name} (line {line})" if line else name

    def parse_error(self, msg, path):
        return ParseError(msg, self.where(path))

    def semantic(self, msg, path):
        return SemanticError(msg, self.where(path))

    def unknown(self, keys, path):
        for k in sorted(map(str, keys)):
            msg = f"unknown key {k!r}"
            if not self.lenient:
                raise self.parse_error(msg, path + (k,))
            where = self.where(path + (k,))
            self.warnings.append(f"{where}: {msg}")
            warnings.warn(f"{where}: {msg}", stacklevel=3)


# ---------------------------------------------------------------------------
# typed field readers
# ---------------------------------------------------------------------------


def _real(ctx, v, path, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ctx.parse_error(f"expected a number, got {type(v).__name__}", path)
    v = float(v)
    if not math.isfinite(v):
        raise ctx.semantic("value must be finite", path)
    return v


def _int(ctx, v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ctx.parse_error(f"expected an integer, got {v!r}", path)
    return int(v)


def _vector(ctx, v, path, n=None):
    if not isinstance(v, (list, tuple)):
        raise ctx.parse_error("expected a list of numbers", path)
    out = [_real(ctx, x, path + (i,)) for i, x in enumerate(v)]
    if n is not None and len(out) != n:
        raise ctx.semantic(f"expected {n} coordinates, got {len(out)}", path)
    return out


SHORTHAND = {"surface": "type", "curvature": "family"}


def _section(ctx, doc, name, defaults):
    raw = doc.get(name)
    if isinstance(raw, str) and name in SHORTHAND:
        raw = {SHORTHAND[name]: raw}
    if raw is None:
        return copy.deepcopy(defaults)
    if not isinstance(raw, dict):
        raise ctx.parse_error("expected a mapping", (name,))
    extra = set(raw) - set(defaults)
    if extra:
        ctx.unknown(extra, (name,))
    out = copy.deepcopy(defaults)
    out.update({k: v for k, v in raw.items() if k in defaults})
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_config(text, lenient=False):
    """Parse and validate a JSON/YAML document into a :class:`RunConfig`."""
    ctx = _Ctx(text, lenient)
    doc = _load(text)
    return _from_doc(ctx, doc)


def config_from_dict(doc, lenient=False):
    return _from_doc(_Ctx(None, lenient), copy.deepcopy(doc))


def _from_doc(ctx, doc):
    extra = set(doc) - set(DEFAULTS)
    if extra:
        ctx.unknown(extra, ())

    surface = _section(ctx, doc, "surface", DEFAULTS["surface"])
    if surface["type"] not in ("sphere", "torus"):
        raise ctx.semantic("surface type must be 'sphere' or 'torus'", ("surface", "type"))
    if surface["type"] == "torus":
        periods = surface["periods"] if surface["periods"] is not None else [1.0, 1.0]
        surface["periods"] = _vector(ctx, periods, ("surface", "periods"), 2)
        if min(surface["periods"]) <= 0:
            raise ctx.semantic("periods must be positive", ("surface", "periods"))
    elif surface["periods"] is not None:
        raise ctx.semantic("periods apply to the torus only", ("surface", "periods"))
    if surface["grid"] is not None:
        g = surface["grid"]
        if not isinstance(g, (list, tuple)) or len(g) != 2:
            raise ctx.parse_error("grid must be [n1, n2]", ("surface", "grid"))
        surface["grid"] = [_int(ctx, x, ("surface", "grid", i)) for i, x in enumerate(g)]
        if min(surface["grid"]) < 8:
            raise ctx.semantic("grid sizes must be at least 8", ("surface", "grid"))

    curv = _section(ctx, doc, "curvature", DEFAULTS["curvature"])
    fam = curv["family"]
    if fam not in FAMILIES:
        raise ctx.semantic(f"unknown curvature family {fam!r}; expected one of {FAMILIES}",
                           ("curvature", "family"))
    params = curv["parameters"] or {}
    if not isinstance(params, dict):
        raise ctx.parse_error("expected a mapping", ("curvature", "parameters"))
    extra = set(params) - FAMILY_PARAMS[fam]
    if extra:
        ctx.unknown(extra, ("curvature", "parameters"))
        params = {k: v for k, v in params.items() if k in FAMILY_PARAMS[fam]}
    curv["parameters"] = _family_params(ctx, fam, params)
    if fam == "expression":
        if not isinstance(curv["expression"], str) or not curv["expression"].strip():
            raise ctx.semantic("family 'expression' needs an expression string",
                               ("curvature", "expression"))
    elif curv["expression"] is not None:
        raise ctx.semantic("an expression is only used with family 'expression'",
                           ("curvature", "expression"))

    sings = doc.get("singularities") or []
    if not isinstance(sings, list):
        raise ctx.parse_error("expected a list", ("singularities",))
    singularities = []
    for i, item in enumerate(sings):
        path = ("singularities", i)
        if not isinstance(item, dict):
            raise ctx.parse_error("expected a mapping with 'at' and 'alpha'", path)
        extra = set(item) - SING_KEYS
        if extra:
            ctx.unknown(extra, path)
        if "at" not in item or "alpha" not in item:
            raise ctx.parse_error("needs both 'at' and 'alpha'", path)
        at = _vector(ctx, item["at"], path + ("at",), 2)
        alpha = _real(ctx, item["alpha"], path + ("alpha",))
        if alpha <= -1:
            raise ctx.semantic(f"conical order alpha = {alpha:g} violates alpha > -1",
                               path + ("alpha",))
        if alpha == 0:
            raise ctx.semantic("conical order must be nonzero", path + ("alpha",))
        singularities.append({"at": at, "alpha": alpha})

    N = _int(ctx, doc.get("N", DEFAULTS["N"]), ("N",))
    if N < 1:
        raise ctx.semantic("N must be a positive integer", ("N",))

    search = _section(ctx, doc, "search", DEFAULTS["search"])
    for k in ("multistarts", "max_iters", "seed", "curve_samples"):
        search[k] = _int(ctx, search[k], ("search", k))
    for k in ("grad_tol", "radius0", "radius_max", "M", "tau", "dedup_tol"):
        search[k] = _real(ctx, search[k], ("search", k))
    if search["mode"] not in SEARCH_MODES:
        raise ctx.semantic(f"mode must be one of {SEARCH_MODES}", ("search", "mode"))
    for k in ("grad_tol", "M", "radius0", "radius_max", "tau", "dedup_tol"):
        if search[k] <= 0:
            raise ctx.semantic(f"{k} must be positive", ("search", k))
    if search["multistarts"] < 1:
        raise ctx.semantic("multistarts must be at least 1", ("search", "multistarts"))

    minmax = _section(ctx, doc, "minmax", DEFAULTS["minmax"])
    if minmax["case"] not in CASES:
        raise ctx.semantic(f"case must be one of {CASES}", ("minmax", "case"))
    minmax["M"] = _real(ctx, minmax["M"], ("minmax", "M"))
    if minmax["M"] <= 0:
        raise ctx.semantic("M must be positive", ("minmax", "M"))
    minmax["curve_samples"] = _int(ctx, minmax["curve_samples"], ("minmax", "curve_samples"))
    minmax["steps"] = _int(ctx, minmax["steps"], ("minmax", "steps"))
    if minmax["curve_samples"] < 4 or minmax["steps"] < 0:
        raise ctx.semantic("curve_samples must be >= 4 and steps >= 0", ("minmax",))

    verify = _section(ctx, doc, "verify", DEFAULTS["verify"])
    verify["delta_sweep"] = _vector(ctx, verify["delta_sweep"], ("verify", "delta_sweep"))
    if not verify["delta_sweep"] or min(verify["delta_sweep"]) <= 0:
        raise ctx.semantic("delta_sweep needs positive scales", ("verify", "delta_sweep"))
    verify["ball_radius"] = _real(ctx, verify["ball_radius"], ("verify", "ball_radius"), True)
    if not isinstance(verify["balance"], bool):
        raise ctx.parse_error("expected true or false", ("verify", "balance"))

    classes = None
    if doc.get("classes") is not None:
        classes = _section(ctx, doc, "classes", CLASS_DEFAULTS)
        if classes["xi_bar"] is None or classes["r"] is None:
            raise ctx.semantic("classes needs xi_bar and r", ("classes",))
        if not isinstance(classes["xi_bar"], list):
            raise ctx.parse_error("expected a list of chart points", ("classes", "xi_bar"))
        classes["xi_bar"] = [_vector(ctx, p, ("classes", "xi_bar", i), 2)
                             for i, p in enumerate(classes["xi_bar"])]
        if len(classes["xi_bar"]) != N:
            raise ctx.semantic(f"xi_bar must hold N = {N} points", ("classes", "xi_bar"))
        classes["r"] = _real(ctx, classes["r"], ("classes", "r"))
        if classes["r"] <= 0:
            raise ctx.semantic("r must be positive", ("classes", "r"))
        lo = -0.5 if classes["alpha_star"] is None else classes["alpha_star"]
        hi = 2.0 * N if classes["alpha_sup"] is None else classes["alpha_sup"]
        classes["alpha_star"] = _real(ctx, lo, ("classes", "alpha_star"))
        classes["alpha_sup"] = _real(ctx, hi, ("classes", "alpha_sup"))
        if classes["alpha_star"] > classes["alpha_sup"]:
            raise ctx.semantic("alpha_star must not exceed alpha_sup", ("classes",))
        if classes["sign"] not in ("+", "-"):
            raise ctx.semantic("sign must be '+' or '-'", ("classes", "sign"))

    landscape = _section(ctx, doc, "landscape", DEFAULTS["landscape"])
    if landscape["shape"] is not None:
        sh = landscape["shape"]
        if not isinstance(sh, (list, tuple)) or len(sh) != 2:
            raise ctx.parse_error("shape must be [n1, n2]", ("landscape", "shape"))
        landscape["shape"] = [_int(ctx, x, ("landscape", "shape", i)) for i, x in enumerate(sh)]

    output = _section(ctx, doc, "output", DEFAULTS["output"])
    if not isinstance(output["path"], str):
        raise ctx.parse_error("expected a string", ("output", "path"))
    if output["format"] != "json":
        raise ctx.semantic("only the json report format is supported", ("output", "format"))

    cfg = RunConfig(surface, curv, singularities, N, search, minmax, verify, classes,
                    landscape, output, ctx.warnings)
    try:
        build_problem(cfg)
    except OnNodalLine as exc:
        raise ctx.semantic(str(exc), ("singularities",)) from None
    except InvalidData as exc:
        path = ("singularities",) if "singular" in str(exc) else ("curvature",)
        raise ctx.semantic(str(exc), path) from None
    return cfg


def _family_params(ctx, fam, params):
    base = ("curvature", "parameters")
    out = {}
    if fam == "constant":
        out["value"] = _real(ctx, params.get("value", 1.0), base + ("value",))
    elif fam == "cos_polar":
        out["shift"] = _real(ctx, params.get("shift", 0.0), base + ("shift",))
    elif fam == "gaussians":
        out["base"] = _real(ctx, params.get("base", 0.0), base + ("base",))
        terms = params.get("terms", [])
        if not isinstance(terms, list):
            raise ctx.parse_error("expected a list", base + ("terms",))
        out["terms"] = []
        for i, t in enumerate(terms):
            path = base + ("terms", i)
            if not isinstance(t, dict):
                raise ctx.parse_error("expected a mapping", path)
            extra = set(t) - TERM_KEYS
            if extra:
                ctx.unknown(extra, path)
            for k in ("center", "amplitude", "width"):
                if k not in t:
                    raise ctx.parse_error(f"missing {k!r}", path)
            out["terms"].append({
                "center": _vector(ctx, t["center"], path + ("center",), 2),
                "amplitude": _real(ctx, t["amplitude"], path + ("amplitude",)),
                "width": _real(ctx, t["width"], path + ("width",)),
                "sign": _real(ctx, t.get("sign", -1.0), path + ("sign",)),
            })
    elif fam == "wells":
        out["scale"] = _real(ctx, params.get("scale", 1.0), base + ("scale",))
        out["depth"] = _real(ctx, params.get("depth", 1.0), base + ("depth",))
        out["width"] = _real(ctx, params.get("width", 10.0), base + ("width",))
        centers = params.get("centers", [])
        if not isinstance(centers, list):
            raise ctx.parse_error("expected a list of chart points", base + ("centers",))
        out["centers"] = [_vector(ctx, c, base + ("centers", i), 2) for i, c in enumerate(centers)]
    return out


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_surface(cfg):
    s = cfg.surface
    if s["type"] == "sphere":
        nlat, nlon = s["grid"] or (128, 256)
        return make_surface("sphere", quadrature=(nlat, nlon))
    n1, n2 = s["grid"] or (256, 256)
    return make_surface("torus", periods=tuple(s["periods"]), quadrature=(n1, n2))


def chart_points(surface, pts):
    return surface.from_chart(np.asarray(pts, dtype=float).reshape(-1, 2))


def build_curvature(cfg, surface):
    c = cfg.curvature
    p = c["parameters"]
    fam = c["family"]
    if fam == "constant":
        return constant(surface, p["value"])
    if fam == "cos_polar":
        return cos_polar(surface, p["shift"])
    if fam == "gaussians":
        terms = [dict(t, center=chart_points(surface, t["center"])[0]) for t in p["terms"]]
        return gaussians(surface, p["base"], terms)
    if fam == "wells":
        centers = chart_points(surface, p["centers"]) if p["centers"] else []
        return wells(surface, p["scale"], centers, p["depth"], p["width"])
    return from_expression(surface, c["expression"])


def build_problem(cfg, surface=None):
    s = surface or build_surface(cfg)
    K = build_curvature(cfg, s)
    if cfg.singularities:
        pts = chart_points(s, [x["at"] for x in cfg.singularities])
        sing = SingularData.build(s, pts, [x["alpha"] for x in cfg.singularities])
    else:
        sing = SingularData.empty(s)
    return ProblemData(s, K, sing, cfg.N)


__all__ = ["RunConfig", "parse_config", "config_from_dict", "build_problem", "build_surface",
           "ConfigError", "DEFAULTS"]
