"""Run configuration: strict JSON parsing with line-anchored error messages."""
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

COMMANDS = ("band", "invariants", "quasimode", "solve2d", "fit", "diagnostics", "verify")
VERIFY_GROUPS = ("oracle", "fiber", "identities", "weighted", "quasimode", "edge2d", "localization")

# allowed keys per block; None marks a free-form leaf
SCHEMA = {
    "a": None,
    "grid1d": {"L": None, "n": None},
    "band": {"xi_min": None, "xi_max": None, "n_xi": None},
    "profile": {"kind": None, "k_max": None, "k2": None},
    "domain": {"S": None, "T": None, "n_s": None, "n_t": None, "t_minus": None,
               "ds_scale": None, "dtau": None, "t_plus": None, "minus_widths": None},
    "h_list": None,
    "n_modes": None,
    "tolerances": {"eig1d": None, "eig2d": None},
    "quasimode": {"mode": None, "cutoff": None},
    "fit": {"source": None, "lambdas": None, "beta": None, "kM3": None, "E1": None},
    "solve2d": {"scheme": None, "dump_grids": None, "matched_beta": None},
    "verify": {"groups": None},
    "output_dir": None,
    "cache_dir": None,
}


def _line_of(text, key):
    """1-based line of the first ``"key":`` occurrence, or None."""
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _fail(msg, text=None, key=None, path=None):
    line = _line_of(text, key) if (text is not None and key is not None) else None
    where = f"{path}:{line}: " if (path and line) else (f"line {line}: " if line else "")
    raise ValidationError(where + msg)


def _check_keys(obj, schema, text, path, prefix=""):
    if not isinstance(obj, dict):
        _fail(f"{prefix or 'config'} must be a JSON object", text, prefix.split(".")[-1] or None, path)
    for k, v in obj.items():
        name = f"{prefix}.{k}" if prefix else k
        if k not in schema:
            _fail(f"unknown key {name!r}", text, k, path)
        sub = schema[k]
        if isinstance(sub, dict):
            _check_keys(v, sub, text, path, name)


def _num(block, key, text, path, lo=None, hi=None, integer=False, strict_lo=False, default=None):
    if key not in block:
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        _fail(f"{key!r} must be a finite number", text, key, path)
    if integer and int(v) != v:
        _fail(f"{key!r} must be an integer", text, key, path)
    if lo is not None and (v <= lo if strict_lo else v < lo):
        _fail(f"{key!r} must be {'>' if strict_lo else '>='} {lo}, got {v}", text, key, path)
    if hi is not None and v > hi:
        _fail(f"{key!r} must be <= {hi}, got {v}", text, key, path)
    return int(v) if integer else float(v)


@dataclass
class RunConfig:
    a: float = -0.5
    L: float = 20.0
    n: int = 4001
    xi_min: float = -2.0
    xi_max: float = 0.0
    n_xi: int = 201
    profile: dict = field(default_factory=lambda: {"kind": "gaussian_bump", "k_max": 1.0, "k2": -0.5})
    domain: dict = field(default_factory=dict)
    h_list: list = field(default_factory=lambda: [2e-2, 1e-2, 5e-3])
    n_modes: int = 2
    eig1d_tol: float = 1e-10
    eig2d_tol: float = 1e-9
    qm_mode: int = 1
    qm_cutoff: bool = False
    fit: dict = field(default_factory=dict)
    scheme: str = "average"
    dump_grids: bool = False
    matched_beta: bool = True
    groups: list = field(default_factory=lambda: list(VERIFY_GROUPS))
    output_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)


def parse_config(text: str, path: Optional[str] = None, command: Optional[str] = None) -> RunConfig:
    """Validate a JSON config against the schema and return a :class:`RunConfig`."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        where = f"{path}:{e.lineno}" if path else f"line {e.lineno}"
        raise ValidationError(f"{where}: malformed JSON: {e.msg}") from None
    _check_keys(obj, SCHEMA, text, path)
    cfg = RunConfig(raw=obj)
    cfg.a = _num(obj, "a", text, path, -1.0, 1.0, default=cfg.a)
    g = obj.get("grid1d", {})
    cfg.L = _num(g, "L", text, path, 0.0, strict_lo=True, default=cfg.L)
    cfg.n = _num(g, "n", text, path, 3, integer=True, default=cfg.n)
    if cfg.n % 2 == 0:
        _fail("'n' must be odd so that tau = 0 is a node", text, "n", path)
    b = obj.get("band", {})
    cfg.xi_min = _num(b, "xi_min", text, path, default=cfg.xi_min)
    cfg.xi_max = _num(b, "xi_max", text, path, default=cfg.xi_max)
    cfg.n_xi = _num(b, "n_xi", text, path, 2, integer=True, default=cfg.n_xi)
    if not cfg.xi_min < cfg.xi_max:
        _fail("need xi_min < xi_max", text, "xi_max", path)

    pr = dict(cfg.profile)
    pr.update(obj.get("profile", {}))
    if not isinstance(pr["kind"], str):
        _fail("'kind' must be a string", text, "kind", path)
    pr["k_max"] = _num(pr, "k_max", text, path)
    pr["k2"] = _num(pr, "k2", text, path)
    cfg.profile = pr

    d = obj.get("domain", {})
    explicit = {"T", "n_s", "n_t", "t_minus"} & set(d)
    scaled = {"ds_scale", "dtau", "t_plus", "minus_widths"} & set(d)
    if explicit and scaled:
        _fail("domain mixes a fixed grid (T, n_s, n_t, t_minus) with h-scaled keys "
              f"({', '.join(sorted(scaled))})", text, sorted(scaled)[0], path)
    if explicit and not {"T", "n_s", "n_t"} <= set(d):
        _fail("a fixed domain needs S, T, n_s and n_t", text, "domain", path)
    dom = {}
    for k in d:
        integer = k in ("n_s", "n_t")
        dom[k] = _num(d, k, text, path, 0.0, strict_lo=True, integer=integer)
    cfg.domain = dom

    if "h_list" in obj:
        hl = obj["h_list"]
        if not isinstance(hl, list) or not hl:
            _fail("'h_list' must be a nonempty list", text, "h_list", path)
        for v in hl:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not (0 < v < 1):
                _fail(f"'h_list' entries must lie in (0, 1), got {v!r}", text, "h_list", path)
        if any(x <= y for x, y in zip(hl, hl[1:])):
            _fail("'h_list' must be strictly decreasing", text, "h_list", path)
        cfg.h_list = [float(v) for v in hl]
    cfg.n_modes = _num(obj, "n_modes", text, path, 1, integer=True, default=cfg.n_modes)
    tl = obj.get("tolerances", {})
    cfg.eig1d_tol = _num(tl, "eig1d", text, path, 0.0, strict_lo=True, default=cfg.eig1d_tol)
    cfg.eig2d_tol = _num(tl, "eig2d", text, path, 0.0, strict_lo=True, default=cfg.eig2d_tol)

    q = obj.get("quasimode", {})
    cfg.qm_mode = _num(q, "mode", text, path, 1, integer=True, default=cfg.qm_mode)
    if "cutoff" in q:
        if not isinstance(q["cutoff"], bool):
            _fail("'cutoff' must be true or false", text, "cutoff", path)
        cfg.qm_cutoff = q["cutoff"]

    f = dict(obj.get("fit", {}))
    if "source" in f and "lambdas" in f:
        _fail("fit takes either 'source' or 'lambdas', not both", text, "lambdas", path)
    if "lambdas" in f:
        lam = np.asarray(f["lambdas"], dtype=float) if isinstance(f["lambdas"], list) else None
        if lam is None or lam.ndim not in (1, 2) or lam.shape[0] != len(cfg.h_list) or not np.all(np.isfinite(lam)):
            _fail("'lambdas' must hold one finite row per h in h_list", text, "lambdas", path)
        for k in ("beta", "kM3", "E1"):
            if k not in f:
                _fail(f"inline fit data needs {k!r}", text, "fit", path)
            f[k] = _num(f, k, text, path)
    if "source" in f and not isinstance(f["source"], str):
        _fail("'source' must be a path string", text, "source", path)
    cfg.fit = f

    s2 = obj.get("solve2d", {})
    if "scheme" in s2:
        if s2["scheme"] not in ("average", "peierls"):
            _fail(f"unknown scheme {s2['scheme']!r}", text, "scheme", path)
        cfg.scheme = s2["scheme"]
    for k in ("dump_grids", "matched_beta"):
        if k in s2:
            if not isinstance(s2[k], bool):
                _fail(f"{k!r} must be true or false", text, k, path)
            setattr(cfg, k, s2[k])

    v = obj.get("verify", {})
    if "groups" in v:
        gr = v["groups"]
        if not isinstance(gr, list) or not gr:
            _fail("'groups' must be a nonempty list", text, "groups", path)
        for name in gr:
            if name not in VERIFY_GROUPS:
                _fail(f"unknown verify group {name!r}; expected some of {VERIFY_GROUPS}",
                      text, "groups", path)
        cfg.groups = list(gr)
    for k in ("output_dir", "cache_dir"):
        if k in obj:
            if not isinstance(obj[k], str):
                _fail(f"{k!r} must be a path string", text, k, path)
            setattr(cfg, k, obj[k])

    # re-validate module invariants early so bad parameters fail with exit 2
    from .edge2d import CurvatureProfile
    from .fiber import Grid1D
    Grid1D(cfg.L, cfg.n)
    if command in ("solve2d", "fit", "diagnostics", "quasimode"):
        CurvatureProfile(pr["kind"], pr["k_max"], pr["k2"])
    if command in ("invariants", "quasimode", "solve2d", "diagnostics") and 0 < cfg.a:
        _fail("the band minimum is attained only for a in [-1, 0]", text, "a", path)
    return cfg


def load_config(path, command=None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path), command)
