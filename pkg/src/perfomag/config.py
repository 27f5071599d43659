"""INI configuration for the command line tool.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``;`` and
``#`` start comments.  Values are Python literals (numbers, strings in
quotes, tuples/lists, dicts) or the bare words true/false/none.  Every key
is listed in ``SCHEMA``; anything else is rejected.

Coefficients ``A``, ``K`` and ``mu`` accept a scalar, a dim x dim (or 3x3)
matrix, or a named cell field given as a dict:

    {"field": "layered", "low": 1.0, "high": 4.0, "axis": 1}
    {"field": "checkerboard", "low": 1.0, "high": 2.0}

``layered`` is ``low`` for y_axis < 1/2 and ``high`` otherwise (axis is
1-based); ``checkerboard`` alternates by half-cell parity.  Both are
isotropic.
"""

import ast
import configparser
from dataclasses import dataclass, field
import math
import os
import re

import numpy as np

from perfomag.geometry import HoleSpec, build_cell_grid, build_macro_grid, read_mask


class ConfigError(ValueError):
    pass


SCHEMA = {
    "geometry": {
        "dim": 3, "cell_n": 16, "hole": "none", "hole_center": None, "hole_radius": None,
        "hole_lo": None, "hole_hi": None, "hole_mask": None, "allow_boundary": False,
        "box": None, "n_macro": 16, "pad": None,
    },
    "physics": {
        "gamma": 1.0, "theta_c": 1.0, "c1": 1.0, "c2": 1.0, "k0": 1.0, "k1": 1.0,
        "A": 1.0, "K": 1.0, "mu": 1.0, "omega2_source": "mu_ei",
    },
    "discretization": {
        "dt": 1e-2, "t_end": 1.0, "save_every": 10, "cg_tol": 1e-10, "newton_tol": 1e-13,
        "bc": "neumann", "field_coupling": True, "freeze_temperature": False,
        "mean_convention": None,
    },
    "initial": {
        "m0": (0.0, 0.0, 0.0), "m0_amplitude": 1e-2, "theta0": 1.0,
    },
    "run": {
        "name": None, "seed": 0, "eps_list": (0.25, 0.125, 0.0625), "t_check": 0.05,
        "verify_n_macro": None,
    },
}
HOLE_KINDS = ("none", "sphere", "box", "mask")
NAMED_FIELDS = ("layered", "checkerboard")


@dataclass
class SimConfig:
    path: str
    geometry: dict
    physics: dict
    discretization: dict
    initial: dict
    run: dict
    text: str = field(default="", repr=False)

    @property
    def dim(self):
        return self.geometry["dim"]

    @property
    def name(self):
        if self.run["name"]:
            return str(self.run["name"])
        return os.path.splitext(os.path.basename(self.path))[0] or "run"

    # -- builders ---------------------------------------------------------
    def hole(self):
        g = self.geometry
        kind = g["hole"]
        ab = g["allow_boundary"]
        if kind == "none":
            return HoleSpec.none()
        if kind == "sphere":
            return HoleSpec.sphere(g["hole_center"], g["hole_radius"], allow_boundary=ab)
        if kind == "box":
            return HoleSpec.box(g["hole_lo"], g["hole_hi"], allow_boundary=ab)
        path = g["hole_mask"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(self.path)), path)
        return HoleSpec.from_mask(read_mask(path), allow_boundary=True)

    def cell_grid(self):
        return build_cell_grid(self.geometry["cell_n"], self.dim, self.hole())

    def macro_grid(self, n_macro=None):
        g = self.geometry
        return build_macro_grid(g["box"], g["n_macro"] if n_macro is None else n_macro, g["pad"])

    def thermo(self):
        from perfomag.thermo import ThermoParams
        p = self.physics
        return ThermoParams(p["c1"], p["c2"], p["k0"], p["k1"])

    def coefficient(self, name, cell):
        return coefficient_from_spec(self.physics[name], cell, self.dim)


def coefficient_from_spec(spec, cell, dim):
    """Scalar, matrix, or named field -> array usable as a cell coefficient."""
    if isinstance(spec, dict):
        kind = spec["field"]
        y = cell.centers()
        lo, hi = float(spec.get("low", 1.0)), float(spec.get("high", 1.0))
        if kind == "layered":
            ax = int(spec.get("axis", 1)) - 1
            a = np.where(y[..., ax] < 0.5, lo, hi)
        else:
            par = np.sum(np.floor(2.0 * y).astype(int), axis=-1) % 2
            a = np.where(par == 0, lo, hi)
        return a[..., None, None] * np.eye(3)
    return np.asarray(spec, dtype=float)


def _locate(text):
    """(section, key) -> line number, for error messages."""
    where = {}
    sec = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            where.setdefault((sec, None), no)
            continue
        m = re.match(r"^([^=:;#\s][^=:]*?)\s*[=:]", line)
        if m and sec is not None:
            where.setdefault((sec, m.group(1).strip()), no)
    return where


def _literal(raw):
    s = raw.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return s


class _Checker:
    def __init__(self, path, where):
        self.path = path
        self.where = where

    def fail(self, sec, key, msg):
        line = self.where.get((sec, key)) or self.where.get((sec, None))
        loc = f"{self.path}:{line}" if line else self.path
        k = f"[{sec}] {key}" if key else f"[{sec}]"
        raise ConfigError(f"{loc}: {k}: {msg}")


def _num(ck, sec, key, v, positive=False, integer=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ck.fail(sec, key, f"expected a number, got {v!r}")
    if integer and not (isinstance(v, int) or float(v).is_integer()):
        ck.fail(sec, key, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        ck.fail(sec, key, "must be finite")
    if positive and not v > 0:
        ck.fail(sec, key, f"{key} must be > 0")
    if nonneg and v < 0:
        ck.fail(sec, key, f"{key} must be >= 0")
    return int(v) if integer else float(v)


def _vec(ck, sec, key, v, n):
    if not isinstance(v, (tuple, list)) or len(v) != n:
        ck.fail(sec, key, f"expected a sequence of {n} numbers")
    return tuple(_num(ck, sec, key, x) for x in v)


def _coeff(ck, sec, key, v, dim):
    if isinstance(v, dict):
        kind = v.get("field")
        if kind not in NAMED_FIELDS:
            ck.fail(sec, key, f"unknown named field {kind!r} (expected one of {NAMED_FIELDS})")
        extra = set(v) - {"field", "low", "high", "axis"}
        if extra:
            ck.fail(sec, key, f"unknown field parameters {sorted(extra)}")
        for p in ("low", "high"):
            if p in v:
                _num(ck, sec, key, v[p], positive=True)
        if "axis" in v:
            ax = _num(ck, sec, key, v["axis"], integer=True)
            if not 1 <= ax <= dim:
                ck.fail(sec, key, f"axis must be in 1..{dim}")
        return dict(v)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return _num(ck, sec, key, v, positive=True)
    try:
        M = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        ck.fail(sec, key, f"expected a scalar, a matrix or a named field, got {v!r}")
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] not in (dim, 3):
        ck.fail(sec, key, f"matrix must be {dim}x{dim} or 3x3")
    n = M.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if abs(M[i, j] - M[j, i]) > 1e-12 * max(1.0, np.abs(M).max()):
                ck.fail(sec, key, f"{key} is not symmetric: entry ({i + 1},{j + 1}) = {M[i, j]!r} "
                                  f"but entry ({j + 1},{i + 1}) = {M[j, i]!r}")
    if not np.linalg.eigvalsh(M)[0] > 0:
        ck.fail(sec, key, f"{key} must be positive definite")
    return M.tolist()


def _choice(ck, sec, key, v, options):
    if v not in options:
        ck.fail(sec, key, f"expected one of {options}, got {v!r}")
    return v


def _bool(ck, sec, key, v):
    if not isinstance(v, bool):
        ck.fail(sec, key, f"expected true or false, got {v!r}")
    return v


def parse_text(text, path="<config>"):
    where = _locate(text)
    ck = _Checker(path, where)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            ck.fail(sec, None, f"unknown section (expected one of {sorted(SCHEMA)})")
        for key, val in cp.items(sec):
            if key not in SCHEMA[sec]:
                ck.fail(sec, key, "unknown key")
            raw[(sec, key)] = _literal(val)
    vals = {sec: dict(keys) for sec, keys in SCHEMA.items()}
    for (sec, key), v in raw.items():
        vals[sec][key] = v
    return SimConfig(path=path, text=text, **_validate(ck, vals, raw))


def _validate(ck, v, raw):
    g, p, d, ini, r = (v[s] for s in ("geometry", "physics", "discretization", "initial", "run"))
    G = "geometry"
    g["dim"] = _num(ck, G, "dim", g["dim"], integer=True)
    if g["dim"] not in (2, 3):
        ck.fail(G, "dim", "dim must be 2 or 3")
    dim = g["dim"]
    g["cell_n"] = _num(ck, G, "cell_n", g["cell_n"], integer=True)
    if g["cell_n"] < 4:
        ck.fail(G, "cell_n", "cell_n must be >= 4")
    g["hole"] = _choice(ck, G, "hole", "none" if g["hole"] is None else g["hole"], HOLE_KINDS)
    g["allow_boundary"] = _bool(ck, G, "allow_boundary", g["allow_boundary"])
    if g["hole"] == "sphere":
        for key in ("hole_center", "hole_radius"):
            if g[key] is None:
                ck.fail(G, "hole", f"sphere hole needs {key}")
        g["hole_center"] = _vec(ck, G, "hole_center", g["hole_center"], dim)
        g["hole_radius"] = _num(ck, G, "hole_radius", g["hole_radius"], positive=True)
    elif g["hole"] == "box":
        for key in ("hole_lo", "hole_hi"):
            if g[key] is None:
                ck.fail(G, "hole", f"box hole needs {key}")
        g["hole_lo"] = _vec(ck, G, "hole_lo", g["hole_lo"], dim)
        g["hole_hi"] = _vec(ck, G, "hole_hi", g["hole_hi"], dim)
    elif g["hole"] == "mask" and not isinstance(g["hole_mask"], str):
        ck.fail(G, "hole_mask", "mask hole needs hole_mask = \"path\"")
    g["box"] = (1.0,) * dim if g["box"] is None else _vec(ck, G, "box", g["box"], dim)
    if any(L <= 0 for L in g["box"]):
        ck.fail(G, "box", "box lengths must be > 0")
    nm = g["n_macro"]
    if isinstance(nm, (tuple, list)):
        g["n_macro"] = tuple(_num(ck, G, "n_macro", k, integer=True, positive=True) for k in nm)
        if len(nm) != dim:
            ck.fail(G, "n_macro", f"expected {dim} voxel counts")
    else:
        g["n_macro"] = _num(ck, G, "n_macro", nm, integer=True, positive=True)
    if g["pad"] is not None:
        g["pad"] = _num(ck, G, "pad", g["pad"], integer=True)
        if g["pad"] < 2:
            ck.fail(G, "pad", "pad must be >= 2")

    P = "physics"
    for key in ("gamma", "theta_c", "c1", "c2", "k0", "k1"):
        p[key] = _num(ck, P, key, p[key], positive=True)
    for key in ("A", "K", "mu"):
        p[key] = _coeff(ck, P, key, p[key], dim)
    p["omega2_source"] = _choice(ck, P, "omega2_source", p["omega2_source"], ("mu_ei", "ei"))

    D = "discretization"
    d["dt"] = _num(ck, D, "dt", d["dt"], positive=True)
    d["t_end"] = _num(ck, D, "t_end", d["t_end"], nonneg=True)
    steps = d["t_end"] / d["dt"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        ck.fail(D, "t_end", "t_end must be a whole number of time steps")
    d["save_every"] = _num(ck, D, "save_every", d["save_every"], integer=True, positive=True)
    d["cg_tol"] = _num(ck, D, "cg_tol", d["cg_tol"], positive=True)
    d["newton_tol"] = _num(ck, D, "newton_tol", d["newton_tol"], positive=True)
    d["bc"] = _choice(ck, D, "bc", d["bc"], ("neumann", "periodic"))
    d["field_coupling"] = _bool(ck, D, "field_coupling", d["field_coupling"])
    d["freeze_temperature"] = _bool(ck, D, "freeze_temperature", d["freeze_temperature"])
    if d["mean_convention"] is not None:
        d["mean_convention"] = _choice(ck, D, "mean_convention", d["mean_convention"],
                                       ("cell", "material"))

    I = "initial"
    m0 = ini["m0"]
    if m0 != "random":
        ini["m0"] = _vec(ck, I, "m0", m0, 3)
    ini["m0_amplitude"] = _num(ck, I, "m0_amplitude", ini["m0_amplitude"], nonneg=True)
    th = ini["theta0"]
    if isinstance(th, dict):
        if th.get("profile") != "cosine":
            ck.fail(I, "theta0", "profile must be \"cosine\"")
        extra = set(th) - {"profile", "mean", "amplitude", "axis"}
        if extra:
            ck.fail(I, "theta0", f"unknown profile parameters {sorted(extra)}")
        mean = _num(ck, I, "theta0", th.get("mean", 1.0), positive=True)
        amp = _num(ck, I, "theta0", th.get("amplitude", 0.0))
        if abs(amp) >= mean:
            ck.fail(I, "theta0", "theta0 must be > 0 (|amplitude| < mean)")
        ax = _num(ck, I, "theta0", th.get("axis", 1), integer=True)
        if not 1 <= ax <= dim:
            ck.fail(I, "theta0", f"axis must be in 1..{dim}")
        ini["theta0"] = {"profile": "cosine", "mean": mean, "amplitude": amp, "axis": ax}
    else:
        ini["theta0"] = _num(ck, I, "theta0", th, positive=True)

    R = "run"
    if r["name"] is not None and not isinstance(r["name"], str):
        ck.fail(R, "name", "name must be a string")
    r["seed"] = _num(ck, R, "seed", r["seed"], integer=True, nonneg=True)
    if r["seed"] >= 2 ** 64:
        ck.fail(R, "seed", "seed must fit in 64 bits")
    eps = r["eps_list"]
    if not isinstance(eps, (tuple, list)) or not eps:
        ck.fail(R, "eps_list", "expected a non-empty sequence")
    r["eps_list"] = tuple(_num(ck, R, "eps_list", e, positive=True) for e in eps)
    if any(b >= a for a, b in zip(r["eps_list"], r["eps_list"][1:])):
        ck.fail(R, "eps_list", "eps_list must be strictly decreasing")
    r["t_check"] = _num(ck, R, "t_check", r["t_check"], nonneg=True)
    if r["verify_n_macro"] is not None:
        r["verify_n_macro"] = _num(ck, R, "verify_n_macro", r["verify_n_macro"], integer=True,
                                   positive=True)
    return {"geometry": g, "physics": p, "discretization": d, "initial": ini, "run": r}


def parse_config(path):
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: config is not valid UTF-8") from None
    return parse_text(text, path)


def theta0_function(spec):
    if isinstance(spec, dict):
        ax = spec["axis"] - 1
        mean, amp = spec["mean"], spec["amplitude"]
        return lambda X: mean + amp * np.cos(np.pi * X[..., ax])
    return float(spec)


def m0_field(cfg, grid, seed):
    ini = cfg.initial
    if ini["m0"] == "random":
        rng = np.random.default_rng(seed)
        return ini["m0_amplitude"] * rng.standard_normal((3,) + tuple(grid.shape))
    return tuple(ini["m0"])
