"""Batch command line: read an INI-style run configuration, compute, and
write CSV tables.

Exit codes: 0 pass, 2 validation failure, 1 solver error, 64 bad
configuration (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import io
import json
import math
import operator
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, CritSobError

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2, 64

COMMANDS = ("greens", "robin-map", "criticality", "qv", "trial-sweep", "lemma-validate",
            "coercivity", "minimize", "epsilon-sweep", "blowup", "oracle-ball")


# --------------------------------------------------------------------------
# value parsing
# --------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}


def eval_number(text):
    """Evaluate a numeric literal or a small arithmetic expression in
    ``pi`` and ``e`` (``-pi**2/4``, ``-pi^2/4``)."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError
    try:
        val = ev(ast.parse(text.strip().replace("^", "**"), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError):
        raise ConfigError(f"not a number: {text!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"not finite: {text!r}")
    return val


def _floats(text, n=None):
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    vals = [eval_number(p) for p in parts]
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} values, got {text!r}")
    return vals


def read_grid_file(path):
    """Grid file: first line ``nx ny nz``, then node values with ``z`` the
    slowest and ``x`` the fastest index.  Returns an ``(nx, ny, nz)`` array."""
    try:
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().split()
            data = np.array(fh.read().split(), dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read grid file {path}: {exc}") from None
    if len(head) != 3:
        raise ConfigError(f"grid file {path}: first line must be 'nx ny nz'")
    nx, ny, nz = (int(v) for v in head)
    if data.size != nx * ny * nz:
        raise ConfigError(f"grid file {path}: expected {nx * ny * nz} values, got {data.size}")
    return data.reshape(nz, ny, nx).transpose(2, 1, 0).copy()


def read_radial_table(path):
    """Two columns ``r value``; ``#`` starts a comment."""
    try:
        tab = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read radial table {path}: {exc}") from None
    if tab.shape[1] != 2 or tab.shape[0] < 2 or np.any(np.diff(tab[:, 0]) <= 0):
        raise ConfigError(f"radial table {path}: need >= 2 rows of increasing 'r value'")
    return tab[:, 0], tab[:, 1]


@dataclass
class PotentialSpec:
    """A constant, a radial table or a grid file."""
    kind: str
    value: float = 0.0
    table: tuple = None
    array: np.ndarray = None
    source: str = ""

    @property
    def is_constant(self):
        return self.kind == "constant"

    def resolve(self, grid, center=(0.0, 0.0, 0.0)):
        from .fields import RadialGrid
        if self.kind == "constant":
            return self.value
        if self.kind == "radial":
            rs, vs = self.table
            c = np.asarray(center, float)

            def fn(pts):
                rr = pts if pts.ndim == 1 else np.linalg.norm(pts - c, axis=-1)
                return np.interp(rr, rs, vs)
            return fn
        if isinstance(grid, RadialGrid):
            raise ConfigError(f"grid file {self.source} needs method = grid")
        if self.array.shape != grid.shape:
            raise ConfigError(f"grid file {self.source} has shape {self.array.shape}, "
                              f"grid is {grid.shape}")
        return self.array


def parse_potential(text, base):
    text = text.strip()
    for prefix in ("radial:", "grid:"):
        if text.startswith(prefix):
            path = _resolve_path(text[len(prefix):].strip(), base)
            if prefix == "radial:":
                return PotentialSpec("radial", table=read_radial_table(path), source=str(path))
            return PotentialSpec("grid", array=read_grid_file(path), source=str(path))
    return PotentialSpec("constant", value=eval_number(text), source=text)


def _resolve_path(text, base):
    p = Path(text)
    if not p.is_absolute():
        p = Path(base) / p
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return p


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

SCHEMA = {
    "domain": {"kind", "radius", "center", "lower", "upper", "mask_file"},
    "discretization": {"method", "radial_n", "grid_n"},
    "potential": {"a", "v", "eps"},
    "run": {"x", "lam", "lambdas", "eps_list", "b", "stride", "zero_tol", "tol", "gtol",
            "max_iter", "minimizer", "lmax", "limit_tol"},
}


@dataclass
class RunConfig:
    kind: str = "ball"
    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    lower: tuple = (0.0, 0.0, 0.0)
    upper: tuple = (1.0, 1.0, 1.0)
    mask: np.ndarray = None
    method: str = None
    radial_n: int = None
    grid_n: int = None
    a: PotentialSpec = field(default_factory=lambda: PotentialSpec("constant", -math.pi ** 2 / 4))
    V: PotentialSpec = field(default_factory=lambda: PotentialSpec("constant", -1.0))
    eps: float = 0.0
    x: tuple = None
    lam: float = 50.0
    lambdas: tuple = None
    eps_list: tuple = (0.08, 0.04, 0.02)
    b: float = None
    stride: int = 2
    zero_tol: float = None
    tol: float = None
    gtol: float = 1e-10
    max_iter: int = 5000
    minimizer: Path = None
    lmax: int = 3
    limit_tol: float = 1.0 / 3.0
    canonical: str = ""

    # derived -----------------------------------------------------------
    def domain(self):
        from .fields import Box, MaskedGrid, UnitBall
        if self.kind == "ball":
            return UnitBall(self.radius, self.center)
        if self.kind == "box":
            return Box(self.lower, self.upper)
        return MaskedGrid(self.lower, self.upper, self.mask)

    def radial(self):
        return self.method == "radial"

    def grid(self, n=None):
        from .fields import Grid3D, RadialGrid
        if self.radial():
            return RadialGrid(self.radius, n or self.radial_n)
        return Grid3D(self.domain(), n or self.grid_n)

    def pole(self):
        if self.x is not None:
            return self.x
        if self.kind == "ball":
            return self.center
        return tuple(0.5 * (np.asarray(self.lower) + np.asarray(self.upper)))


def _positive(name, v, strict=True):
    if (v <= 0) if strict else (v < 0):
        raise ConfigError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {v}")
    return v


def _int(name, text, lo):
    try:
        v = int(text)
    except ValueError:
        raise ConfigError(f"{name}: not an integer: {text!r}") from None
    if v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")
    return v


def load_config(path=None, command="", name=""):
    """Parse and validate a run configuration.  Every problem raises
    :class:`ConfigError` before any computation starts."""
    cp = configparser.ConfigParser(interpolation=None)
    base = "."
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        base = p.parent
        try:
            cp.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    get = lambda sec, key: cp.get(sec, key, fallback=None) if cp.has_section(sec) else None
    cfg = RunConfig()

    kind = (get("domain", "kind") or "ball").strip().lower()
    if kind not in ("ball", "box", "masked"):
        raise ConfigError(f"domain kind must be ball, box or masked, got {kind!r}")
    cfg.kind = kind
    if (v := get("domain", "radius")) is not None:
        cfg.radius = _positive("radius", eval_number(v))
    if (v := get("domain", "center")) is not None:
        cfg.center = tuple(_floats(v, 3))
    if (v := get("domain", "lower")) is not None:
        cfg.lower = tuple(_floats(v, 3))
    if (v := get("domain", "upper")) is not None:
        cfg.upper = tuple(_floats(v, 3))
    if kind in ("box", "masked") and not all(b > a for a, b in zip(cfg.lower, cfg.upper)):
        raise ConfigError("box needs upper > lower on every axis")
    if kind == "masked":
        if (v := get("domain", "mask_file")) is None:
            raise ConfigError("masked domain needs mask_file")
        cfg.mask = read_grid_file(_resolve_path(v, base)) > 0
        if not cfg.mask.any():
            raise ConfigError("mask_file marks no inside nodes")

    method = (get("discretization", "method") or ("radial" if kind == "ball" else "grid"))
    cfg.method = method.strip().lower()
    if cfg.method not in ("radial", "grid"):
        raise ConfigError(f"method must be radial or grid, got {method!r}")
    if cfg.method == "radial" and kind != "ball":
        raise ConfigError("radial method needs a ball domain")
    if (v := get("discretization", "radial_n")) is not None:
        cfg.radial_n = _int("radial_n", v, 16)
    else:
        cfg.radial_n = 512 if command in ("trial-sweep", "lemma-validate", "minimize",
                                          "epsilon-sweep", "blowup") else 256
    cfg.grid_n = _int("grid_n", get("discretization", "grid_n") or "33", 5)

    if (v := get("potential", "a")) is not None:
        cfg.a = parse_potential(v, base)
    if (v := get("potential", "v")) is not None:
        cfg.V = parse_potential(v, base)
    if cfg.radial():
        for nm, spec in (("a", cfg.a), ("V", cfg.V)):
            if spec.kind == "grid":
                raise ConfigError(f"{nm} from a grid file needs method = grid")
    if (v := get("potential", "eps")) is not None:
        cfg.eps = _positive("eps", eval_number(v), strict=False)

    if (v := get("run", "x")) is not None:
        cfg.x = tuple(_floats(v, 3))
        if cfg.radial() and not np.allclose(cfg.x, cfg.center):
            raise ConfigError("radial method supports only the ball center as pole")
        d = cfg.domain().boundary_distance(np.asarray(cfg.x))
        if not float(d) > 0:
            raise ConfigError(f"pole {cfg.x} is not inside the domain")
    if (v := get("run", "lam")) is not None:
        cfg.lam = _positive("lam", eval_number(v))
    if (v := get("run", "lambdas")) is not None:
        cfg.lambdas = tuple(_positive("lambdas", t) for t in _floats(v))
        if len(set(cfg.lambdas)) != len(cfg.lambdas):
            raise ConfigError("lambdas must be distinct")
    if (v := get("run", "eps_list")) is not None:
        cfg.eps_list = tuple(_positive("eps_list", t) for t in _floats(v))
        if len(cfg.eps_list) < 3:
            raise ConfigError("eps_list needs at least 3 values")
    if (v := get("run", "b")) is not None:
        cfg.b = eval_number(v)
    if (v := get("run", "stride")) is not None:
        cfg.stride = _int("stride", v, 1)
    for key in ("zero_tol", "tol", "gtol", "limit_tol"):
        if (v := get("run", key)) is not None:
            setattr(cfg, key, _positive(key, eval_number(v)))
    if (v := get("run", "max_iter")) is not None:
        cfg.max_iter = _int("max_iter", v, 1)
    if (v := get("run", "lmax")) is not None:
        cfg.lmax = _int("lmax", v, 1)
    if command == "blowup":
        if (v := get("run", "minimizer")) is None:
            raise ConfigError("blowup needs [run] minimizer = <minimizer.csv>")
        cfg.minimizer = _resolve_path(v, base)
    if command == "lemma-validate":
        from .asymptotics import LEMMAS
        if name != "all" and name not in LEMMAS:
            raise ConfigError(f"unknown lemma {name!r}; choose from {', '.join(LEMMAS)} or all")
        if not cfg.radial():
            raise ConfigError("lemma validation runs on the radial ball only")
    canon = {sec: {k: cp[sec][k].strip() for k in sorted(cp[sec])} for sec in sorted(cp.sections())}
    cfg.canonical = json.dumps({"command": command, "name": name, "config": canon},
                               sort_keys=True)
    return cfg


def config_hash(cfg, seed):
    text = cfg.canonical + f"|seed={seed}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def fmt(v):
    """Deterministic cell formatting: 17 significant digits for floats."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


@dataclass
class Table:
    name: str
    header: list
    rows: list = field(default_factory=list)

    def render(self, meta):
        buf = io.StringIO()
        buf.write(meta + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()


def write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tables(out, tables, meta):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for t in tables:
        write_atomic(out / f"{t.name}.csv", t.render(meta))


def kv_table(name, items):
    return Table(name, ["quantity", "value"], [[k, v] for k, v in items])


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _field_table(name, grid, cols):
    from .fields import RadialGrid
    if isinstance(grid, RadialGrid):
        t = Table(name, ["r"] + list(cols))
        for k, r in enumerate(grid.r):
            t.rows.append([r] + [cols[c][k] for c in cols])
        return t
    t = Table(name, ["x", "y", "z"] + list(cols))
    pts = grid.coords.reshape(-1, 3)
    flat = {c: np.asarray(v).reshape(-1) for c, v in cols.items()}
    for k in range(pts.shape[0]):
        t.rows.append(list(pts[k]) + [flat[c][k] for c in cols])
    return t


def _greens(cfg, grid):
    from .greens import solve_greens_grid, solve_greens_radial
    if cfg.radial():
        return solve_greens_radial(cfg.a.resolve(grid), cfg.radius, grid=grid)
    return solve_greens_grid(cfg.a.resolve(grid, cfg.center), cfg.pole(), grid)


def _a_at_pole(cfg, grid, gd):
    from .fields import sample
    af = sample(grid, cfg.a.resolve(grid, cfg.center))
    return float(af.values[0] if cfg.radial() else af.values[gd.info["node"]])


def cmd_greens(cfg, opts):
    grid = cfg.grid()
    gd = _greens(cfg, grid)
    G = gd.green_values()
    finite = np.isfinite(G)
    gmin = float(np.min(G[finite])) if finite.any() else math.nan
    Gout = np.where(finite, G, np.nan)
    if not cfg.radial():
        Gout = np.where(grid.mask, Gout, np.nan)
    tab = _field_table("greens", grid, {"H": gd.H.values, "G": Gout})
    pole = gd.pole if gd.pole is not None else np.zeros(3)
    summ = kv_table("greens_summary", [
        ("pole_x", pole[0]), ("pole_y", pole[1]), ("pole_z", pole[2]),
        ("phi", gd.phi), ("solver", gd.solver), ("residual_norm", gd.residual_norm),
        ("min_G", gmin)])
    ok = gmin >= -1e-8
    return [tab, summ], ok


def _robin(cfg, opts):
    from .greens import robin_map
    dom = cfg.domain()
    if cfg.radial():
        return robin_map(dom, cfg.a.resolve(None), method="radial", radial_n=cfg.radial_n,
                         zero_tol=cfg.zero_tol)
    from .fields import Grid3D
    a = cfg.a.resolve(Grid3D(dom, cfg.grid_n), cfg.center)
    return robin_map(dom, a, cfg.stride, n=cfg.grid_n, zero_tol=cfg.zero_tol,
                     threads=opts.threads)


def _robin_table(rm):
    t = Table("robin_map", ["x", "y", "z", "phi", "in_zero_set"])
    for p, ph in zip(rm.points, rm.phi):
        t.rows.append([p[0], p[1], p[2], ph, bool(ph <= rm.zero_tol)])
    return t


def cmd_robin_map(cfg, opts):
    rm = _robin(cfg, opts)
    summ = kv_table("robin_summary", [
        ("min_phi", rm.min_value), ("min_x", rm.min_point[0]), ("min_y", rm.min_point[1]),
        ("min_z", rm.min_point[2]), ("zero_tol", rm.zero_tol),
        ("zero_set_size", len(rm.zero_set)), ("failed_samples", len(rm.failed)),
        ("method", rm.method)])
    return [_robin_table(rm), summ], not rm.failed


def cmd_criticality(cfg, opts):
    from .greens import criticality_check
    rm = _robin(cfg, opts)
    if cfg.a.kind == "grid":
        from .fields import ScalarField
        a = ScalarField(cfg.grid(), cfg.a.array)
    else:
        a = cfg.a.resolve(None, cfg.center)  # constant or pointwise callable
    rep = criticality_check(rm, a)
    summ = kv_table("criticality", [
        ("min_phi", rep.min_phi), ("max_a_on_zero_set", rep.max_a_on_zero_set),
        ("verdict", rep.verdict), ("assumption_flag", rep.assumption_flag),
        ("zero_tol", rep.zero_tol)])
    return [summ, _robin_table(rm)], rep.verdict == "ConsistentCritical"


def cmd_qv(cfg, opts):
    from .greens import q_v
    grid = cfg.grid()
    gd = _greens(cfg, grid)
    q = q_v(gd, cfg.V.resolve(grid, cfg.center))
    pole = cfg.center if cfg.radial() else gd.pole
    t = Table("qv", ["x", "y", "z", "q_v"], [[pole[0], pole[1], pole[2], q]])
    return [t], True


def _report_table(name, rep):
    t = Table(name, ["sweep", "numeric", "predicted", "relative_residual"])
    for s, n, p, r in zip(rep.sweep, rep.numeric, rep.predicted, rep.relative_residuals):
        t.rows.append([s, n, p, r])
    return t


def cmd_trial_sweep(cfg, opts):
    from .asymptotics import trial_sweep
    grid = cfg.grid()
    lams = cfg.lambdas or ((50.0, 100.0, 200.0) if cfg.radial() else (15.0, 25.0, 40.0))
    kw = {"tol": cfg.tol} if cfg.tol else {}
    rep = trial_sweep(lams, a=cfg.a.resolve(grid, cfg.center), V=cfg.V.resolve(grid, cfg.center),
                      eps=cfg.eps, x=cfg.pole(), grid=grid, **kw)
    summ = kv_table("trial_sweep_summary", [
        ("lambda^-1_coefficient", rep.extra["c1"]),
        ("lambda^-1_predicted", rep.extra["c1_predicted"]),
        ("lambda^-2_coefficient", rep.fitted_coefficient),
        ("lambda^-2_predicted", rep.predicted_coefficient),
        ("ratio", rep.ratio), ("tol", rep.tol), ("phi_a", rep.extra["phi_a"]),
        ("a_x", rep.extra["a_x"]), ("q_v", rep.extra["q_v"]), ("passed", rep.passed)])
    return [_report_table("trial_sweep", rep), summ], rep.passed


def cmd_lemma_validate(cfg, opts, name):
    from .asymptotics import DEFAULT_SWEEP, LEMMAS, validate_lemma
    names = list(LEMMAS) if name == "all" else [name]
    grid = cfg.grid()
    sweep = cfg.lambdas or DEFAULT_SWEEP
    summ = Table("lemma_summary", ["lemma", "target_power", "fitted", "predicted", "ratio",
                                   "tol", "passed"])
    tables = []
    ok = True
    for nm in names:
        kw = {}
        if cfg.b is not None:
            kw["b"] = cfg.b
        if cfg.tol is not None:
            kw["tol"] = cfg.tol
        rep = validate_lemma(nm, sweep, grid=grid, R=cfg.radius, **kw)
        tables.append(_report_table(f"lemma_{nm}", rep))
        if rep.target_power is None:
            summ.rows.append([nm, None, rep.coefficients[0], None, None, rep.tol, rep.passed])
        else:
            summ.rows.append([nm, rep.target_power, rep.fitted_coefficient,
                              rep.predicted_coefficient, rep.ratio, rep.tol, rep.passed])
        ok &= bool(rep.passed)
    return tables + [summ], ok


def cmd_coercivity(cfg, opts):
    from .bubbles import BubbleParams, coercivity_min_eig
    grid = cfg.grid()
    a = cfg.a.resolve(grid, cfg.center)
    x = cfg.center if cfg.radial() else cfg.pole()
    p = BubbleParams(tuple(x), cfg.lam, cfg.domain())
    kw = dict(lmax=cfg.lmax, seed=opts.seed)
    if cfg.tol:
        kw["tol"] = cfg.tol
    t = Table("coercivity", ["deflated", "sector", "rho_min"])
    dfl = coercivity_min_eig(p, a, grid, deflate=True, **kw)
    und = coercivity_min_eig(p, a, grid, deflate=False, **kw)
    for flag, rep in ((True, dfl), (False, und)):
        for sec, rho in sorted(rep.per_sector.items(), key=lambda kv: str(kv[0])):
            t.rows.append([flag, sec, rho])
    summ = kv_table("coercivity_summary", [
        ("lambda", cfg.lam), ("rho_min_deflated", dfl.rho_min),
        ("rho_min_undeflated", und.rho_min),
        ("witness_quotient", dfl.witness_quotient(a))])
    return [t, summ], dfl.rho_min > 0 and und.rho_min < 0


def _minimize(cfg, opts, eps):
    from .asymptotics import predict_scale
    from .bubbles import BubbleParams
    from .greens import q_v
    from .minimize import minimize_rayleigh
    grid = cfg.grid()
    a = cfg.a.resolve(grid, cfg.center)
    V = cfg.V.resolve(grid, cfg.center)
    x0 = cfg.center if cfg.radial() else cfg.pole()
    gd = _greens(cfg, grid)
    ax = _a_at_pole(cfg, grid, gd)
    qx = q_v(gd, V)
    lam = cfg.lam
    if eps > 0 and ax != 0 and qx != 0:
        lam = predict_scale(ax, qx) / eps
    p = BubbleParams(tuple(x0), lam)
    res = minimize_rayleigh(grid, a, V, eps, p, gtol=cfg.gtol, max_iter=cfg.max_iter)
    return grid, res


def cmd_minimize(cfg, opts):
    from .asymptotics import sobolev_constant
    grid, res = _minimize(cfg, opts, cfg.eps)
    summ = kv_table("minimize", [
        ("eps", res.eps), ("S_est", res.S_est), ("S", sobolev_constant()),
        ("S_minus_S_est", sobolev_constant() - res.S_est), ("iterations", res.iterations),
        ("gradient_norm", res.gradient_norm), ("initializer", res.initializer),
        ("initial_quotient", res.initial_quotient), ("status", res.status),
        ("radial_assumption", res.radial_assumption)])
    return [summ, _field_table("minimizer", grid, {"u": res.u.values})], True


def cmd_epsilon_sweep(cfg, opts):
    from .asymptotics import sobolev_constant
    from .minimize import epsilon_sweep
    grid = cfg.grid()
    x0 = cfg.center if cfg.radial() else cfg.pole()
    sw = epsilon_sweep(grid, cfg.a.resolve(grid, cfg.center), cfg.V.resolve(grid, cfg.center),
                       cfg.eps_list, x0=tuple(x0), threads=opts.threads, gtol=cfg.gtol,
                       max_iter=cfg.max_iter)
    S = sobolev_constant()
    t = Table("epsilon_sweep", ["eps", "S_est", "ratio", "iterations", "status"])
    for row in sw.rows():
        t.rows.append([row["eps"], row["S_est"], row["ratio"], row["iterations"], row["status"]])
    regime = sw.prediction.regime if sw.prediction is not None else "none"
    if sw.predicted_ratio is not None:
        ok = bool(np.all(sw.S_est < S)) and \
            abs(sw.extrapolated / sw.predicted_ratio - 1.0) <= cfg.limit_tol
    else:
        ok = bool(sw.ratios[-1] <= 0.02 and np.all(np.diff(sw.ratios) <= 0))
    summ = kv_table("epsilon_sweep_summary", [
        ("extrapolated_ratio", sw.extrapolated), ("uncertainty", sw.uncertainty),
        ("predicted_ratio", sw.predicted_ratio),
        ("predicted_coefficient", None if sw.prediction is None else sw.prediction.coefficient),
        ("regime", regime), ("monotone_trend", sw.monotone_trend), ("passed", ok)])
    return [t, summ], ok


def read_minimizer(path, grid):
    """Load a ``minimizer.csv`` written by the ``minimize`` command."""
    from .fields import RadialGrid, ScalarField
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head, body = rows[0], rows[1:]
    try:
        data = np.array(body, dtype=float)
    except ValueError:
        raise ConfigError(f"{path}: not a minimizer table") from None
    if isinstance(grid, RadialGrid):
        if head != ["r", "u"] or data.shape[0] != grid.n + 1 or \
                not np.allclose(data[:, 0], grid.r, rtol=0, atol=1e-12):
            raise ConfigError(f"{path} does not match the configured radial grid")
        vals = data[:, 1]
    else:
        if head != ["x", "y", "z", "u"] or data.shape[0] != int(np.prod(grid.shape)) or \
                not np.allclose(data[:, :3], grid.coords.reshape(-1, 3), atol=1e-12):
            raise ConfigError(f"{path} does not match the configured grid")
        vals = data[:, 3].reshape(grid.shape)
    return ScalarField(grid, vals, "minimizer")


def cmd_blowup(cfg, opts):
    from .asymptotics import predict_scale
    from .greens import q_v
    from .minimize import fit_decomposition
    grid = cfg.grid()
    u = read_minimizer(cfg.minimizer, grid)
    a = cfg.a.resolve(grid, cfg.center)
    eps = cfg.eps or None
    rep = fit_decomposition(u, a, eps=eps, x0=None if cfg.radial() else cfg.x)
    obs = rep.observables
    items = [("alpha", rep.alpha), ("x", rep.x[0]), ("y", rep.x[1]), ("z", rep.x[2]),
             ("lambda", rep.lam), ("correlation", rep.correlation), ("w_norm", rep.w_norm),
             ("r_norm", rep.r_norm), ("t_residual_norm", rep.t_residual_norm),
             ("beta", rep.beta), ("gamma", rep.gamma), ("delta_1", rep.delta[0]),
             ("delta_2", rep.delta[1]), ("delta_3", rep.delta[2]),
             ("reconstruction_error", rep.reconstruction_error), ("phi_at_x", rep.phi_at_x),
             ("eps_lambda", obs["eps_lam"]), ("phi_over_eps", obs["phi_over_eps"]),
             ("r_over_eps", obs["r_over_eps"])]
    ok = True
    if eps:
        gd = _greens(cfg, grid)
        ax = _a_at_pole(cfg, grid, gd)
        qx = q_v(gd, cfg.V.resolve(grid, cfg.center))
        if ax != 0 and qx < 0:
            sc = predict_scale(ax, qx)
            items.append(("predicted_eps_lambda", sc))
            ok = 0.7 * sc <= obs["eps_lam"] <= 1.3 * sc
    return [kv_table("blowup", items)], ok


def cmd_oracle_ball(cfg, opts):
    from . import suite
    checks = suite.run_all(cfg.radial_n, 512)
    t = Table("oracle_ball", ["criterion", "value", "predicted", "tol", "passed", "note"])
    for c in checks:
        t.rows.append([c.name, c.value, c.target, c.tol, c.passed, c.note])
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value:.6g} "
              f"({c.seconds:.2f}s)", file=sys.stderr)
    return [t], all(c.passed for c in checks)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="csl", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("name", nargs="?", default=None,
                    help="lemma name for lemma-validate (or 'all')")
    ap.add_argument("--config", default=None, help="INI run configuration")
    ap.add_argument("--out", default=".", help="output directory for CSV files")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: $CSL_THREADS or 1)")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized eigensolvers")
    return ap


def _threads(arg):
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("CSL_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"CSL_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _error_record(kind, exc):
    return json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)})


def run(command, name=None, config=None, out=".", threads=None, seed=0):
    """Run one command; returns the exit code."""
    try:
        if command == "lemma-validate" and not name:
            raise ConfigError("lemma-validate needs a lemma name")
        if command != "lemma-validate" and name:
            raise ConfigError(f"{command} takes no positional argument")
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        nthreads = _threads(threads)
        cfg = load_config(config, command, name or "")
    except ConfigError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    opts = argparse.Namespace(threads=nthreads, seed=seed)
    meta = f"# artifact-version={__version__}, config-hash={config_hash(cfg, seed)}"
    handler = {"greens": cmd_greens, "robin-map": cmd_robin_map, "criticality": cmd_criticality,
               "qv": cmd_qv, "trial-sweep": cmd_trial_sweep, "coercivity": cmd_coercivity,
               "minimize": cmd_minimize, "epsilon-sweep": cmd_epsilon_sweep,
               "blowup": cmd_blowup, "oracle-ball": cmd_oracle_ball}
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=nthreads):
            if command == "lemma-validate":
                tables, ok = cmd_lemma_validate(cfg, opts, name)
            else:
                tables, ok = handler[command](cfg, opts)
    except ConfigError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    except (CritSobError, ValueError, np.linalg.LinAlgError) as exc:
        rec = Table("error", ["command", "error_type", "message"],
                    [[command, type(exc).__name__, str(exc)]])
        write_tables(out, [rec], meta)
        print(_error_record("solver", exc), file=sys.stderr)
        return EXIT_ERROR
    write_tables(out, tables, meta)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.name, args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
