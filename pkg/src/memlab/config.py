"""INI problem files.

Sections and keys (all optional unless noted)::

    [params]      a b p q m l
    [domain]      L N
    [kernel]      kind = zero | constant | separable | table
                  kappa, phi (expression in y), eta (expression in t),
                  table (CSV with columns boundary,y,t,value)
    [initial]     kind = zero | constant | compatible | expression
                  level, expr (expression in x)
    [solver]      dt T_final epsilon clamp_policy snapshot_stride adaptive blowup_cap
    [picard]      N_g M_g T max_iter tol
    [experiment]  ladder, delta0, workers, levels (N:dt list), exact (expression in x, t),
                  min_order, candidate, eps, tau, T_guess
    [compare]     lower_shift upper_shift tolerance
    [greens]      samples N times

Expressions may use arithmetic, ``pi``, ``e`` and numpy functions such as
``cos``, ``exp``, ``sqrt``, ``where``, ``minimum``. Overrides use
``section.key=value``.
"""
from __future__ import annotations

import ast
import configparser
import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, MemlabError
from .greens import PicardConfig
from .problem import (BoundaryKernel, Domain1D, InitialData, Problem, make_compatible_initial,
                      make_params)
from .solver import SolverConfig

KNOWN = {
    "params": {"a", "b", "p", "q", "m", "l"},
    "domain": {"L", "N"},
    "kernel": {"kind", "kappa", "phi", "eta", "table"},
    "initial": {"kind", "level", "expr"},
    "solver": {"dt", "T_final", "epsilon", "clamp_policy", "snapshot_stride", "adaptive", "blowup_cap"},
    "picard": {"N_g", "M_g", "T", "max_iter", "tol"},
    "experiment": {"ladder", "delta0", "workers", "levels", "exact", "min_order", "candidate",
                   "eps", "tau", "T_guess"},
    "compare": {"lower_shift", "upper_shift", "tolerance"},
    "greens": {"samples", "N", "times"},
}

_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "minimum", "maximum", "where",
    "sinh", "cosh", "tanh", "clip", "ones_like", "zeros_like", "heaviside")}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
          ast.Compare, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
          ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq, ast.keyword)


def compile_expression(text: str, variables: tuple[str, ...]):
    """Compile a restricted numpy expression into ``f(*variables)``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from None
    allowed = set(_FUNCS) | set(_CONSTS) | set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(f"expression {text!r}: {type(node).__name__} not allowed")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ConfigError(f"expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"expression {text!r}: only whitelisted functions may be called")
    code = compile(tree, "<expr>", "eval")

    def f(*args):
        env = {"__builtins__": {}, **_FUNCS, **_CONSTS, **dict(zip(variables, args))}
        return eval(code, env)  # noqa: S307 - AST whitelisted above
    return f


class RunSettings:
    """Parsed problem file with typed accessors."""

    def __init__(self, parser: configparser.ConfigParser, base_dir: Path):
        self.cp = parser
        self.base_dir = base_dir

    # typed getters --------------------------------------------------------
    def get(self, section, key, default=None):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key)
        return default

    def getfloat(self, section, key, default=None):
        v = self.get(section, key)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a number, got {v!r}") from None

    def getint(self, section, key, default=None):
        v = self.getfloat(section, key)
        if v is None:
            return default
        if v != int(v):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {v!r}")
        return int(v)

    def getbool(self, section, key, default=False):
        v = self.get(section, key)
        if v is None:
            return default
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {v!r}")

    def getlist(self, section, key, default=None):
        v = self.get(section, key)
        if v is None:
            return default
        try:
            return [float(s) for s in v.replace(";", ",").split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a comma-separated list of numbers") from None

    # builders -------------------------------------------------------------
    def params(self):
        vals = {k: self.getfloat("params", k, 1.0) for k in ("a", "b", "p", "q", "m", "l")}
        return make_params(**vals)

    def domain(self) -> Domain1D:
        return Domain1D(self.getfloat("domain", "L", 1.0), self.getint("domain", "N", 101))

    def kernel(self) -> BoundaryKernel:
        kind = self.get("kernel", "kind", "zero")
        if kind == "zero":
            return BoundaryKernel.zero()
        if kind == "constant":
            return BoundaryKernel.constant(self.getfloat("kernel", "kappa", 0.0))
        if kind == "separable":
            phi_expr = self.get("kernel", "phi", "1")
            eta_expr = self.get("kernel", "eta", "1")
            phi_f = compile_expression(phi_expr, ("y",))
            eta_f = compile_expression(eta_expr, ("t",))
            return BoundaryKernel.separable(
                self.getfloat("kernel", "kappa", 1.0),
                lambda y: np.asarray(phi_f(np.asarray(y, float)), float) * np.ones_like(y, dtype=float),
                lambda t: float(eta_f(float(t))),
                description=f"kappa*({phi_expr})*({eta_expr})")
        if kind == "table":
            return load_kernel_table(self.resolve(self.get("kernel", "table")))
        raise ConfigError(f"[kernel] kind: unknown {kind!r}")

    def resolve(self, path: Optional[str]) -> Path:
        if not path:
            raise ConfigError("missing path")
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def initial(self, params, dom: Domain1D, kernel: BoundaryKernel) -> InitialData:
        kind = self.get("initial", "kind", "zero")
        if kind == "zero":
            return InitialData.constant(0.0, dom)
        if kind == "constant":
            return InitialData.constant(self.getfloat("initial", "level", 0.0), dom)
        if kind == "compatible":
            return make_compatible_initial(self.getfloat("initial", "level", 1.0), kernel, params, dom)
        if kind == "expression":
            f = compile_expression(self.get("initial", "expr", "0"), ("x",))
            return InitialData.from_function(lambda x: np.asarray(f(x), float) * np.ones_like(x), dom)
        raise ConfigError(f"[initial] kind: unknown {kind!r}")

    def problem(self) -> Problem:
        prm = self.params()
        dom = self.domain()
        k = self.kernel()
        return Problem(prm, dom, k, self.initial(prm, dom, k))

    def solver(self) -> SolverConfig:
        d = SolverConfig()
        return SolverConfig(
            dt=self.getfloat("solver", "dt", d.dt),
            T_final=self.getfloat("solver", "T_final", d.T_final),
            epsilon=self.getfloat("solver", "epsilon", d.epsilon),
            clamp_policy=self.get("solver", "clamp_policy", d.clamp_policy),
            snapshot_stride=self.getint("solver", "snapshot_stride", d.snapshot_stride),
            adaptive=self.getbool("solver", "adaptive", d.adaptive),
            blowup_cap=self.getfloat("solver", "blowup_cap", d.blowup_cap),
        )

    def picard(self) -> PicardConfig:
        d = PicardConfig()
        return PicardConfig(
            N_g=self.getint("picard", "N_g", d.N_g),
            M_g=self.getint("picard", "M_g", d.M_g),
            T=self.getfloat("picard", "T", d.T),
            max_iter=self.getint("picard", "max_iter", d.max_iter),
            tol=self.getfloat("picard", "tol", d.tol),
        )

    def levels(self) -> list[tuple[int, float]]:
        raw = self.get("experiment", "levels")
        if raw is None:
            raise ConfigError("[experiment] levels is required, e.g. 51:1e-4, 101:1e-4, 201:1e-4")
        out = []
        for item in raw.split(","):
            try:
                n, dt = item.split(":")
                out.append((int(n), float(dt)))
            except ValueError:
                raise ConfigError(f"[experiment] levels: bad item {item.strip()!r}") from None
        return out


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if section not in KNOWN or key not in KNOWN[section]:
            raise ConfigError(f"unknown override key {lhs.strip()!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value.strip())


def load_settings(path=None, overrides=None) -> RunSettings:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"problem file {path} not found")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        base = p.resolve().parent
    for section in cp.sections():
        if section not in KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp.options(section):
            if key not in KNOWN[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
    apply_overrides(cp, overrides)
    return RunSettings(cp, base)


def load_kernel_table(path: Path) -> BoundaryKernel:
    """CSV with header ``boundary,y,t,value``; boundary is left/right (or 0/1)."""
    if not path.is_file():
        raise ConfigError(f"kernel table {path} not found")
    rows = {"left": [], "right": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"boundary", "y", "t", "value"}:
            raise ConfigError(f"{path}: expected columns boundary,y,t,value")
        for r in reader:
            side = {"0": "left", "1": "right"}.get(r["boundary"].strip(), r["boundary"].strip())
            if side not in rows:
                raise ConfigError(f"{path}: unknown boundary {r['boundary']!r}")
            rows[side].append((float(r["y"]), float(r["t"]), float(r["value"])))
    grids = []
    for side in ("left", "right"):
        arr = np.array(rows[side])
        if arr.size == 0:
            raise ConfigError(f"{path}: no rows for {side}")
        ys, ts = np.unique(arr[:, 0]), np.unique(arr[:, 1])
        if len(arr) != ys.size * ts.size:
            raise ConfigError(f"{path}: {side} table is not a full (y, t) grid")
        vals = np.empty((ys.size, ts.size))
        vals[np.searchsorted(ys, arr[:, 0]), np.searchsorted(ts, arr[:, 1])] = arr[:, 2]
        grids.append((ys, ts, vals))
    (yl, tl, vl), (yr, tr, vr) = grids
    if not (np.array_equal(yl, yr) and np.array_equal(tl, tr)):
        raise ConfigError(f"{path}: left and right tables must share the grid")
    try:
        return BoundaryKernel.tabulated(yl, tl, vl, vr)
    except MemlabError as exc:
        raise ConfigError(f"{path}: {exc}") from None
