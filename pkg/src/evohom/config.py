"""JSON run configuration: schema, defaults and construction of the problem objects.

Spatial data (``u_init``, ``R_init``, ``f`` and optionally the entries of
``D``) are given as arithmetic expressions in ``x``, ``y`` and ``t`` built
from numbers, ``+ - * / **``, ``pi``, ``e`` and the functions listed in
``FUNCTIONS``.
"""
from __future__ import annotations

import ast
import copy
import json
from pathlib import Path

import jsonschema
import numpy as np

from .geometry import CellGeometry, CutoffProfile, RadiusBounds
from .kinetics import Kinetics, ProblemData

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
             "sqrt": np.sqrt, "tanh": np.tanh, "abs": np.abs}
CONSTANTS = {"pi": np.pi, "e": np.e}
_VARS = ("x", "y", "t")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_expr = {"oneOf": [{"type": "number"}, {"type": "string", "minLength": 1}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "evohom run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": {
            "type": "object", "additionalProperties": False,
            "properties": {"r_lo": _pos, "r_hi": _pos, "delta0": _pos},
        },
        "kinetics": {
            "type": "object", "additionalProperties": False,
            "properties": {"u_eq": _num, "k_rate": {"type": "number", "minimum": 0}, "cap": _pos,
                           "eta": _pos, "window": _pos, "windowed": {"type": "boolean"}},
        },
        "problem": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "rho": _pos,
                "D": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _expr}},
                "f": _expr, "u_init": _expr, "R_init": _expr,
            },
        },
        "cell": {
            "type": "object", "additionalProperties": False,
            "properties": {"h": _pos, "grid_size": {"type": "integer", "minimum": 8}, "tol": _pos,
                           "table": {"type": "string"}},
        },
        "micro": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps": _pos, "h_cell": _pos, "T": {"type": "number", "minimum": 0},
                           "dt": _pos, "tol": _pos, "output_stride": {"type": "integer", "minimum": 0},
                           "extents": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                       "minItems": 2, "maxItems": 2}},
        },
        "macro": {
            "type": "object", "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 1}, "T": {"type": "number", "minimum": 0},
                           "dt": _pos, "tol": _pos, "explicit_q": {"type": "boolean"},
                           "output_stride": {"type": "integer", "minimum": 0}},
        },
        "sweep": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps": {"type": "array", "items": _pos, "minItems": 2},
                           "T": {"type": "number", "minimum": 0}, "dt": _pos},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "vtk": {"type": "boolean"},
                           "matrix_dump": {"type": "boolean"}},
        },
    },
}

DEFAULTS = {
    "geometry": {"r_lo": 0.15, "r_hi": 0.35, "delta0": 0.1},
    "kinetics": {"u_eq": 1.0, "k_rate": 1.0, "cap": 2.0, "eta": 1e-3, "window": 0.05, "windowed": True},
    # rho has no reference magnitude; 2 > u_eq is an arbitrary choice
    "problem": {"rho": 2.0, "D": [[1.0, 0.0], [0.0, 1.0]], "f": 0.0,
                "u_init": "1 + 0.3*cos(pi*x)", "R_init": "0.25 + 0.02*cos(pi*y)"},
    "cell": {"h": 0.025, "grid_size": 64, "tol": 1e-12},
    "micro": {"eps": 0.25, "h_cell": 0.05, "T": 1.0, "dt": 0.01, "tol": 1e-12, "output_stride": 0,
              "extents": [1, 1]},
    "macro": {"n": 32, "T": 1.0, "dt": 0.01, "tol": 1e-12, "explicit_q": False, "output_stride": 0},
    "sweep": {"eps": [0.5, 0.25, 0.125], "T": 0.5, "dt": 0.005},
    "output": {"dir": "out", "vtk": False, "matrix_dump": False},
}


class ExpressionError(ValueError):
    pass


def _check_node(node):
    allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Call, ast.Load,
               ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)
    for n in ast.walk(node):
        if not isinstance(n, allowed):
            raise ExpressionError(f"disallowed syntax {type(n).__name__}")
        if isinstance(n, ast.Name) and n.id not in _VARS and n.id not in CONSTANTS and n.id not in FUNCTIONS:
            raise ExpressionError(f"unknown name {n.id!r}")
        if isinstance(n, ast.Call) and (not isinstance(n.func, ast.Name) or n.func.id not in FUNCTIONS
                                        or n.keywords or len(n.args) != 1):
            raise ExpressionError("only one-argument calls of the listed functions are allowed")
        if isinstance(n, ast.Constant) and not isinstance(n.value, (int, float)):
            raise ExpressionError("only numeric constants are allowed")


def compile_expression(src):
    """Return ``fn(t, X)`` evaluating a number or expression at points ``X`` of shape ``(..., 2)``."""
    if isinstance(src, (int, float)):
        val = float(src)
        return lambda t, X: np.full(np.asarray(X).shape[:-1], val)
    tree = ast.parse(str(src), mode="eval")
    _check_node(tree)
    code = compile(tree, "<config expression>", "eval")
    env = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}

    def fn(t, X):
        X = np.asarray(X, dtype=float)
        val = eval(code, env, {"x": X[..., 0], "y": X[..., 1], "t": t})  # noqa: S307 - AST whitelisted above
        return np.broadcast_to(np.asarray(val, dtype=float), X.shape[:-1]).copy()

    return fn


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source=None) -> dict:
    """Validate a config (path, JSON string or dict) and fill in defaults."""
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        p = Path(source)
        raw = json.loads(p.read_text(encoding="utf-8"))
    jsonschema.validate(raw, SCHEMA)
    cfg = _merge(DEFAULTS, raw)
    jsonschema.validate(cfg, SCHEMA)
    for key in ("f", "u_init", "R_init"):
        compile_expression(cfg["problem"][key])
    return cfg


def geometry_from(cfg: dict) -> CellGeometry:
    g = cfg["geometry"]
    return CellGeometry(RadiusBounds(g["r_lo"], g["r_hi"]), CutoffProfile(g["delta0"]))


def problem_from(cfg: dict) -> ProblemData:
    geom = geometry_from(cfg)
    kin = Kinetics(geometry=geom, **cfg["kinetics"])
    p = cfg["problem"]
    u0 = compile_expression(p["u_init"])
    R0 = compile_expression(p["R_init"])
    f = p["f"]
    f_val = float(f) if isinstance(f, (int, float)) else compile_expression(f)
    D = p["D"]
    if all(isinstance(v, (int, float)) for row in D for v in row):
        D_val = np.asarray(D, dtype=float)
    else:
        parts = [[compile_expression(v) for v in row] for row in D]

        def D_val(X):
            return np.stack([np.stack([parts[i][j](0.0, X) for j in range(2)], -1) for i in range(2)], -2)

    return ProblemData(kinetics=kin, D=D_val, f=f_val, rho=p["rho"],
                       u_init=lambda X: u0(0.0, X), R_init=lambda X: R0(0.0, X))


def write_schema(path) -> None:
    Path(path).write_text(json.dumps(SCHEMA, indent=2) + "\n", encoding="utf-8")
