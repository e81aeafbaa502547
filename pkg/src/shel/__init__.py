"""Sound per-variable backward error bounds for floating-point expression
programs: a composable lens library, a saturation-based bound synthesizer,
and numerical certification of every synthesized bound."""

from .expr import Add, Div, Expr, Mul, Sqrt, Sub, Var, format_expr, free_vars, parse_expr
from .numerics import (
    BINARY32,
    BINARY64,
    DEFAULT_PRECISION,
    EvalError,
    RoundingModel,
    eval_float,
    eval_real,
    rp_distance,
    unit_roundoff,
)
from .synth import EngineConfig, analyze, extract_derivation, query, saturate, seed
from .validate import certify

__all__ = [
    "Add", "Div", "Expr", "Mul", "Sqrt", "Sub", "Var",
    "format_expr", "free_vars", "parse_expr",
    "BINARY32", "BINARY64", "DEFAULT_PRECISION", "EvalError", "RoundingModel",
    "eval_float", "eval_real", "rp_distance", "unit_roundoff",
    "EngineConfig", "analyze", "extract_derivation", "query", "saturate", "seed",
    "certify",
]
