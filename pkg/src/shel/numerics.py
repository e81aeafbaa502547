"""Rounding model, exact and floating-point expression semantics, and the
relative-precision metric.

Machine arithmetic follows the multiplicative rounding model: every primitive
operation returns ``(x op y) * e**delta`` with ``|delta| <= eps = u/(1-u)``,
assuming results stay finite, normal and nonzero.  Deltas are extracted at
extended precision (mpmath) so downstream lens checks can reason about them
numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from mpmath import mp, mpf

from .expr import Add, Div, Expr, Mul, Sqrt, Sub, Var

DEFAULT_PRECISION = 256


class EvalError(ArithmeticError):
    """A rounding site produced zero, subnormal or non-finite output, or an
    operand violated an operator domain."""

    def __init__(self, message: str, site: str = ""):
        super().__init__(message if not site else f"{message} [site {site}]")
        self.site = site


@dataclass(frozen=True)
class RoundingModel:
    """Floating-point format parameters, all exact rationals."""

    name: str
    u: Fraction           # unit roundoff
    eps: Fraction         # u / (1 - u)
    max_finite: Fraction
    min_normal: Fraction

    def eps_mpf(self, prec: int = DEFAULT_PRECISION) -> mpf:
        with mp.workprec(prec):
            return mpf(self.eps.numerator) / self.eps.denominator

    def to_machine(self, x: float) -> float:
        """Round `x` to this format (identity for binary64)."""
        if self.name == "binary32":
            return float(np.float32(x))
        return float(x)


def _make_model(name: str, prec_bits: int, emax: int, emin: int) -> RoundingModel:
    u = Fraction(1, 2 ** prec_bits)
    return RoundingModel(
        name=name,
        u=u,
        eps=u / (1 - u),
        max_finite=(2 - Fraction(1, 2 ** (prec_bits - 1))) * 2 ** emax,
        min_normal=Fraction(1, 2 ** (-emin)),
    )


_MODELS = {
    "binary64": _make_model("binary64", 53, 1023, -1022),
    "binary32": _make_model("binary32", 24, 127, -126),
}


def unit_roundoff(format: str) -> RoundingModel:
    try:
        return _MODELS[format]
    except KeyError:
        raise ValueError(f"unsupported format: {format!r}") from None


BINARY64 = _MODELS["binary64"]
BINARY32 = _MODELS["binary32"]


# --- machine primitives ----------------------------------------------------

def machine_op(op: str, args: tuple[float, ...], model: RoundingModel) -> float:
    """One correctly-rounded machine operation in the model's format."""
    if model.name == "binary32":
        xs = [np.float32(a) for a in args]
        with np.errstate(all="ignore"):
            if op == "Add":
                r = xs[0] + xs[1]
            elif op == "Sub":
                r = xs[0] - xs[1]
            elif op == "Mul":
                r = xs[0] * xs[1]
            elif op == "Div":
                r = xs[0] / xs[1]
            elif op == "Sqrt":
                r = np.sqrt(np.abs(xs[0]))
            else:
                raise ValueError(op)
        return float(r)
    if op == "Add":
        return args[0] + args[1]
    if op == "Sub":
        return args[0] - args[1]
    if op == "Mul":
        return args[0] * args[1]
    if op == "Div":
        return args[0] / args[1]
    if op == "Sqrt":
        return math.sqrt(abs(args[0]))
    raise ValueError(op)


def _exact_op(op: str, args: tuple[float, ...]):
    """The op applied exactly (at working mpmath precision) to float args."""
    if op == "Add":
        return mpf(args[0]) + mpf(args[1])
    if op == "Sub":
        return mpf(args[0]) - mpf(args[1])
    if op == "Mul":
        return mpf(args[0]) * mpf(args[1])
    if op == "Div":
        return mpf(args[0]) / mpf(args[1])
    if op == "Sqrt":
        return mp.sqrt(abs(mpf(args[0])))
    raise ValueError(op)


def guard_result(z: float, model: RoundingModel, site: str = "") -> float:
    """Enforce the model's no-underflow/overflow assumption at one site."""
    if not math.isfinite(z):
        raise EvalError(f"non-finite result {z!r}", site)
    if z == 0.0:
        raise EvalError("exact zero at rounding site", site)
    if abs(z) < float(model.min_normal):
        raise EvalError(f"subnormal result {z!r}", site)
    return z


def rounded_op(op: str, args: tuple[float, ...], model: RoundingModel,
               prec: int = DEFAULT_PRECISION, site: str = "") -> tuple[float, mpf]:
    """Apply a machine op and return (result, delta) where
    delta = ln(result / exact), computed at precision `prec`."""
    z = machine_op(op, args, model)
    guard_result(z, model, site)
    with mp.workprec(prec):
        exact = _exact_op(op, args)
        delta = mp.log(mpf(z) / exact)
        limit = model.eps_mpf(prec) * (1 + mpf(2) ** (-(prec - 8)))
        if abs(delta) > limit:
            raise EvalError(f"delta {delta} exceeds eps; rounding mode not round-to-nearest?", site)
    return z, delta


# --- expression semantics ---------------------------------------------------

Valuation = dict  # variable name -> machine float

DeltaLog = list  # of (site: str, delta: mpf)


def eval_real(e: Expr, v: Valuation, prec: int = DEFAULT_PRECISION,
              strict_sqrt: bool = False) -> mpf:
    """Exact real semantics of `e` at precision `prec`.

    By default Sqrt is interpreted as sqrt(|x|); in strict mode a negative
    argument is a domain error.
    """
    with mp.workprec(prec):
        def ev(node: Expr) -> mpf:
            if isinstance(node, Var):
                try:
                    return mpf(v[node.name])
                except KeyError:
                    raise EvalError(f"unbound variable {node.name!r}") from None
            if isinstance(node, Sqrt):
                x = ev(node.child)
                if x < 0 and strict_sqrt:
                    raise EvalError("sqrt of negative value in strict mode")
                return mp.sqrt(abs(x))
            left = ev(node.left)
            right = ev(node.right)
            if isinstance(node, Add):
                return left + right
            if isinstance(node, Sub):
                return left - right
            if isinstance(node, Mul):
                return left * right
            if isinstance(node, Div):
                if right == 0:
                    raise EvalError("division by zero")
                return left / right
            raise TypeError(node)

        return ev(e)


def eval_float(e: Expr, v: Valuation, model: RoundingModel = BINARY64,
               prec: int = DEFAULT_PRECISION,
               strict_sqrt: bool = False) -> tuple[float, DeltaLog]:
    """Round-to-nearest machine evaluation of `e` with a per-site delta log.

    Sites are numbered in postorder (left child first); the result is
    bit-deterministic in (e, v, model).
    """
    log: DeltaLog = []
    counter = [0]

    def ev(node: Expr) -> float:
        if isinstance(node, Var):
            try:
                x = v[node.name]
            except KeyError:
                raise EvalError(f"unbound variable {node.name!r}") from None
            return model.to_machine(x)
        if isinstance(node, Sqrt):
            x = ev(node.child)
            if x < 0 and strict_sqrt:
                raise EvalError("sqrt of negative value in strict mode")
            args: tuple[float, ...] = (x,)
            op = "Sqrt"
        else:
            left = ev(node.left)
            right = ev(node.right)
            if isinstance(node, Div) and right == 0.0:
                raise EvalError("division by zero")
            args = (left, right)
            op = type(node).__name__
        site = f"{counter[0]}:{op}"
        counter[0] += 1
        z, delta = rounded_op(op, args, model, prec, site)
        log.append((site, delta))
        return z

    return ev(e), log


def rp_distance(x, y, prec: int = DEFAULT_PRECISION):
    """Relative-precision distance: 0 at (0,0), |ln(x/y)| for same-sign
    nonzero values, +inf otherwise."""
    with mp.workprec(prec):
        xm, ym = mpf(x) if not isinstance(x, mpf) else x, mpf(y) if not isinstance(y, mpf) else y
        if xm == 0 and ym == 0:
            return mpf(0)
        if xm == 0 or ym == 0 or (xm > 0) != (ym > 0):
            return mp.inf
        return abs(mp.log(xm / ym))


# --- exact audit certificates ----------------------------------------------
# Independent of the mpmath delta extraction: integer arithmetic only.

def delta_within_eps(op: str, args: tuple[float, ...], z: float,
                     model: RoundingModel) -> bool:
    """Exact certificate that |ln(z / (op args))| <= eps.

    Uses the identities 1 + eps = 1/(1-u) and e**-eps <= 1-u, so
    1-u <= z/exact <= 1/(1-u) is sufficient; round-to-nearest results always
    satisfy it.  For Sqrt the squared form is used.  Pure integer arithmetic.
    """
    d = model.u.denominator  # u = 1/d, d a power of two
    zn, zd = z.as_integer_ratio()
    if op == "Sqrt":
        a = abs(args[0])
        an, ad = a.as_integer_ratio()
        if z <= 0 or a == 0:
            return False
        # (1-u)^2 <= z^2/a <= (1+u)/(1-u)
        lhs_ok = zn * zn * ad * d * d >= an * zd * zd * (d - 1) * (d - 1)
        rhs_ok = zn * zn * ad * (d - 1) <= an * zd * zd * (d + 1)
        return lhs_ok and rhs_ok
    a, b = args
    an, ad = a.as_integer_ratio()
    bn, bd = b.as_integer_ratio()
    if op == "Add":
        tn, td = an * bd + bn * ad, ad * bd
    elif op == "Sub":
        tn, td = an * bd - bn * ad, ad * bd
    elif op == "Mul":
        tn, td = an * bn, ad * bd
    elif op == "Div":
        if b == 0:
            return False
        tn, td = an * bd, ad * bn
        if td < 0:
            tn, td = -tn, -td
    else:
        raise ValueError(op)
    if tn == 0 or zn == 0 or (tn > 0) != (zn > 0):
        return False
    if tn < 0:
        tn, zn = -tn, -zn
    # 1-u <= (zn/zd)/(tn/td) <= 1/(1-u)
    lhs_ok = zn * td * d >= tn * zd * (d - 1)
    rhs_ok = zn * td * (d - 1) <= tn * zd * d
    return lhs_ok and rhs_ok


def audit_rounding_model(op: str, n_samples: int, model: RoundingModel = BINARY64,
                         seed: int = 0) -> tuple[int, int]:
    """Sample `n_samples` operand tuples in the normal range and certify
    |delta| <= eps at every rounding site.  Returns (checked, violations)."""
    rng = np.random.default_rng(seed)
    checked = 0
    violations = 0
    emax = 30 if model.name == "binary32" else 64
    batch = 1 << 14
    while checked < n_samples:
        m = min(batch, n_samples - checked)
        mant = rng.uniform(1.0, 2.0, size=(m, 2))
        expo = rng.integers(-emax, emax, size=(m, 2))
        sign = rng.choice([-1.0, 1.0], size=(m, 2))
        vals = sign * mant * np.exp2(expo)
        for i in range(m):
            a = model.to_machine(float(vals[i, 0]))
            b = model.to_machine(float(vals[i, 1]))
            args = (a,) if op == "Sqrt" else (a, b)
            z = machine_op(op, args, model)
            if not math.isfinite(z) or z == 0.0 or abs(z) < float(model.min_normal):
                continue  # outside the model's guarantee
            checked += 1
            if not delta_within_eps(op, args, z, model):
                violations += 1
            if checked >= n_samples:
                break
    return checked, violations
