"""Semantic objects for the lens layer: value shapes with multiplicative
shift actions.

An object is a tree of three shapes.  A ``BaseObj`` holds n values sharing a
single shift dimension (n > 1 is the share product).  ``TensorObj`` pairs
objects with independent shifts.  ``StarObj`` is the push product: shifting
the root forces a scaled shift on each dependent, encoded by an integer
coefficient matrix per dependent (dependent shift dims x root shift dims).

Shifts are vectors of extended-precision reals acting by ``x * e**s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from mpmath import mp, mpf

from .numerics import DEFAULT_PRECISION


@dataclass(frozen=True)
class BaseObj:
    arity: int
    bound: Fraction

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("base needs at least one value")
        if self.bound < 0:
            raise ValueError("bound must be nonnegative")


@dataclass(frozen=True)
class TensorObj:
    parts: tuple


@dataclass(frozen=True)
class StarDep:
    obj: "ShelObject"
    coeffs: tuple  # rows: dep shift dims, cols: root shift dims (ints)


@dataclass(frozen=True)
class StarObj:
    root: "ShelObject"
    deps: tuple  # of StarDep


ShelObject = object  # BaseObj | TensorObj | StarObj

UNIT = TensorObj(())


def tensor(parts) -> ShelObject:
    """Tensor of objects with nested tensors flattened (associativity)."""
    flat = []
    for p in parts:
        if isinstance(p, TensorObj):
            flat.extend(p.parts)
        else:
            flat.append(p)
    return TensorObj(tuple(flat))


def value_arity(obj: ShelObject) -> int:
    if isinstance(obj, BaseObj):
        return obj.arity
    if isinstance(obj, TensorObj):
        return sum(value_arity(p) for p in obj.parts)
    if isinstance(obj, StarObj):
        return value_arity(obj.root) + sum(value_arity(d.obj) for d in obj.deps)
    raise TypeError(obj)


def shift_dim(obj: ShelObject) -> int:
    if isinstance(obj, BaseObj):
        return 1
    if isinstance(obj, TensorObj):
        return sum(shift_dim(p) for p in obj.parts)
    if isinstance(obj, StarObj):
        return shift_dim(obj.root) + sum(shift_dim(d.obj) for d in obj.deps)
    raise TypeError(obj)


def bounds(obj: ShelObject) -> tuple[Fraction, ...]:
    """Per-shift-dimension bounds, in eps units."""
    if isinstance(obj, BaseObj):
        return (obj.bound,)
    if isinstance(obj, TensorObj):
        out: tuple[Fraction, ...] = ()
        for p in obj.parts:
            out += bounds(p)
        return out
    if isinstance(obj, StarObj):
        out = bounds(obj.root)
        for d in obj.deps:
            out += bounds(d.obj)
        return out
    raise TypeError(obj)


def zero_shift(obj: ShelObject) -> tuple:
    return (mpf(0),) * shift_dim(obj)


def shift_norm(shift) -> tuple:
    return tuple(abs(s) for s in shift)


def act(obj: ShelObject, values, shift, prec: int = DEFAULT_PRECISION) -> tuple:
    """Apply a shift to values under the object's group action."""
    values = tuple(values)
    shift = tuple(shift)
    if len(values) != value_arity(obj):
        raise ValueError(f"value arity mismatch: {len(values)} != {value_arity(obj)}")
    if len(shift) != shift_dim(obj):
        raise ValueError(f"shift arity mismatch: {len(shift)} != {shift_dim(obj)}")
    with mp.workprec(prec):
        return _act(obj, values, shift)


def _act(obj, values, shift):
    if isinstance(obj, BaseObj):
        factor = mp.exp(shift[0])
        return tuple(mpf(v) * factor for v in values)
    if isinstance(obj, TensorObj):
        out = ()
        vi = si = 0
        for p in obj.parts:
            va, sa = value_arity(p), shift_dim(p)
            out += _act(p, values[vi:vi + va], shift[si:si + sa])
            vi += va
            si += sa
        return out
    if isinstance(obj, StarObj):
        rva, rsa = value_arity(obj.root), shift_dim(obj.root)
        root_shift = shift[:rsa]
        out = _act(obj.root, values[:rva], root_shift)
        vi, si = rva, rsa
        for d in obj.deps:
            va, sa = value_arity(d.obj), shift_dim(d.obj)
            injected = tuple(
                shift[si + r] + mp.fsum(d.coeffs[r][c] * root_shift[c] for c in range(rsa))
                for r in range(sa)
            )
            out += _act(d.obj, values[vi:vi + va], injected)
            vi += va
            si += sa
        return out
    raise TypeError(obj)


def scale_matrix(n: int) -> tuple:
    """Coefficient matrix for the one-dimensional homomorphism s -> n*s."""
    return ((n,),)


def star1(root: ShelObject, dep: ShelObject, scale: int) -> StarObj:
    """Push product of two objects with a single root shift dimension."""
    if shift_dim(root) != 1 or shift_dim(dep) != 1:
        raise ValueError("star1 expects one shift dimension on each side")
    return StarObj(root, (StarDep(dep, scale_matrix(scale)),))
