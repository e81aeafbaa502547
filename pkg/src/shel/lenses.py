"""Executable backward-error lenses.

A lens is a triple (f, f_fl, b): the exact map, the machine-float map with
per-site rounding shifts recorded, and the backward map carrying a shift on
the output to a shift on the input.  Bounds live on the source/target
objects, in eps units, and every bound computation is exact rational
arithmetic.

``check_conditions`` numerically verifies the two morphism conditions on
random samples: (1) f(x * b(t)) equals f_fl(x) * t at extended precision and
(2) the backward shift stays within the source bound.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from mpmath import mp, mpf

from .numerics import (
    BINARY64,
    DEFAULT_PRECISION,
    EvalError,
    RoundingModel,
    rounded_op,
    rp_distance,
)
from .objects import (
    BaseObj,
    StarDep,
    StarObj,
    TensorObj,
    act,
    bounds,
    scale_matrix,
    shift_dim,
    star1,
    tensor,
    value_arity,
    zero_shift,
)


class LensShapeError(ValueError):
    """Source/target shapes or bounds do not line up."""


class ShiftBoundError(ValueError):
    """A shift handed to a backward map exceeds the object bound."""


class Lens:
    """Base class.  Subclasses set source/target objects and n_sites."""

    source = None
    target = None
    n_sites = 0
    label = "?"

    def fwd_exact(self, xs):
        """Exact map on extended-precision values (ambient mp precision)."""
        raise NotImplementedError

    def fwd_float(self, xs, model: RoundingModel, prec: int):
        """Machine map; returns (outputs, deltas, aux)."""
        raise NotImplementedError

    def backward(self, t, deltas, aux):
        """Carry a target shift back to a source shift."""
        raise NotImplementedError

    def input_profile(self):
        return ("any",) * value_arity(self.source)

    def __repr__(self):
        return f"<lens {self.label}>"


@dataclass
class LensInstance:
    """A lens bound at a concrete input: float outputs plus recorded deltas."""

    spec: Lens
    inputs: tuple
    outputs: tuple
    deltas: tuple
    aux: object
    model: RoundingModel
    prec: int

    def backward(self, t) -> tuple:
        t = tuple(mpf(v) for v in t)
        if len(t) != shift_dim(self.spec.target):
            raise ShiftBoundError("shift arity mismatch")
        with mp.workprec(self.prec):
            eps = self.model.eps_mpf(self.prec)
            slack = mpf(2) ** (-(self.prec - 16))
            for v, q in zip(t, bounds(self.spec.target)):
                if abs(v) > mpf(q.numerator) / q.denominator * eps + slack:
                    raise ShiftBoundError(f"target shift {v} exceeds bound {q}*eps")
            return self.spec.backward(t, self.deltas, self.aux)

    def witness(self) -> tuple:
        """Backward-stability witness: the input acted on by backward(0)."""
        with mp.workprec(self.prec):
            b0 = self.backward(zero_shift(self.spec.target))
            return act(self.spec.source, self.inputs, b0, self.prec)


def bind(lens: Lens, xs, model: RoundingModel = BINARY64,
         prec: int = DEFAULT_PRECISION) -> LensInstance:
    xs = tuple(model.to_machine(float(x)) for x in xs)
    if len(xs) != value_arity(lens.source):
        raise LensShapeError("input arity mismatch")
    with mp.workprec(prec):
        ys, deltas, aux = lens.fwd_float(xs, model, prec)
    return LensInstance(lens, xs, tuple(ys), tuple(deltas), aux, model, prec)


def compose(first: Lens, second: Lens) -> Lens:
    return Compose(first, second)


def parallel(*children: Lens) -> Lens:
    return Parallel(tuple(children))


# --- primitive lenses -------------------------------------------------------

class PrimAdd(Lens):
    op = "Add"
    label = "add"

    def __init__(self, p: Fraction):
        p = Fraction(p)
        if p < 0:
            raise LensShapeError("bound must be nonnegative")
        self.p = p
        self.source = BaseObj(2, p + 1)
        self.target = BaseObj(1, p)
        self.n_sites = 1

    def fwd_exact(self, xs):
        return (mpf(xs[0]) + mpf(xs[1]),)

    def fwd_float(self, xs, model, prec):
        z, d = rounded_op(self.op, xs, model, prec, self.label)
        return (z,), (d,), None

    def backward(self, t, deltas, aux):
        return (t[0] + deltas[0],)


class PrimSub(PrimAdd):
    op = "Sub"
    label = "sub"

    def fwd_exact(self, xs):
        return (mpf(xs[0]) - mpf(xs[1]),)


class PrimMul(Lens):
    label = "mul"

    def __init__(self, p: Fraction):
        p = Fraction(p)
        self.p = p
        self.source = BaseObj(2, (p + 1) / 2)
        self.target = BaseObj(1, p)
        self.n_sites = 1

    def fwd_exact(self, xs):
        return (mpf(xs[0]) * mpf(xs[1]),)

    def fwd_float(self, xs, model, prec):
        z, d = rounded_op("Mul", xs, model, prec, self.label)
        return (z,), (d,), None

    def backward(self, t, deltas, aux):
        return ((t[0] + deltas[0]) / 2,)


class PrimDiv(Lens):
    """Division pushing all error onto the numerator; returns 0 when the
    denominator is exactly 0 (that branch records delta = 0)."""

    label = "div"

    def __init__(self, p: Fraction):
        p = Fraction(p)
        self.p = p
        self.source = tensor((BaseObj(1, p + 1), BaseObj(1, Fraction(0))))
        self.target = BaseObj(1, p)
        self.n_sites = 1

    def fwd_exact(self, xs):
        if xs[1] == 0:
            return (mpf(0),)
        return (mpf(xs[0]) / mpf(xs[1]),)

    def fwd_float(self, xs, model, prec):
        if xs[1] == 0.0:
            return (0.0,), (mpf(0),), None
        z, d = rounded_op("Div", xs, model, prec, self.label)
        return (z,), (d,), None

    def backward(self, t, deltas, aux):
        return (t[0] + deltas[0], mpf(0))


class PrimSqrt(Lens):
    label = "sqrt"

    def __init__(self, p: Fraction):
        p = Fraction(p)
        self.p = p
        self.source = BaseObj(1, 2 * p + 2)
        self.target = BaseObj(1, p)
        self.n_sites = 1

    def fwd_exact(self, xs):
        return (mp.sqrt(abs(mpf(xs[0]))),)

    def fwd_float(self, xs, model, prec):
        z, d = rounded_op("Sqrt", xs, model, prec, self.label)
        return (z,), (d,), None

    def backward(self, t, deltas, aux):
        return (2 * t[0] + 2 * deltas[0],)


class PrimLog(Lens):
    """Correctly rounded natural log on [1, a], a = largest finite value.

    The backward map is value-dependent: the witness for an output shift s is
    exp(f_fl(x) * e**s), expressed as a shift on x.
    """

    label = "log"

    def __init__(self, p: Fraction, model: RoundingModel = BINARY64):
        p = Fraction(p)
        if p * model.eps > 1:
            raise LensShapeError("log lens requires p*eps <= 1")
        self.p = p
        self.a = model.max_finite
        self.source = BaseObj(1, 3 * self.a * (p + 1))
        self.target = BaseObj(1, p)
        self.n_sites = 1

    def input_profile(self):
        return ("log",)

    def fwd_exact(self, xs):
        x = mpf(xs[0])
        if x < 1:
            raise EvalError("log lens domain is [1, max_finite]")
        return (mp.log(x),)

    def fwd_float(self, xs, model, prec):
        x = xs[0]
        if not (1 <= x <= float(self.a)):
            raise EvalError("log lens domain is [1, max_finite]")
        with mp.workprec(prec):
            exact = mp.log(mpf(x))
            z = model.to_machine(float(exact))
            if z == 0.0:
                raise EvalError("log output is zero (x == 1)")
            d = mp.log(mpf(z) / exact)
        return (z,), (d,), (x, z)

    def backward(self, t, deltas, aux):
        x, z = aux
        return (mpf(z) * mp.exp(t[0]) - mp.log(mpf(x)),)


class PrimDMul(Lens):
    """Multiplication threading its first argument through and pushing all
    rounding error onto the second; raises the star scale from n to n+1."""

    def __init__(self, n: int, p: Fraction, q: Fraction):
        if n < 0:
            raise LensShapeError("scale must be nonnegative")
        p, q = Fraction(p), Fraction(q)
        self.n, self.p, self.q = n, p, q
        self.label = f"dmul:{n}"
        if n == 0:
            self.source = tensor((BaseObj(1, p), BaseObj(1, q + 1)))
        else:
            self.source = star1(BaseObj(1, p), BaseObj(1, q + 1), n)
        self.target = star1(BaseObj(1, p), BaseObj(1, q), n + 1)
        self.n_sites = 1

    def fwd_exact(self, xs):
        return (mpf(xs[0]), mpf(xs[0]) * mpf(xs[1]))

    def fwd_float(self, xs, model, prec):
        z, d = rounded_op("Mul", xs, model, prec, self.label)
        return (xs[0], z), (d,), None

    def backward(self, t, deltas, aux):
        return (t[0], t[1] + deltas[0])


class PrimAddDiv(Lens):
    """Addition then division, pushing the error of both operations onto the
    numerator (the star dependent); returns 0 when the denominators sum to 0."""

    label = "adddiv"

    def __init__(self, p1: Fraction, p2: Fraction, scale: int = 1):
        p1, p2 = Fraction(p1), Fraction(p2)
        self.p1, self.p2 = p1, p2
        self.source = star1(BaseObj(2, p1), BaseObj(1, p2 + 2), scale)
        self.target = BaseObj(1, p2)
        self.n_sites = 2

    def fwd_exact(self, xs):
        x, y, z = (mpf(v) for v in xs)
        if x + y == 0:
            return (mpf(0),)
        return (z / (x + y),)

    def fwd_float(self, xs, model, prec):
        x, y, z = xs
        if x + y == 0.0:
            return (0.0,), (mpf(0), mpf(0)), None
        s, d1 = rounded_op("Add", (x, y), model, prec, "adddiv/add")
        q, d2 = rounded_op("Div", (z, s), model, prec, "adddiv/div")
        return (q,), (d1, d2), None

    def backward(self, t, deltas, aux):
        return (mpf(0), t[0] + deltas[1] - deltas[0])


# --- structural lenses ------------------------------------------------------

class Identity(Lens):
    label = "id"
    n_sites = 0

    def __init__(self, obj):
        self.source = obj
        self.target = obj

    def fwd_exact(self, xs):
        return tuple(mpf(x) for x in xs)

    def fwd_float(self, xs, model, prec):
        return tuple(xs), (), None

    def backward(self, t, deltas, aux):
        return tuple(t)


class Dup(Lens):
    """Duplication onto the share product: both copies take the same shift."""

    label = "dup"
    n_sites = 0

    def __init__(self, base: BaseObj):
        self.source = base
        self.target = BaseObj(2 * base.arity, base.bound)

    def fwd_exact(self, xs):
        xs = tuple(mpf(x) for x in xs)
        return xs + xs

    def fwd_float(self, xs, model, prec):
        return tuple(xs) + tuple(xs), (), None

    def backward(self, t, deltas, aux):
        return (t[0],)


class ShareTensor(Lens):
    """Bond two equal-bound bases so they are always perturbed identically."""

    label = "share"
    n_sites = 0

    def __init__(self, n1: int, n2: int, p: Fraction):
        p = Fraction(p)
        self.source = tensor((BaseObj(n1, p), BaseObj(n2, p)))
        self.target = BaseObj(n1 + n2, p)

    def fwd_exact(self, xs):
        return tuple(mpf(x) for x in xs)

    def fwd_float(self, xs, model, prec):
        return tuple(xs), (), None

    def backward(self, t, deltas, aux):
        return (t[0], t[0])


class Rearrange(Lens):
    """Structural isomorphism: permutes value slots and shift dimensions.

    Only built from symmetry/associativity moves (tensor permutation, in-base
    reordering, unit elimination, scale-0 dependent hoisting), all of which
    are invertible morphisms.
    """

    label = "rearrange"
    n_sites = 0

    def __init__(self, source, target, value_map, shift_map, label="rearrange"):
        # value_map[i] = source slot feeding target slot i
        # shift_map[j] = source dim receiving target dim j under backward
        if value_arity(source) != value_arity(target):
            raise LensShapeError("value arity mismatch")
        if shift_dim(source) != shift_dim(target):
            raise LensShapeError("shift arity mismatch")
        if sorted(value_map) != list(range(value_arity(source))):
            raise LensShapeError("value map is not a permutation")
        if sorted(shift_map) != list(range(shift_dim(source))):
            raise LensShapeError("shift map is not a permutation")
        sb, tb = bounds(source), bounds(target)
        for j, d in enumerate(shift_map):
            if sb[d] != tb[j]:
                raise LensShapeError("bounds not preserved by rearrangement")
        self.source = source
        self.target = target
        self.value_map = tuple(value_map)
        self.shift_map = tuple(shift_map)
        self.label = label

    def fwd_exact(self, xs):
        return tuple(mpf(xs[i]) for i in self.value_map)

    def fwd_float(self, xs, model, prec):
        return tuple(xs[i] for i in self.value_map), (), None

    def backward(self, t, deltas, aux):
        s = [mpf(0)] * len(self.shift_map)
        for j, d in enumerate(self.shift_map):
            s[d] = t[j]
        return tuple(s)


def lens_swap(a, b) -> Rearrange:
    """Symmetry of the tensor product."""
    src = tensor((a, b))
    tgt = tensor((b, a))
    va, sa = value_arity(a), shift_dim(a)
    vb, sb = value_arity(b), shift_dim(b)
    vmap = list(range(va, va + vb)) + list(range(va))
    smap = list(range(sa, sa + sb)) + list(range(sa))
    return Rearrange(src, tgt, vmap, smap, label="swap")


def lens_assoc(a, b, c) -> Lens:
    """Associator; the tensor is kept flattened, so this is the identity on
    the flattened object."""
    return Identity(tensor((a, b, c)))


def lens_unitor(obj) -> Rearrange:
    """Eliminate the unit from a tensor wrapping a single object."""
    src = TensorObj((obj,))
    n, d = value_arity(obj), shift_dim(obj)
    return Rearrange(src, obj, list(range(n)), list(range(d)), label="unitor")


class Compose(Lens):
    def __init__(self, first: Lens, second: Lens):
        if first.target != second.source:
            raise LensShapeError(
                f"cannot compose {first.label} -> {second.label}: "
                f"{first.target} != {second.source}")
        self.first = first
        self.second = second
        self.source = first.source
        self.target = second.target
        self.n_sites = first.n_sites + second.n_sites
        self.label = f"({first.label} ; {second.label})"

    def fwd_exact(self, xs):
        return self.second.fwd_exact(self.first.fwd_exact(xs))

    def fwd_float(self, xs, model, prec):
        ys, d1, a1 = self.first.fwd_float(xs, model, prec)
        zs, d2, a2 = self.second.fwd_float(ys, model, prec)
        return zs, tuple(d1) + tuple(d2), (a1, a2)

    def backward(self, t, deltas, aux):
        k = self.first.n_sites
        a1, a2 = aux if aux is not None else (None, None)
        mid = self.second.backward(t, deltas[k:], a2)
        return self.first.backward(mid, deltas[:k], a1)


class Parallel(Lens):
    """Tensor of lenses acting componentwise."""

    def __init__(self, children: tuple):
        self.children = tuple(children)
        self.source = tensor(tuple(c.source for c in self.children))
        self.target = tensor(tuple(c.target for c in self.children))
        self.n_sites = sum(c.n_sites for c in self.children)
        self.label = " | ".join(c.label for c in self.children)

    def input_profile(self):
        out = ()
        for c in self.children:
            out += tuple(c.input_profile())
        return out

    def _slices(self):
        vi = si = di = svi = ssi = 0
        for c in self.children:
            sv, ss = value_arity(c.source), shift_dim(c.source)
            tv, ts = value_arity(c.target), shift_dim(c.target)
            yield c, (svi, svi + sv), (vi, vi + tv), (ssi, ssi + ss), (si, si + ts), (di, di + c.n_sites)
            vi += tv
            si += ts
            di += c.n_sites
            svi += sv
            ssi += ss

    def fwd_exact(self, xs):
        out = ()
        for c, (a, b), _, _, _, _ in self._slices():
            out += tuple(c.fwd_exact(xs[a:b]))
        return out

    def fwd_float(self, xs, model, prec):
        out = ()
        deltas = ()
        aux = []
        for c, (a, b), _, _, _, _ in self._slices():
            ys, ds, ax = c.fwd_float(xs[a:b], model, prec)
            out += tuple(ys)
            deltas += tuple(ds)
            aux.append(ax)
        return out, deltas, tuple(aux)

    def backward(self, t, deltas, aux):
        out = ()
        for i, (c, _, _, _, (a, b), (da, db)) in enumerate(self._slices()):
            ax = aux[i] if aux is not None else None
            out += tuple(c.backward(t[a:b], deltas[da:db], ax))
        return out


class StarLens(Lens):
    """Componentwise lenses under a push product (root lens, one lens per
    dependent).  Only constructed in cases where the push-parallel side
    condition is discharged: identity or share on the root, and value maps on
    dependents commuting with uniform scaling (id, share, add, sqrt with
    halved scale, and the like)."""

    def __init__(self, root_lens: Lens, dep_lenses: tuple, src_coeffs: tuple,
                 tgt_coeffs: tuple, label: str = "star"):
        self.root_lens = root_lens
        self.dep_lenses = tuple(dep_lenses)
        self.source = StarObj(root_lens.source, tuple(
            StarDep(c.source, sc) for c, sc in zip(self.dep_lenses, src_coeffs)))
        self.target = StarObj(root_lens.target, tuple(
            StarDep(c.target, tc) for c, tc in zip(self.dep_lenses, tgt_coeffs)))
        self.n_sites = root_lens.n_sites + sum(c.n_sites for c in self.dep_lenses)
        self.label = label

    def input_profile(self):
        out = tuple(self.root_lens.input_profile())
        for c in self.dep_lenses:
            out += tuple(c.input_profile())
        return out

    def _parts(self):
        return (self.root_lens,) + self.dep_lenses

    def fwd_exact(self, xs):
        out = ()
        i = 0
        for c in self._parts():
            n = value_arity(c.source)
            out += tuple(c.fwd_exact(xs[i:i + n]))
            i += n
        return out

    def fwd_float(self, xs, model, prec):
        out = ()
        deltas = ()
        aux = []
        i = 0
        for c in self._parts():
            n = value_arity(c.source)
            ys, ds, ax = c.fwd_float(xs[i:i + n], model, prec)
            out += tuple(ys)
            deltas += tuple(ds)
            aux.append(ax)
            i += n
        return out, deltas, tuple(aux)

    def backward(self, t, deltas, aux):
        out = ()
        ti = di = 0
        for k, c in enumerate(self._parts()):
            ts = shift_dim(c.target)
            ax = aux[k] if aux is not None else None
            out += tuple(c.backward(t[ti:ti + ts], deltas[di:di + c.n_sites], ax))
            ti += ts
            di += c.n_sites
        return out


def _star_parts(star: StarObj):
    """(value, shift) offsets for root and each dependent of a star."""
    offs = []
    vi, si = 0, 0
    for part in (star.root,) + tuple(d.obj for d in star.deps):
        offs.append((vi, vi + value_arity(part), si, si + shift_dim(part)))
        vi += value_arity(part)
        si += shift_dim(part)
    return offs


class DMulAt(Lens):
    """dmul applied to one dependent of a star, multiplying it by a chosen
    root value; other dependents pass through."""

    def __init__(self, star_src: StarObj, dep_index: int, root_val_index: int):
        dep = star_src.deps[dep_index]
        if not isinstance(dep.obj, BaseObj) or dep.obj.arity != 1:
            raise LensShapeError("dmul dependent must be a single-value base")
        if shift_dim(star_src.root) != 1:
            raise LensShapeError("dmul expects one root shift dimension")
        n = dep.coeffs[0][0]
        new_dep = StarDep(BaseObj(1, dep.obj.bound - 1), scale_matrix(n + 1))
        if new_dep.obj.bound < 0:
            raise LensShapeError("dependent bound must be at least 1")
        self.source = star_src
        self.target = StarObj(star_src.root, star_src.deps[:dep_index] + (new_dep,)
                              + star_src.deps[dep_index + 1:])
        self.dep_index = dep_index
        self.root_val_index = root_val_index
        self.n_sites = 1
        self.label = f"dmul@{dep_index}"

    def fwd_exact(self, xs):
        offs = _star_parts(self.source)
        a, b, _, _ = offs[self.dep_index + 1]
        r = mpf(xs[self.root_val_index])
        out = tuple(mpf(x) for x in xs)
        return out[:a] + (r * out[a],) + out[b:]

    def fwd_float(self, xs, model, prec):
        offs = _star_parts(self.source)
        a, b, _, _ = offs[self.dep_index + 1]
        z, d = rounded_op("Mul", (xs[self.root_val_index], xs[a]), model, prec, self.label)
        return tuple(xs[:a]) + (z,) + tuple(xs[b:]), (d,), None

    def backward(self, t, deltas, aux):
        offs = _star_parts(self.source)
        _, _, sa, _ = offs[self.dep_index + 1]
        out = list(t)
        out[sa] = out[sa] + deltas[0]
        return tuple(out)


class PushAt(Lens):
    """Adjust one dependent's homomorphism scale, paying |m - n| times the
    root bound on that dependent's bound."""

    n_sites = 0

    def __init__(self, star_src: StarObj, dep_index: int, new_scale: int):
        dep = star_src.deps[dep_index]
        if shift_dim(star_src.root) != 1 or shift_dim(dep.obj) != 1:
            raise LensShapeError("push expects one shift dimension on each side")
        m = dep.coeffs[0][0]
        n = new_scale
        root_bound = bounds(star_src.root)[0]
        cost = abs(m - n) * root_bound
        if not isinstance(dep.obj, BaseObj) or dep.obj.bound < cost:
            raise LensShapeError("dependent bound cannot absorb the scale change")
        new_dep = StarDep(BaseObj(dep.obj.arity, dep.obj.bound - cost), scale_matrix(n))
        self.source = star_src
        self.target = StarObj(star_src.root, star_src.deps[:dep_index] + (new_dep,)
                              + star_src.deps[dep_index + 1:])
        self.dep_index = dep_index
        self.m, self.n = m, n
        self.label = f"push:{m}->{n}@{dep_index}"

    def fwd_exact(self, xs):
        return tuple(mpf(x) for x in xs)

    def fwd_float(self, xs, model, prec):
        return tuple(xs), (), None

    def backward(self, t, deltas, aux):
        offs = _star_parts(self.source)
        _, _, sa, _ = offs[self.dep_index + 1]
        out = list(t)
        out[sa] = out[sa] + (self.n - self.m) * t[0]
        return tuple(out)


class ShareStarAt(Lens):
    """Merge one dependent (scale n, bound >= |1 - n| * root bound) into the
    root share base; remaining dependents keep their scales."""

    n_sites = 0

    def __init__(self, star_src: StarObj, dep_index: int):
        root = star_src.root
        dep = star_src.deps[dep_index]
        if not isinstance(root, BaseObj) or not isinstance(dep.obj, BaseObj):
            raise LensShapeError("share_star expects base root and dependent")
        n = dep.coeffs[0][0]
        if dep.obj.bound < abs(1 - n) * root.bound:
            raise LensShapeError(
                f"dependent bound {dep.obj.bound} below |1-n|*root = {abs(1 - n) * root.bound}")
        merged = BaseObj(root.arity + dep.obj.arity, root.bound)
        rest = star_src.deps[:dep_index] + star_src.deps[dep_index + 1:]
        self.source = star_src
        self.target = merged if not rest else StarObj(merged, rest)
        self.dep_index = dep_index
        self.n = n
        self.label = f"share_star:{n}"

    def _perm(self):
        offs = _star_parts(self.source)
        ra, rb, _, _ = offs[0]
        da, db, _, _ = offs[self.dep_index + 1]
        order = list(range(ra, rb)) + list(range(da, db))
        for k, (a, b, _, _) in enumerate(offs[1:], start=1):
            if k != self.dep_index + 1:
                order += list(range(a, b))
        return order

    def fwd_exact(self, xs):
        return tuple(mpf(xs[i]) for i in self._perm())

    def fwd_float(self, xs, model, prec):
        return tuple(xs[i] for i in self._perm()), (), None

    def backward(self, t, deltas, aux):
        offs = _star_parts(self.source)
        s = [mpf(0)] * shift_dim(self.source)
        s[0] = t[0]
        s[offs[self.dep_index + 1][2]] = (1 - self.n) * t[0]
        ti = 1
        for k in range(1, len(offs)):
            if k != self.dep_index + 1:
                s[offs[k][2]] = t[ti]
                ti += 1
        return tuple(s)


class ShareDepsAt(Lens):
    """Merge two adjacent dependents with equal scale and bound into one
    share base dependent."""

    n_sites = 0

    def __init__(self, star_src: StarObj, dep_index: int):
        d1 = star_src.deps[dep_index]
        d2 = star_src.deps[dep_index + 1]
        if d1.coeffs != d2.coeffs or d1.obj.bound != d2.obj.bound:
            raise LensShapeError("dependents must agree on scale and bound")
        merged = StarDep(BaseObj(d1.obj.arity + d2.obj.arity, d1.obj.bound), d1.coeffs)
        self.source = star_src
        self.target = StarObj(star_src.root, star_src.deps[:dep_index] + (merged,)
                              + star_src.deps[dep_index + 2:])
        self.dep_index = dep_index
        self.label = "share_deps"

    def fwd_exact(self, xs):
        return tuple(mpf(x) for x in xs)

    def fwd_float(self, xs, model, prec):
        return tuple(xs), (), None

    def backward(self, t, deltas, aux):
        offs = _star_parts(self.source)
        s = [mpf(0)] * shift_dim(self.source)
        s[0] = t[0]
        ti = 1
        for k in range(1, len(offs)):
            if k == self.dep_index + 2:
                continue  # second merged dependent, already set below
            s[offs[k][2]] = t[ti]
            if k == self.dep_index + 1:
                s[offs[k + 1][2]] = t[ti]
            ti += 1
        return tuple(s)


class DupDepAt(Lens):
    """Duplicate one dependent's values under its shared shift."""

    n_sites = 0

    def __init__(self, star_src: StarObj, dep_index: int):
        dep = star_src.deps[dep_index]
        doubled = StarDep(BaseObj(2 * dep.obj.arity, dep.obj.bound), dep.coeffs)
        self.source = star_src
        self.target = StarObj(star_src.root, star_src.deps[:dep_index] + (doubled,)
                              + star_src.deps[dep_index + 1:])
        self.dep_index = dep_index
        self.label = "dup_dep"

    def fwd_exact(self, xs):
        offs = _star_parts(self.source)
        a, b, _, _ = offs[self.dep_index + 1]
        xs = tuple(mpf(x) for x in xs)
        return xs[:b] + xs[a:b] + xs[b:]

    def fwd_float(self, xs, model, prec):
        offs = _star_parts(self.source)
        a, b, _, _ = offs[self.dep_index + 1]
        xs = tuple(xs)
        return xs[:b] + xs[a:b] + xs[b:], (), None

    def backward(self, t, deltas, aux):
        return tuple(t)


class Proj2Star(Lens):
    """Project a single-dependent star onto its dependent."""

    label = "proj2"
    n_sites = 0

    def __init__(self, star_src: StarObj):
        if len(star_src.deps) != 1:
            raise LensShapeError("proj2 expects exactly one dependent")
        self.source = star_src
        self.target = star_src.deps[0].obj

    def fwd_exact(self, xs):
        n = value_arity(self.source.root)
        return tuple(mpf(x) for x in xs[n:])

    def fwd_float(self, xs, model, prec):
        n = value_arity(self.source.root)
        return tuple(xs[n:]), (), None

    def backward(self, t, deltas, aux):
        return zero_shift(self.source.root) + tuple(t)


class Proj1Star(Lens):
    """Project a single-dependent star onto its root."""

    label = "proj1"
    n_sites = 0

    def __init__(self, star_src: StarObj):
        if len(star_src.deps) != 1:
            raise LensShapeError("proj1 expects exactly one dependent")
        self.source = star_src
        self.target = star_src.root

    def fwd_exact(self, xs):
        n = value_arity(self.source.root)
        return tuple(mpf(x) for x in xs[:n])

    def fwd_float(self, xs, model, prec):
        n = value_arity(self.source.root)
        return tuple(xs[:n]), (), None

    def backward(self, t, deltas, aux):
        return tuple(t) + zero_shift(self.source.deps[0].obj)


class Dist(Lens):
    """Distributor: (X1 *_i Y1) (x) (X2 *_j Y2) -> (X1 (x) X2) *_(i,j) (Y1 (x) Y2)."""

    label = "dist"
    n_sites = 0

    def __init__(self, x1, y1, i: int, x2, y2, j: int):
        for o in (x1, y1, x2, y2):
            if shift_dim(o) != 1:
                raise LensShapeError("dist expects one shift dimension per factor")
        self.source = tensor((star1(x1, y1, i), star1(x2, y2, j)))
        self.target = StarObj(tensor((x1, x2)),
                              (StarDep(y1, ((i, 0),)), StarDep(y2, ((0, j),))))
        self.arities = tuple(value_arity(o) for o in (x1, y1, x2, y2))

    def _perm(self):
        a1, b1, a2, b2 = self.arities
        x1 = list(range(a1))
        y1 = list(range(a1, a1 + b1))
        x2 = list(range(a1 + b1, a1 + b1 + a2))
        y2 = list(range(a1 + b1 + a2, a1 + b1 + a2 + b2))
        return x1 + x2 + y1 + y2

    def fwd_exact(self, xs):
        return tuple(mpf(xs[i]) for i in self._perm())

    def fwd_float(self, xs, model, prec):
        return tuple(xs[i] for i in self._perm()), (), None

    def backward(self, t, deltas, aux):
        s1, s2, t1, t2 = t
        return (s1, t1, s2, t2)


# --- condition checking -----------------------------------------------------

@dataclass
class CheckReport:
    label: str
    samples: int
    failures: list = field(default_factory=list)
    max_residual: float = 0.0
    max_norm_excess: float = float("-inf")
    resamples: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        state = "pass" if self.passed else f"FAIL ({len(self.failures)})"
        return (f"{self.label}: {state} over {self.samples} samples, "
                f"max residual {self.max_residual:.3e}")


def sample_inputs(profile, rng: random.Random, model: RoundingModel) -> tuple:
    out = []
    for tag in profile:
        if tag == "log":
            x = rng.uniform(2.0, 1e6)
        else:
            mag = 2.0 ** rng.uniform(-30.0, 30.0)
            x = mag if rng.random() < 0.5 else -mag
        out.append(model.to_machine(x))
    return tuple(out)


def sample_shift(obj, rng: random.Random, model: RoundingModel, prec: int) -> tuple:
    eps = model.eps_mpf(prec)
    out = []
    for q in bounds(obj):
        u = mpf(rng.uniform(-1.0, 1.0))
        out.append(u * (mpf(q.numerator) / q.denominator) * eps)
    return tuple(out)


def check_conditions(lens: Lens, n_samples: int, model: RoundingModel = BINARY64,
                     prec: int = DEFAULT_PRECISION, seed: int = 0,
                     sampler=None) -> CheckReport:
    """Sample inputs and in-bound target shifts; verify both morphism
    conditions.  Failures are recorded with their witnesses, not raised."""
    rng = random.Random(seed)
    report = CheckReport(label=lens.label, samples=n_samples)
    profile = lens.input_profile()
    with mp.workprec(prec):
        eps = model.eps_mpf(prec)
        slack = mpf(2) ** (-(prec - 16))
        rtol = mpf(2) ** (-(prec // 2))
        src_bounds = bounds(lens.source)
        for i in range(n_samples):
            inst = None
            for _ in range(200):
                xs = sampler(rng) if sampler else sample_inputs(profile, rng, model)
                try:
                    inst = bind(lens, xs, model, prec)
                    break
                except EvalError:
                    report.resamples += 1
            if inst is None:
                report.failures.append({"sample": i, "kind": "sampling"})
                continue
            t = sample_shift(lens.target, rng, model, prec)
            try:
                s = inst.backward(t)
            except ShiftBoundError as exc:
                report.failures.append({"sample": i, "kind": "backward", "error": str(exc)})
                continue
            # condition (2): backward shift within the source bound
            for d, (sv, p) in enumerate(zip(s, src_bounds)):
                excess = float(abs(sv) - (mpf(p.numerator) / p.denominator) * eps)
                report.max_norm_excess = max(report.max_norm_excess, excess)
                if abs(sv) > (mpf(p.numerator) / p.denominator) * eps + slack:
                    report.failures.append(
                        {"sample": i, "kind": "norm", "dim": d, "inputs": inst.inputs,
                         "shift": [str(v) for v in s]})
                    break
            else:
                # condition (1): f(x * b(t)) = f_fl(x) * t
                shifted = act(lens.source, inst.inputs, s, prec)
                try:
                    lhs = lens.fwd_exact(shifted)
                except EvalError as exc:
                    report.failures.append({"sample": i, "kind": "domain", "error": str(exc)})
                    continue
                rhs = act(lens.target, inst.outputs, t, prec)
                for k, (lv, rv) in enumerate(zip(lhs, rhs)):
                    resid = rp_distance(lv, rv, prec)
                    report.max_residual = max(report.max_residual, float(resid))
                    if resid > rtol:
                        report.failures.append(
                            {"sample": i, "kind": "exactness", "component": k,
                             "inputs": inst.inputs, "residual": float(resid)})
                        break
    return report


# --- catalog ----------------------------------------------------------------

def catalog(model: RoundingModel = BINARY64) -> dict:
    """Named lens instances at representative bounds, addressable for
    derivation extraction and the property suite."""
    b1 = BaseObj(1, Fraction(2))
    b2 = BaseObj(2, Fraction(1))
    entries = {
        "id": Identity(b1),
        "dup": Dup(b2),
        "share": ShareTensor(1, 2, Fraction(2)),
        "share_star:0": ShareStarAt(star1(BaseObj(1, 2), BaseObj(1, 2), 0), 0),
        "share_star:1": ShareStarAt(star1(BaseObj(1, 2), BaseObj(1, 0), 1), 0),
        "share_star:2": ShareStarAt(star1(BaseObj(1, 2), BaseObj(1, 2), 2), 0),
        "push:1:0": PushAt(star1(BaseObj(1, 2), BaseObj(1, 3), 1), 0, 0),
        "push:1:2": PushAt(star1(BaseObj(1, 2), BaseObj(1, 3), 1), 0, 2),
        "proj1": Proj1Star(star1(b1, BaseObj(1, 1), 1)),
        "proj2": Proj2Star(star1(b1, BaseObj(1, 1), 1)),
        "dist": Dist(BaseObj(1, 1), BaseObj(1, 2), 1, BaseObj(1, 3), BaseObj(1, 1), 2),
        "swap": lens_swap(BaseObj(1, 1), BaseObj(2, 2)),
        "assoc": lens_assoc(BaseObj(1, 1), BaseObj(1, 2), BaseObj(1, 3)),
        "unitor": lens_unitor(BaseObj(1, 2)),
        "add": PrimAdd(Fraction(3)),
        "sub": PrimSub(Fraction(3)),
        "mul": PrimMul(Fraction(3)),
        "div": PrimDiv(Fraction(3)),
        "sqrt": PrimSqrt(Fraction(3)),
        "log": PrimLog(Fraction(3), model),
        "dmul:0": PrimDMul(0, Fraction(2), Fraction(1)),
        "dmul:1": PrimDMul(1, Fraction(2), Fraction(1)),
        "dmul:2": PrimDMul(2, Fraction(2), Fraction(1)),
        "adddiv": PrimAddDiv(Fraction(2), Fraction(1)),
    }
    return entries
