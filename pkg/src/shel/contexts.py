"""Syntactic contexts: tensors of height-one star trees of bases, each base
binding expressions with a scale and an exact rational bound.

Contexts carry expressions in place of variables, so transitive chaining of
facts never performs substitution.  Canonicalization gives every context a
unique normal form: expressions sorted within bases, dependents sorted within
trees, scale-0 dependents hoisted to standalone trees (the associator
isomorphism), and trees sorted.  The canonicalizer also reports where each
value slot and shift dimension moved, which is what lets derivations be
replayed as concrete lenses.

Intermediate contexts may repeat an expression (duplication and share rules
exist precisely to manage copies); start contexts are required to bind each
program variable exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .expr import Expr, Var, format_expr, free_vars, parse_expr
from .objects import BaseObj, StarDep, StarObj, TensorObj, scale_matrix

# Internal form: base = (scale, exprs: tuple[str, ...], bound: Fraction)
#                tree = (base, deps: tuple[base, ...])
#                ctx  = tuple[tree, ...]


@lru_cache(maxsize=None)
def expr_of(key: str) -> Expr:
    return parse_expr(key)


def key_of(e: Expr) -> str:
    return format_expr(e)


def check_base(base) -> None:
    scale, exprs, bound = base
    if not isinstance(scale, int) or scale < 0:
        raise ValueError(f"scale must be a nonnegative integer: {scale!r}")
    if not exprs:
        raise ValueError("base must bind at least one expression")
    if not isinstance(bound, Fraction) or bound < 0:
        raise ValueError(f"bound must be a nonnegative rational: {bound!r}")


def check_ctx(ctx) -> None:
    for root, deps in ctx:
        check_base(root)
        if root[0] != 0:
            raise ValueError("root scale must be 0 (it is ignored)")
        for dep in deps:
            check_base(dep)


def base_key(base):
    scale, exprs, bound = base
    return (exprs, scale, bound)


def tree_key(tree):
    root, deps = tree
    return (base_key(root), tuple(base_key(d) for d in deps))


def canon_ctx(ctx):
    """Normal form plus slot maps.

    Returns (canon, value_map, shift_map) with value_map[raw_slot] the
    canonical position of raw value slot, likewise shift_map for shift
    dimensions (one per base).
    """
    check_ctx(ctx)
    # Annotate raw slot/dim indices.
    trees = []
    v = d = 0
    for root, deps in ctx:
        rslots = list(range(v, v + len(root[1])))
        v += len(root[1])
        rdim = d
        d += 1
        adeps = []
        for dep in deps:
            dslots = list(range(v, v + len(dep[1])))
            v += len(dep[1])
            adeps.append((dep, dslots, d))
            d += 1
        trees.append(((root, rslots, rdim), adeps))

    def sort_base(base, slots):
        scale, exprs, bound = base
        order = sorted(range(len(exprs)), key=lambda i: exprs[i])
        new_exprs = tuple(exprs[i] for i in order)
        new_slots = [slots[i] for i in order]
        return (scale, new_exprs, bound), new_slots

    # Sort in-base expressions, hoist scale-0 dependents, sort dependents.
    flat = []
    for (root, rslots, rdim), adeps in trees:
        root2, rslots2 = sort_base(root, rslots)
        keep = []
        for dep, dslots, ddim in adeps:
            dep2, dslots2 = sort_base(dep, dslots)
            if dep2[0] == 0:
                flat.append((((0, dep2[1], dep2[2]), ()), [dslots2], [ddim]))
            else:
                keep.append((dep2, dslots2, ddim))
        keep.sort(key=lambda item: base_key(item[0]))
        tree2 = (root2, tuple(k[0] for k in keep))
        slot_groups = [rslots2] + [k[1] for k in keep]
        dim_groups = [rdim] + [k[2] for k in keep]
        flat.append((tree2, slot_groups, dim_groups))

    flat.sort(key=lambda item: tree_key(item[0]))

    canon = tuple(item[0] for item in flat)
    value_map = [0] * v
    shift_map = [0] * d
    nv = nd = 0
    for tree2, slot_groups, dim_groups in flat:
        for group, dim in zip(slot_groups, dim_groups):
            for slot in group:
                value_map[slot] = nv
                nv += 1
            shift_map[dim] = nd
            nd += 1
    return canon, tuple(value_map), tuple(shift_map)


def canon_only(ctx):
    return canon_ctx(ctx)[0]


def canon_fast(ctx):
    """Normal form without slot bookkeeping (saturation hot path)."""
    trees = []
    for root, deps in ctx:
        root2 = (0, tuple(sorted(root[1])), root[2])
        keep = []
        for dep in deps:
            dep2 = (dep[0], tuple(sorted(dep[1])), dep[2])
            if dep2[0] == 0:
                trees.append(((0, dep2[1], dep2[2]), ()))
            else:
                keep.append(dep2)
        keep.sort(key=base_key)
        trees.append((root2, tuple(keep)))
    trees.sort(key=tree_key)
    return tuple(trees)


def interpret_internal(ctx) -> TensorObj:
    parts = []
    for root, deps in ctx:
        robj = BaseObj(len(root[1]), root[2])
        if not deps:
            parts.append(robj)
        else:
            parts.append(StarObj(robj, tuple(
                StarDep(BaseObj(len(d[1]), d[2]), scale_matrix(d[0])) for d in deps)))
    return TensorObj(tuple(parts))


def ctx_var_slots(ctx):
    """For a start-shaped context, variable name per value slot, in order."""
    names = []
    for root, deps in ctx:
        for k in root[1]:
            names.append(k)
        for dep in deps:
            names.extend(dep[1])
    return names


def dump_ctx(ctx) -> str:
    """Debugging dump mirroring the engine's context constructors."""
    def dump_base(b):
        scale, exprs, bound = b
        es = " ".join(exprs)
        return f"(Base {scale} ({es}) {bound})"

    def dump_tree(t):
        root, deps = t
        if not deps:
            return dump_base(root)
        inner = dump_base(root)
        for d in deps:
            inner = f"(Star {inner} {dump_base(d)})"
        return inner

    out = "(Unit)"
    for t in reversed(ctx):
        out = f"(Tens {dump_tree(t)} {out})" if out != "(Unit)" else dump_tree(t)
    return out


# --- public dataclasses ------------------------------------------------------

@dataclass(frozen=True)
class CtxBase:
    scale: int
    exprs: tuple
    bound: Fraction

    def __post_init__(self):
        object.__setattr__(self, "exprs", tuple(self.exprs))
        object.__setattr__(self, "bound", Fraction(self.bound))
        check_base(self.internal())

    def internal(self):
        return (self.scale, tuple(key_of(e) for e in self.exprs), Fraction(self.bound))


@dataclass(frozen=True)
class CtxTree:
    root: CtxBase
    deps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "deps", tuple(self.deps))
        if self.root.scale != 0:
            raise ValueError("root scale must be 0")

    def internal(self):
        return (self.root.internal(), tuple(d.internal() for d in self.deps))


@dataclass(frozen=True)
class Ctx:
    trees: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))

    def internal(self):
        return tuple(t.internal() for t in self.trees)


def _external(ctx) -> Ctx:
    def base(b):
        return CtxBase(b[0], tuple(expr_of(k) for k in b[1]), b[2])

    return Ctx(tuple(CtxTree(base(root), tuple(base(d) for d in deps))
                     for root, deps in ctx))


def canonicalize(g: Ctx) -> Ctx:
    return _external(canon_only(g.internal()))


def interpret(g: Ctx) -> TensorObj:
    return interpret_internal(g.internal())


def is_start_context(g: Ctx, e: Expr):
    """Bounds per variable if `g` is a tensor of bare single-variable bases
    covering exactly the variables of `e`; None otherwise."""
    return start_bounds(g.internal(), e)


def start_bounds(ctx, e: Expr):
    want = set(free_vars(e))
    found: dict[str, Fraction] = {}
    for root, deps in ctx:
        if deps or root[0] != 0 or len(root[1]) != 1:
            return None
        expr = expr_of(root[1][0])
        if not isinstance(expr, Var) or expr.name in found:
            return None
        found[expr.name] = root[2]
    if set(found) != want:
        return None
    return found
