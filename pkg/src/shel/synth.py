"""Backward saturation over canonical contexts.

Seeding registers the goal context holding the whole program at bound 0.
Each rule, given a context already known to reach the goal, generates
predecessor contexts one lens application earlier; saturation explores to a
fixpoint or a resource cap.  A query then reads per-variable bounds off every
start-shaped context, and any discovery path replays into a concrete lens
from the start object to the goal object.

Every rule is individually toggleable.  Sub and Div have bound
transformations in the lens library but are excluded from the default
synthesis rule set; they sit behind ``experimental_subdiv``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .contexts import (
    canon_ctx,
    canon_fast,
    ctx_var_slots,
    dump_ctx,
    expr_of,
    interpret_internal,
    key_of,
    start_bounds,
)
from .expr import Add, Div, Expr, Mul, Sqrt, Sub, Var, comm_normal, free_vars, operators_used, subterms
from .lenses import (
    Compose,
    DMulAt,
    Dup,
    DupDepAt,
    Identity,
    Lens,
    Parallel,
    PrimAdd,
    PrimDiv,
    PrimMul,
    PrimSqrt,
    PrimSub,
    Proj2Star,
    PushAt,
    Rearrange,
    ShareDepsAt,
    ShareStarAt,
    ShareTensor,
    StarLens,
)
from .objects import value_arity

DEFAULT_RULES = frozenset({
    "sqrt", "add", "mul", "share", "delta", "share_star", "pi2",
    "add_star", "sqrt_star", "dmul", "push", "share_deps", "delta_star",
})
EXPERIMENTAL_RULES = frozenset({"sub", "div"})

SYNTH_OPS = {"Add", "Mul", "Sqrt"}


class UnsupportedOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    max_iterations: int = 500_000
    max_facts: int = 1_000_000
    bound_cap: Fraction = Fraction(64)
    scale_cap: int = 4
    rules: frozenset = DEFAULT_RULES
    experimental_subdiv: bool = False

    def __post_init__(self):
        if self.max_iterations <= 0 or self.max_facts <= 0:
            raise ValueError("caps must be positive")
        if self.bound_cap <= 0 or self.scale_cap <= 0:
            raise ValueError("caps must be positive")

    def enabled(self) -> frozenset:
        extra = EXPERIMENTAL_RULES if self.experimental_subdiv else frozenset()
        return frozenset(self.rules) | extra


@dataclass(frozen=True)
class Edge:
    """One rule application: a lens from `pred` (canonical) to `succ`."""

    pred: tuple
    succ: tuple
    rule: str
    raw_pred: tuple
    payload: tuple


@dataclass
class FactDB:
    program: Expr            # commutativity-canonical form
    original: Expr
    goal: tuple
    contexts: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)   # pred -> list[Edge]
    parent: dict = field(default_factory=dict)  # ctx -> discovery Edge toward goal
    queue: deque = field(default_factory=deque)
    skels: dict = field(default_factory=dict)   # skeleton -> seen bound vectors
    insertions: int = 0
    iterations: int = 0
    saturated: bool = False
    capped: bool = False

    def stats(self) -> dict:
        return {
            "facts": self.insertions,
            "contexts": len(self.contexts),
            "iterations": self.iterations,
            "saturated": self.saturated,
        }


def seed(e: Expr, allow_subdiv: bool = False) -> FactDB:
    """Initialize a fact database anchored at the goal context for `e`."""
    allowed = SYNTH_OPS | ({"Sub", "Div"} if allow_subdiv else set())
    bad = operators_used(e) - allowed
    if bad:
        raise UnsupportedOperatorError(
            f"operators {sorted(bad)} are outside the synthesis set {sorted(allowed)}")
    prog = comm_normal(e)
    goal = (((0, (key_of(prog),), Fraction(0)), ()),)
    db = FactDB(program=prog, original=e, goal=goal)
    db.contexts[goal] = 0
    db.queue.append(goal)
    return db


# --- rule machinery ----------------------------------------------------------

def _partitions(keys):
    """Unordered 2-partitions of a sorted key tuple, index 0 pinned left;
    duplicates removed."""
    n = len(keys)
    seen = set()
    for mask in range(0, (1 << (n - 1)) - 1):
        m = (mask << 1) | 1
        left = tuple(keys[i] for i in range(n) if m >> i & 1)
        right = tuple(keys[i] for i in range(n) if not m >> i & 1)
        if (left, right) in seen:
            continue
        seen.add((left, right))
        yield m, left, right


def _ordered_partitions(keys):
    """Ordered 2-partitions (left and right play different roles)."""
    n = len(keys)
    seen = set()
    for m in range(1, (1 << n) - 1):
        left = tuple(keys[i] for i in range(n) if m >> i & 1)
        right = tuple(keys[i] for i in range(n) if not m >> i & 1)
        if (left, right) in seen:
            continue
        seen.add((left, right))
        yield m, left, right


def _halve(keys):
    """Half of an all-even multiset, or None."""
    counts: dict[str, int] = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    if any(c % 2 for c in counts.values()):
        return None
    out = []
    for k in keys:
        if counts[k] > 0:
            counts[k] -= 2
            out.append(k)
    return tuple(out)


def _mul_factors(keys):
    """Factor keys of every Mul subterm appearing under the given keys."""
    out = []
    seen = set()
    for k in keys:
        for t in subterms(expr_of(k)):
            if isinstance(t, Mul):
                for side in (t.left, t.right):
                    sk = key_of(side)
                    if sk not in seen:
                        seen.add(sk)
                        out.append(sk)
    return sorted(out)


from functools import lru_cache


@lru_cache(maxsize=None)
def _vars_of(key: str) -> frozenset:
    return frozenset(free_vars(expr_of(key)))


_TREE_VARS: dict = {}


def _tree_vars(tree) -> frozenset:
    try:
        return _TREE_VARS[tree]
    except KeyError:
        pass
    (root, deps) = tree
    out: frozenset = frozenset()
    for k in root[1]:
        out |= _vars_of(k)
    for dep in deps:
        for k in dep[1]:
            out |= _vars_of(k)
    _TREE_VARS[tree] = out
    return out


def _cross_tree_repeat(ctx) -> bool:
    """True when two distinct trees mention a common variable.  No rule ever
    merges trees and a tree always retains the variables it mentions, so such
    a context can never reach a start context (each variable bound once)."""
    if len(ctx) <= 1:
        return False
    seen: set = set()
    for tree in ctx:
        tv = _tree_vars(tree)
        if seen & tv:
            return True
        seen |= tv
    return False


def _splice(ctx, ti, new_trees):
    return ctx[:ti] + tuple(new_trees) + ctx[ti + 1:]


def _rules_for(ctx, cfg: EngineConfig):
    """Yield (rule, raw_pred, payload) for every predecessor of `ctx`."""
    cap = cfg.bound_cap
    enabled = cfg.enabled()

    for ti, (root, deps) in enumerate(ctx):
        _, rexprs, rbound = root
        bare = not deps

        if bare and len(rexprs) == 1:
            e = expr_of(rexprs[0])
            if isinstance(e, Sqrt) and "sqrt" in enabled:
                nb = 2 * rbound + 2
                if nb <= cap:
                    raw = _splice(ctx, ti, [((0, (key_of(e.child),), nb), ())])
                    yield "sqrt", raw, (ti,)
            if isinstance(e, (Add, Sub)):
                rule = "add" if isinstance(e, Add) else "sub"
                if rule in enabled and rbound + 1 <= cap:
                    pair = (key_of(e.left), key_of(e.right))
                    raw = _splice(ctx, ti, [((0, pair, rbound + 1), ())])
                    yield rule, raw, (ti,)
            if isinstance(e, Mul) and "mul" in enabled:
                nb = (rbound + 1) / 2
                if nb <= cap:
                    pair = (key_of(e.left), key_of(e.right))
                    raw = _splice(ctx, ti, [((0, pair, nb), ())])
                    yield "mul", raw, (ti,)
            if isinstance(e, Div) and "div" in enabled and rbound + 1 <= cap:
                raw = _splice(ctx, ti, [
                    ((0, (key_of(e.left),), rbound + 1), ()),
                    ((0, (key_of(e.right),), Fraction(0)), ()),
                ])
                yield "div", raw, (ti,)

        if bare and len(rexprs) >= 2:
            if "share" in enabled:
                for mask, left, right in _partitions(rexprs):
                    raw = _splice(ctx, ti, [((0, left, rbound), ()),
                                            ((0, right, rbound), ())])
                    yield "share", raw, (ti, mask)
            if "delta" in enabled:
                half = _halve(rexprs)
                if half is not None:
                    raw = _splice(ctx, ti, [((0, half, rbound), ())])
                    yield "delta", raw, (ti,)

        if len(rexprs) >= 2 and "share_star" in enabled:
            # split expressions out of the root into a new dependent
            for mask, left, right in _ordered_partitions(rexprs):
                for n in range(1, cfg.scale_cap + 1):
                    db = abs(n - 1) * rbound
                    if db > cap:
                        continue
                    raw_tree = ((0, left, rbound), deps + ((n, right, db),))
                    yield "share_star", _splice(ctx, ti, [raw_tree]), (ti, mask, n)

        if bare and "pi2" in enabled:
            # A projected-away root is only worth inventing when no other
            # tree mentions its variables: trees never merge backward, so a
            # cross-tree variable repeat can never reach a start context.
            other_vars: frozenset = frozenset()
            for tj, tree in enumerate(ctx):
                if tj != ti:
                    other_vars |= _tree_vars(tree)
            for rk in _mul_factors(rexprs):
                if _vars_of(rk) & other_vars:
                    continue
                for n in range(1, cfg.scale_cap + 1):
                    raw_tree = ((0, (rk,), Fraction(0)), ((n, rexprs, rbound),))
                    yield "pi2", _splice(ctx, ti, [raw_tree]), (ti, rk, n)

        for di, dep in enumerate(deps):
            dscale, dexprs, dbound = dep
            if len(dexprs) == 1:
                de = expr_of(dexprs[0])
                if isinstance(de, Add) and "add_star" in enabled and dbound + 1 <= cap:
                    nd = (dscale, (key_of(de.left), key_of(de.right)), dbound + 1)
                    raw_tree = (root, deps[:di] + (nd,) + deps[di + 1:])
                    yield "add_star", _splice(ctx, ti, [raw_tree]), (ti, di)
                if (isinstance(de, Sqrt) and "sqrt_star" in enabled
                        and 2 * dscale <= cfg.scale_cap and 2 * dbound + 2 <= cap):
                    nd = (2 * dscale, (key_of(de.child),), 2 * dbound + 2)
                    raw_tree = (root, deps[:di] + (nd,) + deps[di + 1:])
                    yield "sqrt_star", _splice(ctx, ti, [raw_tree]), (ti, di)
                if isinstance(de, Mul) and "dmul" in enabled:
                    # dmul applied at scale m, with a push m -> dscale fused in
                    # when m differs (a standalone push rule oscillates).
                    sides = [(key_of(de.left), key_of(de.right)),
                             (key_of(de.right), key_of(de.left))]
                    if sides[0][0] == sides[1][0]:
                        sides = sides[:1]
                    for si, (rk, dk) in enumerate(sides):
                        for rvi, rootk in enumerate(root[1]):
                            if rootk != rk:
                                continue
                            for m in range(1, cfg.scale_cap + 1):
                                nb = dbound + abs(m - dscale) * rbound + 1
                                if nb > cap:
                                    continue
                                nd = (m - 1, (dk,), nb)
                                raw_tree = (root, deps[:di] + (nd,) + deps[di + 1:])
                                yield "dmul", _splice(ctx, ti, [raw_tree]), (ti, di, rvi, si, m)
                            break
            if "push" in enabled:
                # detachment only: adjust the homomorphism to the trivial one
                nb = dbound + dscale * rbound
                if nb <= cap:
                    nd = (0, dexprs, nb)
                    raw_tree = (root, deps[:di] + (nd,) + deps[di + 1:])
                    yield "push", _splice(ctx, ti, [raw_tree]), (ti, di, 0)
            if len(dexprs) >= 2 and "share_deps" in enabled:
                for mask, left, right in _partitions(dexprs):
                    two = ((dscale, left, dbound), (dscale, right, dbound))
                    raw_tree = (root, deps[:di] + two + deps[di + 1:])
                    yield "share_deps", _splice(ctx, ti, [raw_tree]), (ti, di, mask)
            if len(dexprs) >= 2 and "delta_star" in enabled:
                half = _halve(dexprs)
                if half is not None:
                    nd = (dscale, half, dbound)
                    raw_tree = (root, deps[:di] + (nd,) + deps[di + 1:])
                    yield "delta_star", _splice(ctx, ti, [raw_tree]), (ti, di)


def _skeleton(ctx):
    """Bound-free shape of a context plus its bound vector, aligned so that
    componentwise vector comparison is meaningful between equal skeletons.

    Trees are grouped by (exprs, scales) shape; within a shape group they are
    ordered by their bound tuples, which makes a sorted-to-sorted alignment."""
    items = []
    for root, deps in ctx:
        skel = ((root[1],) + tuple((d[0], d[1]) for d in deps))
        vec = (root[2],) + tuple(d[2] for d in deps)
        items.append((skel, vec))
    items.sort()
    flat = ()
    for _, vec in items:
        flat += vec
    return tuple(s for s, _ in items), flat


def _dominated(db: FactDB, ctx) -> bool:
    """True when an already-seen context has the same skeleton with
    componentwise smaller-or-equal bounds.  Every backward rule is monotone
    in bounds with no bound preconditions, so a dominated context can only
    lead to dominated (never Pareto-minimal) start vectors."""
    skel, vec = _skeleton(ctx)
    vlist = db.skels.setdefault(skel, [])
    for v0 in vlist:
        if all(a <= b for a, b in zip(v0, vec)):
            return True
    vlist.append(vec)
    return False


def saturate(db: FactDB, cfg: EngineConfig = EngineConfig(), deadline: float | None = None) -> FactDB:
    """Apply all enabled rules to a fixpoint or until a cap triggers.

    Facts are only added, never removed; a saturated database is a no-op.
    `deadline` is an optional time.monotonic() cutoff, checked periodically."""
    import time
    while db.queue:
        if db.iterations >= cfg.max_iterations or db.insertions >= cfg.max_facts:
            db.capped = True
            break
        if deadline is not None and db.iterations % 256 == 0 and time.monotonic() > deadline:
            db.capped = True
            break
        ctx = db.queue.popleft()
        db.iterations += 1
        for rule, raw, payload in _rules_for(ctx, cfg):
            if db.insertions >= cfg.max_facts:
                db.capped = True
                break
            if _cross_tree_repeat(raw):
                continue
            canon = canon_fast(raw)
            known = canon in db.contexts
            if not known:
                if _cross_tree_repeat(canon) or _dominated(db, canon):
                    continue
            edge = Edge(canon, ctx, rule, raw, payload)
            db.insertions += 1
            db.edges.setdefault(canon, []).append(edge)
            if not known:
                db.contexts[canon] = len(db.contexts)
                db.parent[canon] = edge
                db.queue.append(canon)
    db.saturated = not db.queue and not db.capped
    return db


# --- queries -----------------------------------------------------------------

@dataclass
class BoundReport:
    bounds: dict
    start: tuple
    smallest_max: bool = False

    def vector(self, var_order) -> tuple:
        return tuple(self.bounds[v] for v in var_order)

    def max_bound(self) -> Fraction:
        return max(self.bounds.values())


def query(db: FactDB, e: Expr) -> list:
    """All Pareto-minimal per-variable bound vectors over start contexts
    reaching the goal; the smallest-max report is flagged."""
    if comm_normal(e) != db.program:
        raise ValueError("query expression does not match the seeded program")
    var_order = free_vars(db.program)
    found = []
    for ctx in db.contexts:
        bounds = start_bounds(ctx, db.program)
        if bounds is not None:
            found.append(BoundReport(bounds, ctx))
    vecs = {r.start: r.vector(var_order) for r in found}
    minimal = []
    for r in found:
        v = vecs[r.start]
        dominated = any(
            o is not r and all(a <= b for a, b in zip(vecs[o.start], v)) and vecs[o.start] != v
            for o in found)
        if not dominated:
            minimal.append(r)
    minimal.sort(key=lambda r: (r.max_bound(), r.vector(var_order)))
    if minimal:
        minimal[0].smallest_max = True
    return minimal


@dataclass
class Derivation:
    """Discovery path from a start context to the goal, one rule per edge."""

    program: Expr
    start: tuple
    edges: tuple

    def describe(self) -> str:
        lines = [f"start   {dump_ctx(self.start)}"]
        for e in self.edges:
            lines.append(f"{e.rule:<11} -> {dump_ctx(e.succ)}")
        return "\n".join(lines)


def extract_derivation(db: FactDB, report: BoundReport, validate: bool = True) -> Derivation:
    edges = []
    ctx = report.start
    while ctx != db.goal:
        try:
            edge = db.parent[ctx]
        except KeyError:
            raise RuntimeError("report context is not connected to the goal") from None
        if validate:
            _replay_edge(edge, db)
        edges.append(edge)
        ctx = edge.succ
    return Derivation(db.program, report.start, tuple(edges))


def _replay_edge(edge: Edge, db: FactDB) -> None:
    cfg = EngineConfig(experimental_subdiv=True, scale_cap=64)
    for rule, raw, payload in _rules_for(edge.succ, cfg):
        if rule == edge.rule and payload == edge.payload and raw == edge.raw_pred:
            if canon_ctx(raw)[0] != edge.pred:
                raise RuntimeError("edge does not canonicalize to its fact")
            return
    raise RuntimeError(f"edge {edge.rule}{edge.payload} cannot be replayed")


# --- derivation to lens -------------------------------------------------------

def _tree_obj(tree):
    return interpret_internal((tree,)).parts[0]


def _stable_perm(from_keys, to_keys):
    """to_slot -> from_slot matching equal keys in stable order."""
    pools: dict[str, list] = {}
    for i, k in enumerate(from_keys):
        pools.setdefault(k, []).append(i)
    heads: dict[str, int] = {k: 0 for k in pools}
    out = []
    for k in to_keys:
        out.append(pools[k][heads[k]])
        heads[k] += 1
    return out


def _block_perm_lens(obj, from_keys, to_keys, start: int) -> Rearrange:
    """Permute one base's value block of `obj` from from_keys to to_keys."""
    n = value_arity(obj)
    from .objects import shift_dim as _sd
    vmap = list(range(n))
    for i, p in enumerate(_stable_perm(from_keys, to_keys)):
        vmap[start + i] = start + p
    return Rearrange(obj, obj, vmap, list(range(_sd(obj))), label="sortbase")


def _chunk_lens(edge: Edge, succ_tree, raw_trees) -> Lens:
    """Lens from the raw predecessor chunk to the successor tree."""
    rule = edge.rule
    (sroot, sdeps) = succ_tree
    p = sroot[2]
    if rule == "sqrt":
        return PrimSqrt(p)
    if rule == "add":
        return PrimAdd(p)
    if rule == "sub":
        return PrimSub(p)
    if rule == "mul":
        return PrimMul(p)
    if rule == "div":
        return PrimDiv(p)
    if rule == "share":
        (r1, _), (r2, _) = raw_trees
        core = ShareTensor(len(r1[1]), len(r2[1]), p)
        fix = _block_perm_lens(core.target, r1[1] + r2[1], sroot[1], 0)
        return Compose(core, fix)
    if rule == "delta":
        (r1, _), = raw_trees
        core = Dup(_tree_obj(raw_trees[0]))
        fix = _block_perm_lens(core.target, r1[1] + r1[1], sroot[1], 0)
        return Compose(core, fix)
    if rule == "share_star":
        (rroot, rdeps), = raw_trees
        di = len(rdeps) - 1
        core = ShareStarAt(_tree_obj(raw_trees[0]), di)
        fix = _block_perm_lens(core.target, rroot[1] + rdeps[di][1], sroot[1], 0)
        return Compose(core, fix)
    if rule == "pi2":
        return Proj2Star(_tree_obj(raw_trees[0]))
    if rule in ("add_star", "sqrt_star"):
        (rroot, rdeps), = raw_trees
        di = edge.payload[1]
        parts = []
        src_coeffs = []
        tgt_coeffs = []
        for k, dep in enumerate(rdeps):
            if k == di:
                q = sdeps[k][2]
                parts.append(PrimAdd(q) if rule == "add_star" else PrimSqrt(q))
            else:
                parts.append(Identity(_base_obj(dep)))
            src_coeffs.append(((dep[0],),))
            tgt_coeffs.append(((sdeps[k][0],),))
        return StarLens(Identity(_base_obj(rroot)), tuple(parts),
                        tuple(src_coeffs), tuple(tgt_coeffs), label=rule)
    if rule == "dmul":
        di, rvi, m = edge.payload[1], edge.payload[2], edge.payload[4]
        n = sdeps[di][0]
        core = DMulAt(_tree_obj(raw_trees[0]), di, rvi)
        if m == n:
            return core
        return Compose(core, PushAt(core.target, di, n))
    if rule == "push":
        di = edge.payload[1]
        return PushAt(_tree_obj(raw_trees[0]), di, succ_tree[1][di][0])
    if rule == "share_deps":
        (rroot, rdeps), = raw_trees
        di = edge.payload[1]
        core = ShareDepsAt(_tree_obj(raw_trees[0]), di)
        start = len(rroot[1]) + sum(len(d[1]) for d in rdeps[:di])
        fix = _block_perm_lens(core.target, rdeps[di][1] + rdeps[di + 1][1],
                               sdeps[di][1], start)
        return Compose(core, fix)
    if rule == "delta_star":
        (rroot, rdeps), = raw_trees
        di = edge.payload[1]
        core = DupDepAt(_tree_obj(raw_trees[0]), di)
        start = len(rroot[1]) + sum(len(d[1]) for d in rdeps[:di])
        fix = _block_perm_lens(core.target, rdeps[di][1] + rdeps[di][1],
                               sdeps[di][1], start)
        return Compose(core, fix)
    raise ValueError(f"no lens for rule {rule!r}")


def _base_obj(base):
    from .objects import BaseObj
    return BaseObj(len(base[1]), base[2])


_CHUNK_SIZES = {"share": 2, "div": 2}


def edge_lens(edge: Edge) -> Lens:
    """Concrete lens from edge.pred to edge.succ."""
    ti = edge.payload[0]
    chunk = _CHUNK_SIZES.get(edge.rule, 1)
    raw_trees = edge.raw_pred[ti:ti + chunk]
    children = []
    for i, tree in enumerate(edge.succ):
        if i == ti:
            children.append(_chunk_lens(edge, tree, raw_trees))
        else:
            children.append(Identity(_tree_obj(tree)))
    core = Parallel(tuple(children))
    canon, vmap, smap = canon_ctx(edge.raw_pred)
    if canon != edge.pred:
        raise RuntimeError("edge raw context does not match its fact")
    uncanon = Rearrange(interpret_internal(canon), interpret_internal(edge.raw_pred),
                        vmap, smap, label="uncanon")
    return Compose(uncanon, core)


def derivation_to_lens(d: Derivation) -> Lens:
    """Compose the path's rule lenses into one lens whose machine map is the
    program's float semantics."""
    lens: Lens = Identity(interpret_internal(d.start))
    for edge in d.edges:
        lens = Compose(lens, edge_lens(edge))
    return lens


def start_var_slots(d: Derivation) -> list:
    return ctx_var_slots(d.start)


def analyze(e: Expr, cfg: EngineConfig = EngineConfig()) -> tuple:
    """Convenience wrapper: seed, saturate, query."""
    db = seed(e, allow_subdiv=cfg.experimental_subdiv)
    saturate(db, cfg)
    return db, query(db, e)
