"""Benchmark program generators and their expected bounds.

The variable-size families fix the association order (float semantics depend
on it): sums and inner products accumulate left-nested; the linear and
quadratic evaluators add the bare `x` term first and chain the remaining
terms to the right, which is the order their tight analyses need.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

from .expr import Add, Expr, Mul, Sqrt, Var, format_expr
from .synth import EngineConfig, query, saturate, seed


def sum_program(n: int) -> Expr:
    e: Expr = Var("x1")
    for i in range(2, n + 1):
        e = Add(e, Var(f"x{i}"))
    return e


def linear_program(vars_total: int) -> Expr:
    # x + a1*x + ... + ak*x, k = vars_total - 1
    k = vars_total - 1
    terms = [Mul(Var(f"a{i}"), Var("x")) for i in range(1, k + 1)]
    chain = terms[-1]
    for t in reversed(terms[:-1]):
        chain = Add(t, chain)
    return Add(Var("x"), chain)


def norm_program(vars_total: int) -> Expr:
    squares = [Mul(Var(f"x{i}"), Var(f"x{i}")) for i in range(1, vars_total + 1)]
    acc: Expr = squares[0]
    for s in squares[1:]:
        acc = Add(acc, s)
    return Sqrt(acc)


def quad_program(vars_total: int) -> Expr:
    # x + a1*x^2 + ... + ak*x^2, k = vars_total - 1
    k = vars_total - 1
    terms = [Mul(Mul(Var(f"a{i}"), Var("x")), Var("x")) for i in range(1, k + 1)]
    chain = terms[-1]
    for t in reversed(terms[:-1]):
        chain = Add(t, chain)
    return Add(Var("x"), chain)


def dotprod_program(vars_total: int) -> Expr:
    n = vars_total // 2
    prods = [Mul(Var(f"x{i}"), Var(f"y{i}")) for i in range(1, n + 1)]
    acc: Expr = prods[0]
    for p in prods[1:]:
        acc = Add(acc, p)
    return acc


def table1_rows() -> list:
    rows = []
    for n in range(5, 11):
        rows.append((f"sum/{n}", sum_program(n), Fraction(n - 1)))
    for v in range(2, 6):
        rows.append((f"linear/{v}", linear_program(v), Fraction(v - 1)))
    for v in range(1, 6):
        rows.append((f"norm/{v}", norm_program(v), Fraction(v, 2) + 1))
    for v in (2, 3, 4):
        rows.append((f"quad/{v}", quad_program(v), Fraction(v + 1)))
    for v, err in ((4, 1), (6, 2)):
        rows.append((f"dotprod/{v}", dotprod_program(v), Fraction(err)))
    return rows


def table2_rows() -> list:
    f = Fraction
    return [
        ("x+ax+bx2", "(Add x (Add (Mul a x) (Mul (Mul b x) x)))",
         {"a": f(2), "b": f(4), "x": f(1)}, f(4)),
        ("a+sqrt(ab)", "(Add a (Sqrt (Mul a b)))",
         {"a": f(1), "b": f(4)}, f(4)),
        ("(a+b)^2", "(Mul (Add a b) (Add b a))",
         {"a": f(3, 2), "b": f(3, 2)}, f(3, 2)),
        ("(a+ab)(c+cd)", "(Mul (Add a (Mul a b)) (Add c (Mul c d)))",
         {"a": f(3, 2), "b": f(1), "c": f(3, 2), "d": f(1)}, f(3, 2)),
        ("a+a*sqrt(b)", "(Add a (Mul a (Sqrt b)))",
         {"a": f(1), "b": f(4)}, f(4)),
        ("sqrt(ax+sqrt(b))", "(Sqrt (Add (Mul a x) (Sqrt b)))",
         {"a": f(0), "b": f(8), "x": f(4)}, f(8)),
        ("(a+sqrt(b))^2", "(Mul (Add a (Sqrt b)) (Add a (Sqrt b)))",
         {"a": f(3, 2), "b": f(5)}, f(5)),
        ("sqrt(a)sqrt(b)", "(Mul (Sqrt a) (Sqrt b))",
         {"a": f(3), "b": f(3)}, f(3)),
    ]


@dataclass
class BenchRow:
    name: str
    program: str
    expected_max: Fraction
    expected_bounds: dict | None = None
    found_max: Fraction | None = None
    found_bounds: dict | None = None
    status: str = "pending"   # ok | mismatch | none-found | skipped
    time_ms: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_row(name: str, e: Expr, expected_max: Fraction,
            expected_bounds: dict | None = None,
            cfg: EngineConfig = EngineConfig(),
            timeout_s: float = 120.0) -> BenchRow:
    row = BenchRow(name, format_expr(e), expected_max, expected_bounds)
    t0 = time.monotonic()
    db = seed(e)
    saturate(db, cfg, deadline=t0 + timeout_s)
    reports = query(db, e)
    row.time_ms = (time.monotonic() - t0) * 1000.0
    row.stats = db.stats()
    if db.capped and not reports:
        row.status = "skipped"
        return row
    if not reports:
        row.status = "none-found"
        return row
    best = next(r for r in reports if r.smallest_max)
    row.found_max = best.max_bound()
    row.found_bounds = dict(best.bounds)
    ok = row.found_max == expected_max
    if ok and expected_bounds is not None:
        ok = any(r.bounds == expected_bounds for r in reports)
    row.status = "ok" if ok else "mismatch"
    return row


def run_suite(suite: str, cfg: EngineConfig = EngineConfig(),
              timeout_s: float = 120.0) -> list:
    rows = []
    if suite == "table1":
        for name, e, err in table1_rows():
            rows.append(run_row(name, e, err, None, cfg, timeout_s))
    elif suite == "table2":
        from .expr import parse_expr
        for name, text, per_var, err in table2_rows():
            rows.append(run_row(name, parse_expr(text), err, per_var, cfg, timeout_s))
    else:
        raise ValueError(f"unknown suite {suite!r}")
    return rows


def format_rows(rows) -> str:
    lines = [f"{'name':<18} {'expect':>7} {'found':>7} {'status':<10} {'ms':>9} {'facts':>9}"]
    for r in rows:
        found = "-" if r.found_max is None else str(r.found_max)
        lines.append(f"{r.name:<18} {str(r.expected_max):>7} {found:>7} "
                     f"{r.status:<10} {r.time_ms:>9.1f} {r.stats.get('facts', 0):>9}")
    return "\n".join(lines)
