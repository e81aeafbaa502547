"""Command-line front end.

    shel analyze <expr|file>    synthesize per-variable backward error bounds
    shel certify <expr|file>    synthesize, then certify bounds numerically
    shel bench <suite>          reproduce the benchmark tables
    shel lenscheck              run the lens condition suite on the catalog

`--json` switches any command to machine output.  SHEL_PRECISION sets the
default extended precision in bits.

Exit codes: 0 success (including no lens found), 1 check failures,
2 parse errors, 3 unsupported operators.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .bench import format_rows, run_suite
from .expr import Expr, ExprSyntaxError, format_expr, free_vars, parse_expr
from .lenses import catalog, check_conditions
from .numerics import DEFAULT_PRECISION, unit_roundoff
from .synth import (
    DEFAULT_RULES,
    EngineConfig,
    UnsupportedOperatorError,
    extract_derivation,
    query,
    saturate,
    seed,
)
from .validate import case_study_pipelines, certify, check_case_study

JSON_VERSION = 1


def _precision() -> int:
    return int(os.environ.get("SHEL_PRECISION", DEFAULT_PRECISION))


@dataclass
class AnalysisOutput:
    program: str
    status: str                 # bounds-found | none-found | capped
    reports: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    time_ms: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "version": JSON_VERSION,
            "program": self.program,
            "status": self.status,
            "reports": self.reports,
            "stats": self.stats,
            "time_ms": self.time_ms,
        }


def analyze_expr(e: Expr, cfg: EngineConfig) -> tuple:
    t0 = time.monotonic()
    db = seed(e, allow_subdiv=cfg.experimental_subdiv)
    saturate(db, cfg)
    reports = query(db, e)
    elapsed = (time.monotonic() - t0) * 1000.0
    order = free_vars(e)
    out = AnalysisOutput(program=format_expr(e), stats=db.stats(), time_ms=elapsed,
                         status="bounds-found" if reports
                         else ("capped" if db.capped else "none-found"))
    for r in reports:
        out.reports.append({
            "bounds": {v: str(r.bounds[v]) for v in order},
            "smallest_max": r.smallest_max,
        })
    return out, db, reports


def _read_program(arg: str) -> Expr:
    text = arg
    if not arg.lstrip().startswith("(") and os.path.exists(arg):
        with open(arg) as fh:
            text = fh.read()
    return parse_expr(text)


def _engine_config(args) -> EngineConfig:
    rules = DEFAULT_RULES
    if args.rules:
        rules = frozenset(r.strip() for r in args.rules.split(",") if r.strip())
    return EngineConfig(
        max_iterations=args.max_iters,
        max_facts=args.max_facts,
        bound_cap=Fraction(args.bound_cap),
        scale_cap=args.scale_cap,
        rules=rules,
        experimental_subdiv=args.experimental_subdiv,
    )


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=500_000)
    p.add_argument("--max-facts", type=int, default=1_000_000)
    p.add_argument("--bound-cap", default="64")
    p.add_argument("--scale-cap", type=int, default=4)
    p.add_argument("--rules", default="", help="comma-separated rule subset")
    p.add_argument("--experimental-subdiv", action="store_true",
                   help="enable Sub/Div synthesis rules (excluded from acceptance)")
    p.add_argument("--json", action="store_true")


def cmd_analyze(args) -> int:
    try:
        e = _read_program(args.expr)
    except ExprSyntaxError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    try:
        out, _, _ = analyze_expr(e, _engine_config(args))
    except UnsupportedOperatorError as exc:
        print(f"unsupported operator: {exc}", file=sys.stderr)
        return 3
    if args.json:
        print(json.dumps(out.to_json_dict()))
        return 0
    print(f"program: {out.program}")
    print(f"status:  {out.status}  ({out.stats})")
    shown = out.reports if args.all_bounds else [r for r in out.reports if r["smallest_max"]]
    for r in shown:
        mark = "*" if r["smallest_max"] else " "
        body = ", ".join(f"{v}: {b}" for v, b in r["bounds"].items())
        print(f" {mark} {body}")
    return 0


def cmd_certify(args) -> int:
    try:
        e = _read_program(args.expr)
    except ExprSyntaxError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    try:
        out, db, reports = analyze_expr(e, _engine_config(args))
    except UnsupportedOperatorError as exc:
        print(f"unsupported operator: {exc}", file=sys.stderr)
        return 3
    if not reports:
        print(json.dumps({"version": JSON_VERSION, "status": out.status}))
        return 0
    best = next(r for r in reports if r.smallest_max)
    d = extract_derivation(db, best)
    rep = certify(e, best, d, n_samples=args.samples, prec=_precision(), seed=args.seed)
    if args.json:
        print(json.dumps(rep.to_json_dict()))
    else:
        print(f"program: {rep.program}")
        print(f"claimed: {rep.claimed}")
        print(f"samples: {rep.samples}  max residual {rep.max_residual:.3e}")
        print("pass" if rep.passed else f"FAIL: {rep.counterexamples[:3]}")
    return 0 if rep.passed else 1


def cmd_bench(args) -> int:
    if args.suite == "case-studies":
        ok = True
        lines = []
        for cs in case_study_pipelines():
            rep = check_case_study(cs, n_samples=args.samples, prec=_precision())
            ok = ok and rep.passed
            lines.append({"name": cs.name,
                          "expected": [str(b) for b in cs.expected],
                          "passed": rep.passed,
                          "max_residual": rep.max_residual})
        if args.json:
            print(json.dumps({"version": JSON_VERSION, "rows": lines}))
        else:
            for row in lines:
                print(f"{row['name']:<18} bounds {','.join(row['expected']):<12} "
                      f"{'pass' if row['passed'] else 'FAIL'}")
        return 0 if ok else 1
    rows = run_suite(args.suite, _engine_config(args), timeout_s=args.timeout)
    if args.json:
        print(json.dumps({"version": JSON_VERSION, "rows": [
            {"name": r.name, "expected": str(r.expected_max),
             "found": None if r.found_max is None else str(r.found_max),
             "bounds": None if r.found_bounds is None
             else {k: str(v) for k, v in sorted(r.found_bounds.items())},
             "status": r.status, "time_ms": r.time_ms, "stats": r.stats}
            for r in rows]}))
    else:
        print(format_rows(rows))
    return 0 if all(r.ok or r.status == "skipped" for r in rows) else 1


def cmd_lenscheck(args) -> int:
    ok = True
    rows = []
    for name, lens in catalog().items():
        rep = check_conditions(lens, args.samples, prec=_precision(), seed=args.seed)
        ok = ok and rep.passed
        rows.append({"lens": name, "passed": rep.passed, "samples": rep.samples,
                     "max_residual": rep.max_residual})
        if not args.json:
            print(f"{name:<14} {'pass' if rep.passed else 'FAIL':<5} "
                  f"max residual {rep.max_residual:.3e}")
    if args.json:
        print(json.dumps({"version": JSON_VERSION, "rows": rows}))
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="shel",
                                     description="backward error bound synthesis")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("analyze", help="synthesize bounds for a program")
    p.add_argument("expr", help="S-expression or path to a file holding one")
    p.add_argument("--all-bounds", action="store_true")
    _add_engine_flags(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("certify", help="synthesize and numerically certify")
    p.add_argument("expr")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_engine_flags(p)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("bench", help="reproduce benchmark tables")
    p.add_argument("suite", choices=["table1", "table2", "case-studies"])
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--samples", type=int, default=1000)
    _add_engine_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("lenscheck", help="lens condition property suite")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_lenscheck)

    args = parser.parse_args(argv)
    unit_roundoff("binary64")  # fail fast if model table is broken
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
