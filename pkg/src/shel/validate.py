"""Numerical certification of backward error bounds.

``certify`` turns a synthesized derivation into an executable lens, samples
inputs, builds the backward-stability witness from the recorded rounding
shifts, and confirms (a) the exact semantics at the witness reproduces the
machine output to extended precision and (b) each input moved by at most its
claimed bound.  ``case_study_pipelines`` houses hand-assembled lens pipelines
(using div, sub and adddiv, which synthesis does not) with their exact
expected bounds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from mpmath import mp, mpf

from .expr import Add, Div, Expr, Mul, Sqrt, Sub, Var
from .lenses import (
    Compose,
    Dist,
    Dup,
    Identity,
    Lens,
    Parallel,
    PrimAdd,
    PrimAddDiv,
    PrimDiv,
    PrimDMul,
    PrimMul,
    PrimSqrt,
    PrimSub,
    PushAt,
    Rearrange,
    ShareStarAt,
    ShareTensor,
    StarLens,
    bind,
    lens_swap,
)
from .numerics import BINARY64, DEFAULT_PRECISION, EvalError, eval_float, eval_real, rp_distance
from .objects import BaseObj, StarDep, StarObj, bounds, shift_dim, star1, tensor, value_arity
from .synth import BoundReport, Derivation, derivation_to_lens, start_var_slots


@dataclass
class StabilityReport:
    program: str
    claimed: dict
    samples: int
    max_ratio: dict = field(default_factory=dict)  # var -> max RP(x, witness)/eps
    max_residual: float = 0.0
    counterexamples: list = field(default_factory=list)
    resamples: int = 0

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def to_json_dict(self) -> dict:
        return {
            "program": self.program,
            "claimed": {k: str(v) for k, v in self.claimed.items()},
            "samples": self.samples,
            "max_ratio": {k: float(v) for k, v in self.max_ratio.items()},
            "max_residual": float(self.max_residual),
            "passed": self.passed,
            "counterexamples": self.counterexamples[:10],
            "resamples": self.resamples,
        }


def default_sampler(names):
    def draw(rng: random.Random):
        out = []
        for _ in names:
            mag = 2.0 ** rng.uniform(-30.0, 30.0)
            out.append(mag if rng.random() < 0.5 else -mag)
        return tuple(out)
    return draw


def certify_lens(lens: Lens, program: Expr, slot_names, claimed: dict,
                 n_samples: int = 1000, model=BINARY64,
                 prec: int = DEFAULT_PRECISION, seed: int = 0,
                 sampler=None) -> StabilityReport:
    """Certify one lens against a program's exact and float semantics."""
    report = StabilityReport(program=str(program),
                             claimed={k: Fraction(v) for k, v in claimed.items()},
                             samples=n_samples)
    sampler = sampler or default_sampler(slot_names)
    rng = random.Random(seed)
    with mp.workprec(prec):
        eps = model.eps_mpf(prec)
        slack = mpf(2) ** (-(prec - 16))
        rtol = mpf(2) ** (-(prec // 2))
        report.max_ratio = {n: 0.0 for n in slot_names}
        for i in range(n_samples):
            inst = None
            for _ in range(200):
                xs = sampler(rng)
                valuation = dict(zip(slot_names, xs))
                try:
                    inst = bind(lens, xs, model, prec)
                    fl, _ = eval_float(program, valuation, model, prec)
                    break
                except EvalError:
                    report.resamples += 1
            if inst is None:
                report.counterexamples.append({"sample": i, "kind": "sampling"})
                continue
            if fl != inst.outputs[0]:
                report.counterexamples.append(
                    {"sample": i, "kind": "float-mismatch", "inputs": inst.inputs,
                     "lens": inst.outputs[0], "eval": fl})
                continue
            witness = inst.witness()
            wval = dict(zip(slot_names, witness))
            try:
                exact = eval_real(program, wval, prec)
            except EvalError as exc:
                report.counterexamples.append(
                    {"sample": i, "kind": "witness-domain", "error": str(exc)})
                continue
            resid = rp_distance(exact, mpf(fl), prec)
            report.max_residual = max(report.max_residual, float(resid))
            if resid > rtol:
                report.counterexamples.append(
                    {"sample": i, "kind": "exactness", "inputs": inst.inputs,
                     "residual": float(resid)})
                continue
            for name, x, w in zip(slot_names, inst.inputs, witness):
                d = rp_distance(x, w, prec)
                ratio = float(d / eps)
                report.max_ratio[name] = max(report.max_ratio[name], ratio)
                q = report.claimed[name]
                if d > (mpf(q.numerator) / q.denominator) * eps + slack:
                    report.counterexamples.append(
                        {"sample": i, "kind": "bound", "var": name,
                         "ratio": ratio, "claimed": str(q), "inputs": inst.inputs})
                    break
    return report


def certify(e: Expr, report: BoundReport, derivation: Derivation,
            n_samples: int = 1000, model=BINARY64, prec: int = DEFAULT_PRECISION,
            seed: int = 0, sampler=None) -> StabilityReport:
    """Certify a synthesized bound report via its derivation."""
    if derivation.start != report.start:
        raise ValueError("derivation does not match the report")
    lens = derivation_to_lens(derivation)
    names = start_var_slots(derivation)
    return certify_lens(lens, derivation.program, names, report.bounds,
                        n_samples, model, prec, seed, sampler)


# --- dot product oracle -------------------------------------------------------

def dotprod_expr() -> Expr:
    return Add(Mul(Var("x1"), Var("y1")), Mul(Var("x2"), Var("y2")))


def oracle_dotprod(x1: float, x2: float, y1: float, y2: float,
                   model=BINARY64, prec: int = DEFAULT_PRECISION):
    """Closed-form witness for the two-term dot product.

    Splits each product's rounding shift, plus the final addition's shift,
    evenly across the product's two inputs.  Returns (witness dict, output).
    """
    from .numerics import rounded_op
    with mp.workprec(prec):
        m1, d1 = rounded_op("Mul", (x1, y1), model, prec, "dot/mul1")
        m2, d2 = rounded_op("Mul", (x2, y2), model, prec, "dot/mul2")
        s, d3 = rounded_op("Add", (m1, m2), model, prec, "dot/add")
        f1 = mp.exp((d1 + d3) / 2)
        f2 = mp.exp((d2 + d3) / 2)
        witness = {
            "x1": mpf(x1) * f1, "y1": mpf(y1) * f1,
            "x2": mpf(x2) * f2, "y2": mpf(y2) * f2,
        }
    return witness, s


# --- case studies -------------------------------------------------------------

@dataclass
class CaseStudy:
    name: str
    lens: Lens
    var_names: tuple
    expected: tuple  # source bounds, eps units, in var order
    program: Expr
    sampler: object = None


def _star0_to_tensor(a: BaseObj, b: BaseObj) -> Rearrange:
    src = star1(a, b, 0)
    tgt = tensor((a, b))
    n, d = value_arity(src), shift_dim(src)
    return Rearrange(src, tgt, list(range(n)), list(range(d)), label="unstar0")


def _chain(*ls: Lens) -> Lens:
    out = ls[0]
    for nxt in ls[1:]:
        out = Compose(out, nxt)
    return out


def _pairup(obj_list, vmap):
    src = tensor(tuple(obj_list))
    tgt = tensor(tuple(obj_list[i] for i in vmap))
    return Rearrange(src, tgt, list(vmap), list(vmap), label="reorder")


def _spd_sampler(rng: random.Random):
    # a11 = x^2, a21 = x*y, a22 = y^2 + z^2 keeps the Schur complement positive
    x = 2.0 ** rng.uniform(-8.0, 8.0)
    y = 2.0 ** rng.uniform(-8.0, 8.0) * (1 if rng.random() < 0.5 else -1)
    z = 2.0 ** rng.uniform(-8.0, 8.0)
    return (x * x, x * y, y * y + z * z)


def _wavg_sampler(rng: random.Random):
    w1 = 2.0 ** rng.uniform(-10.0, 10.0)
    w2 = 2.0 ** rng.uniform(-10.0, 10.0)
    x1 = 2.0 ** rng.uniform(-10.0, 10.0) * (1 if rng.random() < 0.5 else -1)
    x2 = 2.0 ** rng.uniform(-10.0, 10.0) * (1 if rng.random() < 0.5 else -1)
    return (w1, w2, x1, x2)


def case_study_pipelines(model=BINARY64) -> list:
    """The worked pipelines, each with its exact expected source bounds."""
    f = Fraction
    studies = []

    # x + x*y: thread x through the product, bond, add.
    b = BaseObj(1, f(1))
    lens1 = _chain(
        PrimDMul(0, f(1), f(0)),
        ShareStarAt(star1(b, BaseObj(1, f(0)), 1), 0),
        PrimAdd(f(0)),
    )
    studies.append(CaseStudy(
        "x_plus_xy", lens1, ("x", "y"), (f(1), f(1)),
        Add(Var("x"), Mul(Var("x"), Var("y")))))

    # 2x2 Cholesky, l22 entry.
    b0, b2, b3 = BaseObj(1, f(0)), BaseObj(1, f(2)), BaseObj(1, f(3))
    lens2 = _chain(
        Parallel((PrimSqrt(f(0)), Identity(b3), Identity(b3))),
        Parallel((lens_swap(b0, b3), Identity(b3))),
        Parallel((PrimDiv(f(2)), Identity(b3))),
        Parallel((Dup(b2), Identity(b3))),
        Parallel((PrimMul(f(3)), Identity(b3))),
        lens_swap(b3, b3),
        ShareTensor(1, 1, f(3)),
        PrimSub(f(2)),
        PrimSqrt(f(0)),
    )
    l21 = Div(Var("a21"), Sqrt(Var("a11")))
    studies.append(CaseStudy(
        "cholesky_l22", lens2, ("a11", "a21", "a22"), (f(2), f(3), f(3)),
        Sqrt(Sub(Var("a22"), Mul(l21, l21))), _spd_sampler))

    # x + a*x^2: two dmuls onto the same root, inverse-shift share, add.
    bx = BaseObj(1, f(1))
    lens3 = _chain(
        lens_swap(BaseObj(1, f(3)), bx),
        PrimDMul(0, f(1), f(2)),
        PrimDMul(1, f(1), f(1)),
        ShareStarAt(star1(bx, BaseObj(1, f(1)), 2), 0),
        PrimAdd(f(0)),
    )
    studies.append(CaseStudy(
        "x_plus_ax2", lens3, ("a", "x"), (f(3), f(1)),
        Add(Var("x"), Mul(Mul(Var("a"), Var("x")), Var("x")))))

    # weighted average, analysis A: free the products via push.
    w1 = BaseObj(1, f(1))
    x4 = BaseObj(1, f(4))
    m3 = BaseObj(1, f(3))
    m2 = BaseObj(1, f(2))
    lens4 = _chain(
        _pairup([w1, w1, x4, x4], (0, 2, 1, 3)),
        Parallel((PrimDMul(0, f(1), f(3)), PrimDMul(0, f(1), f(3)))),
        Parallel((
            Compose(PushAt(star1(w1, m3, 1), 0, 0), _star0_to_tensor(w1, m2)),
            Compose(PushAt(star1(w1, m3, 1), 0, 0), _star0_to_tensor(w1, m2)),
        )),
        _pairup([w1, m2, w1, m2], (0, 2, 1, 3)),
        Parallel((ShareTensor(1, 1, f(1)), ShareTensor(1, 1, f(2)))),
        Parallel((PrimAdd(f(0)), PrimAdd(f(1)))),
        lens_swap(BaseObj(1, f(0)), BaseObj(1, f(1))),
        PrimDiv(f(0)),
    )
    wavg = Div(Add(Mul(Var("w1"), Var("x1")), Mul(Var("w2"), Var("x2"))),
               Add(Var("w1"), Var("w2")))
    studies.append(CaseStudy(
        "weighted_avg_a", lens4, ("w1", "w2", "x1", "x2"),
        (f(1), f(1), f(4), f(4)), wavg, _wavg_sampler))

    # weighted average, analysis B: distribute, share under the star,
    # then add/divide pushing everything onto the numerator.
    w0 = BaseObj(1, f(0))
    dist = Dist(w0, m3, 1, w0, m3, 1)
    paired_dep = StarObj(tensor((w0, w0)),
                         (StarDep(tensor((m3, m3)), ((1, 0), (0, 1))),))
    n, d = value_arity(paired_dep), shift_dim(paired_dep)
    regroup = Rearrange(dist.target, paired_dep, list(range(n)), list(range(d)),
                        label="regroup")
    lens5 = _chain(
        _pairup([w0, w0, x4, x4], (0, 2, 1, 3)),
        Parallel((PrimDMul(0, f(0), f(3)), PrimDMul(0, f(0), f(3)))),
        dist,
        regroup,
        StarLens(ShareTensor(1, 1, f(0)), (ShareTensor(1, 1, f(3)),),
                 (((1, 0), (0, 1)),), (((1,),),), label="share*share"),
        StarLens(Identity(BaseObj(2, f(0))), (PrimAdd(f(2)),),
                 (((1,),),), (((1,),),), label="id*add"),
        PrimAddDiv(f(0), f(0)),
    )
    studies.append(CaseStudy(
        "weighted_avg_b", lens5, ("w1", "w2", "x1", "x2"),
        (f(0), f(0), f(4), f(4)), wavg, _wavg_sampler))

    return studies


def check_case_study(cs: CaseStudy, n_samples: int = 1000, model=BINARY64,
                     prec: int = DEFAULT_PRECISION, seed: int = 0) -> StabilityReport:
    assert bounds(cs.lens.source) == tuple(cs.expected), \
        f"{cs.name}: source bounds {bounds(cs.lens.source)} != expected {cs.expected}"
    claimed = dict(zip(cs.var_names, cs.expected))
    return certify_lens(cs.lens, cs.program, cs.var_names, claimed,
                        n_samples, model, prec, seed, cs.sampler)
