"""Expression AST for straight-line floating-point programs, with an
S-expression reader and printer.

Programs are terms over named variables built from Add, Sub, Mul, Div and
Sqrt.  The textual format is an S-expression with case-sensitive operator
heads and bare identifiers as variables, e.g. ``(Add (Mul a a) (Mul b b))``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class ExprSyntaxError(ValueError):
    """Raised on malformed expression text; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


@dataclass(frozen=True)
class Expr:
    """Base class for expression nodes.  Nodes are immutable and hashable."""

    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash(self._key()))

    def _key(self):
        raise NotImplementedError

    def __hash__(self):
        return self._hash

    def __str__(self) -> str:
        return format_expr(self)


@dataclass(frozen=True, eq=False)
class Var(Expr):
    name: str = ""

    def __post_init__(self):
        if not _IDENT.fullmatch(self.name):
            raise ValueError(f"invalid variable name: {self.name!r}")
        super().__post_init__()

    def _key(self):
        return ("Var", self.name)

    def __eq__(self, other):
        return type(other) is Var and other.name == self.name


@dataclass(frozen=True, eq=False)
class Sqrt(Expr):
    child: Expr = None  # type: ignore[assignment]

    def _key(self):
        return ("Sqrt", self.child._hash)

    def __eq__(self, other):
        return type(other) is Sqrt and other.child == self.child


class _BinOp(Expr):
    left: Expr
    right: Expr

    def _key(self):
        return (type(self).__name__, self.left._hash, self.right._hash)

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and other.left == self.left
            and other.right == self.right
        )


@dataclass(frozen=True, eq=False)
class Add(_BinOp):
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Sub(_BinOp):
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Mul(_BinOp):
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Div(_BinOp):
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_BINOPS = {"Add": Add, "Sub": Sub, "Mul": Mul, "Div": Div}
_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def parse_expr(text: str) -> Expr:
    """Parse S-expression `text` into an Expr.  Raises ExprSyntaxError."""
    tokens: list[tuple[str, int]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    if text[pos:].strip():
        raise ExprSyntaxError("unexpected character", pos)
    if not tokens:
        raise ExprSyntaxError("empty input", 0)

    idx = 0

    def parse_one() -> Expr:
        nonlocal idx
        if idx >= len(tokens):
            raise ExprSyntaxError("unexpected end of input", len(text))
        tok, at = tokens[idx]
        idx += 1
        if tok == ")":
            raise ExprSyntaxError("unexpected ')'", at)
        if tok != "(":
            if not _IDENT.fullmatch(tok):
                raise ExprSyntaxError(f"invalid identifier {tok!r}", at)
            if tok in _BINOPS or tok == "Sqrt":
                raise ExprSyntaxError(f"operator {tok!r} used as variable", at)
            return Var(tok)
        if idx >= len(tokens):
            raise ExprSyntaxError("unbalanced '('", at)
        head, head_at = tokens[idx]
        idx += 1
        if head == "Sqrt":
            child = parse_one()
            node: Expr = Sqrt(child)
        elif head in _BINOPS:
            left = parse_one()
            right = parse_one()
            node = _BINOPS[head](left, right)
        else:
            raise ExprSyntaxError(f"unknown operator {head!r}", head_at)
        if idx >= len(tokens) or tokens[idx][0] != ")":
            raise ExprSyntaxError("expected ')'", tokens[idx][1] if idx < len(tokens) else len(text))
        idx += 1
        return node

    result = parse_one()
    if idx != len(tokens):
        raise ExprSyntaxError("trailing input", tokens[idx][1])
    return result


def format_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Sqrt):
        return f"(Sqrt {format_expr(e.child)})"
    if isinstance(e, _BinOp):
        return f"({type(e).__name__} {format_expr(e.left)} {format_expr(e.right)})"
    raise TypeError(f"not an Expr: {e!r}")


def free_vars(e: Expr) -> list[str]:
    """Free variables in first-occurrence, left-to-right order."""
    seen: dict[str, None] = {}

    def walk(node: Expr):
        if isinstance(node, Var):
            seen.setdefault(node.name, None)
        elif isinstance(node, Sqrt):
            walk(node.child)
        else:
            walk(node.left)  # type: ignore[attr-defined]
            walk(node.right)  # type: ignore[attr-defined]

    walk(e)
    return list(seen)


def subterms(e: Expr) -> list[Expr]:
    """All subterms of `e` in postorder (with repeats)."""
    out: list[Expr] = []

    def walk(node: Expr):
        if isinstance(node, Sqrt):
            walk(node.child)
        elif isinstance(node, _BinOp):
            walk(node.left)
            walk(node.right)
        out.append(node)

    walk(e)
    return out


def operators_used(e: Expr) -> set[str]:
    return {type(t).__name__ for t in subterms(e) if not isinstance(t, Var)}


def comm_normal(e: Expr) -> Expr:
    """Commutativity-canonical form: children of Add and Mul are ordered by
    their printed form.  Floating-point semantics are unchanged (machine add
    and mul are commutative under round-to-nearest)."""
    if isinstance(e, Var):
        return e
    if isinstance(e, Sqrt):
        return Sqrt(comm_normal(e.child))
    left = comm_normal(e.left)  # type: ignore[attr-defined]
    right = comm_normal(e.right)  # type: ignore[attr-defined]
    if isinstance(e, (Add, Mul)) and format_expr(right) < format_expr(left):
        left, right = right, left
    return type(e)(left, right)
