"""Arithmetic expressions for vector-field definitions.

Systems are described in config files, so the right-hand sides of the
dynamics are parsed from strings rather than written as Python code.

Grammar (whitespace insignificant, ``NAME`` = ``[A-Za-z_][A-Za-z0-9_]*``)::

    expr     := term (("+" | "-") term)*
    term     := factor (("*" | "/") factor)*
    factor   := "-" factor | power
    power    := primary ("^" exponent)*          # left-associative
    exponent := "-" exponent | primary
    primary  := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

``^`` binds tighter than unary minus, which binds tighter than ``*`` and
``/``, which bind tighter than ``+`` and ``-``; binary operators of equal
precedence associate to the left.  Function application requires
parentheses and there is no implicit multiplication (``2x`` is an error).
All trigonometric functions work in radians.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

__all__ = [
    "Expression",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "EvalError",
    "parse_expression",
    "unparse",
    "evaluate",
    "free_variables",
    "compile_expression",
    "FUNCTION_ARITY",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Parse failure; ``column`` is the 1-based offset into the input."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


class EvalError(ExprError):
    """Evaluation failure; ``expression`` is the offending sub-expression."""

    def __init__(self, message: str, expression: "Expression"):
        super().__init__(f"{message} in '{unparse(expression)}'")
        self.expression = expression


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expression", ...]


Expression = Union[Num, Var, Neg, BinOp, Call]

FUNCTION_ARITY = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "atan": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Token:
    __slots__ = ("kind", "text", "column")

    def __init__(self, kind: str, text: str, column: int):
        self.kind = kind
        self.text = text
        self.column = column


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == m.start():
            # skip over pure whitespace tail
            rest = text[pos:]
            if rest.strip() == "":
                break
            col = pos + len(rest) - len(rest.lstrip()) + 1
            raise ExprSyntaxError(f"unexpected character {rest.lstrip()[0]!r}", col)
        pos = m.end()
        for kind in ("number", "name", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append(_Token(kind, val, m.start(kind) + 1))
                break
    tokens.append(_Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str, context: str) -> None:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            self.advance()
            return
        if op == ")":
            raise ExprSyntaxError("unbalanced parentheses", tok.column)
        raise ExprSyntaxError(f"expected {op!r} {context}", tok.column)

    def parse(self) -> Expression:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            if tok.kind == "op" and tok.text == ")":
                raise ExprSyntaxError("unbalanced parentheses", tok.column)
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.column)
        return e

    def expr(self) -> Expression:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expression:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        node = self.primary()
        while self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            node = BinOp("^", node, self.exponent())
        return node

    def exponent(self) -> Expression:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.advance()
            return Neg(self.exponent())
        return self.primary()

    def primary(self) -> Expression:
        tok = self.advance()
        if tok.kind == "number":
            return Num(float(tok.text))
        if tok.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                if tok.text not in FUNCTION_ARITY:
                    raise ExprSyntaxError(f"unknown function {tok.text!r}", tok.column)
                self.advance()
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")", "to close argument list")
                arity = FUNCTION_ARITY[tok.text]
                if len(args) != arity:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {arity} argument(s), got {len(args)}",
                        tok.column,
                    )
                return Call(tok.text, tuple(args))
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            self.expect_op(")", "to close group")
            return e
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", tok.column)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.column)


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExprSyntaxError` with a 1-based column on malformed
    input, unknown function names, or unbalanced parentheses.
    """
    if not text.strip():
        raise ExprSyntaxError("empty expression", 1)
    return _Parser(_tokenize(text)).parse()


# precedence levels for unparsing; higher binds tighter
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expression) -> int:
    if isinstance(e, BinOp):
        if e.op in "+-":
            return _PREC_ADD
        if e.op in "*/":
            return _PREC_MUL
        return _PREC_POW
    if isinstance(e, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def unparse(e: Expression) -> str:
    """Render a tree back to text; reparsing yields a structurally equal tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = unparse(e.operand)
        if _prec(e.operand) < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(unparse(a) for a in e.args)})"
    if isinstance(e, BinOp):
        me = _prec(e)
        left = unparse(e.left)
        if _prec(e.left) < me:
            left = f"({left})"
        right = unparse(e.right)
        # left-associative: same-precedence right operands need parentheses
        if _prec(e.right) <= me:
            right = f"({right})"
        return f"{left}{e.op}{right}"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expression) -> frozenset[str]:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Call):
        out: frozenset[str] = frozenset()
        for a in e.args:
            out |= free_variables(a)
        return out
    raise TypeError(f"not an expression node: {e!r}")


_SCALAR_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "atan": math.atan,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "abs": abs,
    "min": min,
    "max": max,
}


def evaluate(e: Expression, env: Mapping[str, float]) -> float:
    """Evaluate in IEEE double precision under ``env``.

    Deterministic for a fixed environment.  Raises :class:`EvalError` for
    unbound variables and domain errors (division by zero, log of a
    non-positive number, sqrt of a negative number, overflow), naming the
    offending sub-expression.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise EvalError("division by zero", e)
            return a / b
        try:
            # math.pow rejects negative bases with fractional exponents,
            # where ** would silently go complex
            return math.pow(a, b)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise EvalError(f"power domain error ({exc})", e) from None
    if isinstance(e, Call):
        args = [evaluate(a, env) for a in e.args]
        if e.func == "log":
            if args[0] <= 0.0:
                raise EvalError("log of a non-positive number", e)
            return math.log(args[0])
        if e.func == "sqrt" and args[0] < 0.0:
            raise EvalError("sqrt of a negative number", e)
        try:
            return _SCALAR_FUNCS[e.func](*args)
        except (ValueError, OverflowError) as exc:
            raise EvalError(f"domain error ({exc})", e) from None
    raise TypeError(f"not an expression node: {e!r}")


_NUMPY_FUNCS = "sin cos tan atan exp log sqrt".split()


def _codegen(e: Expression) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"_v_{e.name}"
    if isinstance(e, Neg):
        return f"(-{_codegen(e.operand)})"
    if isinstance(e, BinOp):
        op = "**" if e.op == "^" else e.op
        return f"({_codegen(e.left)}{op}{_codegen(e.right)})"
    if isinstance(e, Call):
        args = ", ".join(_codegen(a) for a in e.args)
        if e.func in _NUMPY_FUNCS:
            return f"_np.{e.func}({args})"
        if e.func == "abs":
            return f"_np.abs({args})"
        if e.func == "min":
            return f"_np.minimum({args})"
        return f"_np.maximum({args})"
    raise TypeError(f"not an expression node: {e!r}")


def compile_expression(e: Expression, variables: tuple[str, ...]):
    """Compile to a fast callable over scalars or numpy arrays.

    The returned function takes positional arguments in the order of
    ``variables`` and broadcasts like a numpy ufunc.  No domain checking is
    performed; callers are expected to screen for non-finite results.
    """
    import numpy as _np

    missing = free_variables(e) - set(variables)
    if missing:
        raise EvalError(f"unbound variable {sorted(missing)[0]!r}", e)
    params = ", ".join(f"_v_{name}" for name in variables)
    source = f"lambda {params}: ({_codegen(e)})"
    return eval(compile(source, "<expr>", "eval"), {"_np": _np})
