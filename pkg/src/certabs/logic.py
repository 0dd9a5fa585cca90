"""Temporal logic without the next operator: syntax, NNF, trace monitors.

Formulas are built from atoms, boolean connectives, and the until/release
pair; ``G p`` and ``F p`` are stored desugared as ``false R p`` and
``true U p``.  Monitoring works on finite traces with the declared
convention: until needs a witness inside the trace (strong), release is
evaluated over the available positions (weak).  Verdicts are monitoring
aids; correctness guarantees come from synthesis, not from monitoring.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .labelling import LabellingSpec, label

__all__ = [
    "Formula",
    "TrueF",
    "FalseF",
    "Atom",
    "Not",
    "And",
    "Or",
    "Until",
    "Release",
    "Verdict",
    "FormulaSyntaxError",
    "parse_formula",
    "unparse_formula",
    "formula_atoms",
    "to_nnf",
    "check_discrete",
    "check_continuous",
]


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class FalseF:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Release:
    left: "Formula"
    right: "Formula"


Formula = Union[TrueF, FalseF, Atom, Not, And, Or, Until, Release]

Trace = Sequence[frozenset]


class Verdict(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


_KEYWORDS = {"U", "R", "G", "F", "X", "true", "false"}
_FTOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()]))")


def _ftokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _FTOKEN_RE.match(text, pos)
        if m is None or m.end() == m.start():
            rest = text[pos:]
            if rest.strip() == "":
                break
            col = pos + len(rest) - len(rest.lstrip()) + 1
            raise FormulaSyntaxError(f"unexpected character {rest.lstrip()[0]!r}", col)
        pos = m.end()
        if m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name") + 1))
        else:
            tokens.append(("op", m.group("op"), m.start("op") + 1))
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _FormulaParser:
    """Precedence: ! > (G, F) > (U, R right-assoc) > & > |."""

    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.or_level()
        kind, text, col = self.peek()
        if kind != "end":
            raise FormulaSyntaxError(f"unexpected token {text!r}", col)
        return f

    def or_level(self) -> Formula:
        node = self.and_level()
        while self.peek()[:2] == ("op", "|"):
            self.advance()
            node = Or(node, self.and_level())
        return node

    def and_level(self) -> Formula:
        node = self.until_level()
        while self.peek()[:2] == ("op", "&"):
            self.advance()
            node = And(node, self.until_level())
        return node

    def until_level(self) -> Formula:
        node = self.unary_level()
        kind, text, _ = self.peek()
        if kind == "name" and text in ("U", "R"):
            self.advance()
            rhs = self.until_level()  # right-associative
            return Until(node, rhs) if text == "U" else Release(node, rhs)
        return node

    def unary_level(self) -> Formula:
        kind, text, col = self.peek()
        if kind == "op" and text == "!":
            self.advance()
            return Not(self.unary_level())
        if kind == "name" and text == "G":
            self.advance()
            return Release(FalseF(), self.unary_level())
        if kind == "name" and text == "F":
            self.advance()
            return Until(TrueF(), self.unary_level())
        if kind == "name" and text == "X":
            raise FormulaSyntaxError("the next operator is not part of this logic", col)
        return self.primary()

    def primary(self) -> Formula:
        kind, text, col = self.advance()
        if kind == "name":
            if text == "true":
                return TrueF()
            if text == "false":
                return FalseF()
            if text in _KEYWORDS:
                raise FormulaSyntaxError(f"{text!r} cannot be used as an atom", col)
            return Atom(text)
        if kind == "op" and text == "(":
            f = self.or_level()
            k, t, c = self.peek()
            if (k, t) != ("op", ")"):
                raise FormulaSyntaxError("unbalanced parentheses", c)
            self.advance()
            return f
        if kind == "end":
            raise FormulaSyntaxError("unexpected end of input", col)
        raise FormulaSyntaxError(f"unexpected token {text!r}", col)


def parse_formula(text: str) -> Formula:
    """Parse a formula; the next operator token ``X`` is rejected."""
    return _FormulaParser(_ftokenize(text)).parse()


def unparse_formula(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return f"!({unparse_formula(f.operand)})"
    if isinstance(f, And):
        return f"({unparse_formula(f.left)} & {unparse_formula(f.right)})"
    if isinstance(f, Or):
        return f"({unparse_formula(f.left)} | {unparse_formula(f.right)})"
    if isinstance(f, Until):
        return f"({unparse_formula(f.left)} U {unparse_formula(f.right)})"
    if isinstance(f, Release):
        return f"({unparse_formula(f.left)} R {unparse_formula(f.right)})"
    raise TypeError(f"not a formula node: {f!r}")


def formula_atoms(f: Formula) -> frozenset[str]:
    if isinstance(f, Atom):
        return frozenset((f.name,))
    if isinstance(f, (TrueF, FalseF)):
        return frozenset()
    if isinstance(f, Not):
        return formula_atoms(f.operand)
    return formula_atoms(f.left) | formula_atoms(f.right)


def to_nnf(f: Formula, complements: Mapping[str, str]) -> Formula:
    """Negation normal form with negated atoms replaced by complements.

    Negation is pushed through with De Morgan, double-negation
    elimination, and the until/release duality; ``!p`` becomes the atom
    declared as the complement of ``p`` (an error if undeclared).
    """
    if isinstance(f, (TrueF, FalseF, Atom)):
        return f
    if isinstance(f, And):
        return And(to_nnf(f.left, complements), to_nnf(f.right, complements))
    if isinstance(f, Or):
        return Or(to_nnf(f.left, complements), to_nnf(f.right, complements))
    if isinstance(f, Until):
        return Until(to_nnf(f.left, complements), to_nnf(f.right, complements))
    if isinstance(f, Release):
        return Release(to_nnf(f.left, complements), to_nnf(f.right, complements))
    g = f.operand
    if isinstance(g, TrueF):
        return FalseF()
    if isinstance(g, FalseF):
        return TrueF()
    if isinstance(g, Atom):
        comp = complements.get(g.name)
        if comp is None:
            raise ValueError(f"atom {g.name!r} is negated but has no declared complement")
        return Atom(comp)
    if isinstance(g, Not):
        return to_nnf(g.operand, complements)
    if isinstance(g, And):
        return Or(to_nnf(Not(g.left), complements), to_nnf(Not(g.right), complements))
    if isinstance(g, Or):
        return And(to_nnf(Not(g.left), complements), to_nnf(Not(g.right), complements))
    if isinstance(g, Until):
        return Release(to_nnf(Not(g.left), complements), to_nnf(Not(g.right), complements))
    if isinstance(g, Release):
        return Until(to_nnf(Not(g.left), complements), to_nnf(Not(g.right), complements))
    raise TypeError(f"not a formula node: {f!r}")


def _positions(f: Formula, trace: Trace, memo: dict) -> np.ndarray:
    """Boolean satisfaction of ``f`` at every position of the finite trace."""
    key = id(f)
    cached = memo.get(key)
    if cached is not None:
        return cached
    k = len(trace)
    if isinstance(f, TrueF):
        out = np.ones(k, dtype=bool)
    elif isinstance(f, FalseF):
        out = np.zeros(k, dtype=bool)
    elif isinstance(f, Atom):
        out = np.fromiter((f.name in step for step in trace), dtype=bool, count=k)
    elif isinstance(f, Not):
        out = ~_positions(f.operand, trace, memo)
    elif isinstance(f, And):
        out = _positions(f.left, trace, memo) & _positions(f.right, trace, memo)
    elif isinstance(f, Or):
        out = _positions(f.left, trace, memo) | _positions(f.right, trace, memo)
    elif isinstance(f, Until):
        a = _positions(f.left, trace, memo)
        b = _positions(f.right, trace, memo)
        out = np.zeros(k, dtype=bool)
        nxt = False  # no witness beyond the trace end
        for i in range(k - 1, -1, -1):
            out[i] = b[i] or (a[i] and nxt)
            nxt = out[i]
    elif isinstance(f, Release):
        a = _positions(f.left, trace, memo)
        b = _positions(f.right, trace, memo)
        out = np.zeros(k, dtype=bool)
        nxt = True  # obligation discharged at the trace end
        for i in range(k - 1, -1, -1):
            out[i] = b[i] and (a[i] or nxt)
            nxt = out[i]
    else:
        raise TypeError(f"not a formula node: {f!r}")
    memo[key] = out
    return out


def check_discrete(trace: Trace, f: Formula) -> Verdict:
    """Finite-trace verdict at position 0.

    Negation is handled by verdict flipping, so general formulas are
    accepted; monotonicity arguments require NNF input.
    """
    if len(trace) == 0:
        raise ValueError("trace must be non-empty")
    sat = bool(_positions(f, trace, {})[0])
    return Verdict.SAT if sat else Verdict.UNSAT


def _segment_box_interval(p: np.ndarray, q: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Parameter interval where the segment p->q lies in the closed box.

    Returns ``(t0, t1)`` within ``[0, 1]`` or ``None`` when disjoint.
    """
    t0, t1 = 0.0, 1.0
    d = q - p
    for j in range(len(p)):
        if d[j] == 0.0:
            if p[j] < lo[j] or p[j] > hi[j]:
                return None
            continue
        ta = (lo[j] - p[j]) / d[j]
        tb = (hi[j] - p[j]) / d[j]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1


def _covers_unit_interval(intervals: list[tuple[float, float]]) -> bool:
    if not intervals:
        return False
    intervals = sorted(intervals)
    reach = 0.0
    for a, b in intervals:
        if a > reach:
            return False
        reach = max(reach, b)
        if reach >= 1.0:
            return True
    return reach >= 1.0


def check_continuous(traj, labels: LabellingSpec, f: Formula) -> Verdict:
    """Three-valued verdict on the piecewise-linear interpolant.

    The discrete semantics are evaluated on the dense sample sequence.
    ``UNKNOWN`` is returned when the interpolant provably visits or leaves
    a formula-relevant region strictly between two adjacent samples, which
    the sample sequence cannot see (temporal resolution insufficient).
    """
    states = np.asarray(traj.states, dtype=float)
    if len(states) == 0:
        raise ValueError("trajectory has no samples")
    dense_trace = [label(labels, x) for x in states]
    verdict = check_discrete(dense_trace, f)

    atoms = formula_atoms(f) & set(labels.propositions)
    for name in sorted(atoms):
        region = labels.propositions[name]
        if not region:
            continue
        boxes = [(np.asarray(b.lower), np.asarray(b.upper)) for b in region]
        for i in range(len(states) - 1):
            p, q = states[i], states[i + 1]
            p_in = name in dense_trace[i]
            q_in = name in dense_trace[i + 1]
            if not p_in and not q_in:
                # a visit strictly inside the step is invisible to sampling
                for lo, hi in boxes:
                    if _segment_box_interval(p, q, lo, hi) is not None:
                        return Verdict.UNKNOWN
            elif p_in and q_in and len(boxes) > 1:
                # both ends in the union: the segment may still dip out
                ivals = []
                for lo, hi in boxes:
                    hit = _segment_box_interval(p, q, lo, hi)
                    if hit is not None:
                        ivals.append(hit)
                if not _covers_unit_interval(ivals):
                    return Verdict.UNKNOWN
    return verdict
