import itertools

import numpy as np
import pytest

from certabs.geometry import Box
from certabs.labelling import LabellingSpec, label, strengthen
from certabs.logic import (
    And,
    Atom,
    FalseF,
    FormulaSyntaxError,
    Not,
    Or,
    Release,
    TrueF,
    Until,
    Verdict,
    check_continuous,
    check_discrete,
    formula_atoms,
    parse_formula,
    to_nnf,
)
from certabs.system import Trajectory, intersample_bound


def T(*steps):
    return [frozenset(s) for s in steps]


class TestParse:
    def test_always_desugars_to_release(self):
        assert parse_formula("G safe") == Release(FalseF(), Atom("safe"))

    def test_eventually_desugars_to_until(self):
        assert parse_formula("F goal") == Until(TrueF(), Atom("goal"))

    def test_until(self):
        assert parse_formula("p U q") == Until(Atom("p"), Atom("q"))

    def test_next_operator_rejected(self):
        with pytest.raises(FormulaSyntaxError, match="next operator"):
            parse_formula("X p")

    def test_until_binds_tighter_than_and(self):
        assert parse_formula("p U q & r") == And(Until(Atom("p"), Atom("q")), Atom("r"))

    def test_and_binds_tighter_than_or(self):
        assert parse_formula("a & b | c") == Or(And(Atom("a"), Atom("b")), Atom("c"))

    def test_until_right_associative(self):
        assert parse_formula("a U b U c") == Until(Atom("a"), Until(Atom("b"), Atom("c")))

    def test_negation_and_parens(self):
        assert parse_formula("!(p | q)") == Not(Or(Atom("p"), Atom("q")))

    def test_unary_stacking(self):
        assert parse_formula("G F p") == Release(FalseF(), Until(TrueF(), Atom("p")))

    def test_syntax_error_position(self):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("p U")
        with pytest.raises(FormulaSyntaxError, match="unbalanced"):
            parse_formula("(p U q")


COMPS = {"p": "np", "q": "nq", "np": "p", "nq": "q"}


class TestNnf:
    def test_negated_until_is_dual(self):
        f = Not(Until(Atom("p"), Atom("q")))
        assert to_nnf(f, COMPS) == Release(Atom("np"), Atom("nq"))

    def test_double_negation(self):
        assert to_nnf(Not(Not(Atom("p"))), COMPS) == Atom("p")

    def test_de_morgan(self):
        f = Not(And(Atom("p"), Atom("q")))
        assert to_nnf(f, COMPS) == Or(Atom("np"), Atom("nq"))

    def test_undeclared_complement(self):
        with pytest.raises(ValueError, match="complement"):
            to_nnf(Not(Atom("r")), COMPS)

    def test_negated_release_is_until(self):
        f = Not(Release(Atom("p"), Atom("q")))
        assert to_nnf(f, COMPS) == Until(Atom("np"), Atom("nq"))


class TestCheckDiscrete:
    def test_until_witnessed(self):
        assert check_discrete(T({"p"}, {"p"}, {"q"}), parse_formula("p U q")) is Verdict.SAT

    def test_always_on_finite_trace(self):
        assert check_discrete(T({"p"}, {"p"}, {"p"}), parse_formula("G p")) is Verdict.SAT

    def test_until_gap_before_witness(self):
        assert (
            check_discrete(T({"p"}, set(), {"q"}), parse_formula("p U q")) is Verdict.UNSAT
        )

    def test_until_needs_in_trace_witness(self):
        assert check_discrete(T({"p"}, {"p"}), parse_formula("p U q")) is Verdict.UNSAT

    def test_release_discharged_by_left(self):
        assert check_discrete(T({"q"}, {"p", "q"}, set()), parse_formula("p R q")) is Verdict.SAT

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            check_discrete([], parse_formula("p"))


def _oracle(trace, f, i):
    """Independent evaluator: literal quantifier unfolding of the semantics."""
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Atom):
        return f.name in trace[i]
    if isinstance(f, Not):
        return not _oracle(trace, f.operand, i)
    if isinstance(f, And):
        return _oracle(trace, f.left, i) and _oracle(trace, f.right, i)
    if isinstance(f, Or):
        return _oracle(trace, f.left, i) or _oracle(trace, f.right, i)
    if isinstance(f, Until):
        return any(
            _oracle(trace, f.right, j)
            and all(_oracle(trace, f.left, k) for k in range(i, j))
            for j in range(i, len(trace))
        )
    if isinstance(f, Release):
        return all(
            _oracle(trace, f.right, j)
            or any(_oracle(trace, f.left, k) for k in range(i, j))
            for j in range(i, len(trace))
        )
    raise TypeError(f)


def test_fragment_agrees_with_bruteforce_on_all_short_traces():
    fragment = [
        parse_formula("G p"),
        parse_formula("F p"),
        parse_formula("p U q"),
        parse_formula("p R q"),
    ]
    letters = [frozenset(), frozenset({"p"}), frozenset({"q"}), frozenset({"p", "q"})]
    for length in range(1, 7):
        for steps in itertools.product(letters, repeat=length):
            trace = list(steps)
            for f in fragment:
                want = Verdict.SAT if _oracle(trace, f, 0) else Verdict.UNSAT
                assert check_discrete(trace, f) is want


def _random_formula(rng, depth):
    atoms = ["p", "q", "r"]
    if depth == 0 or rng.integers(0, 3) == 0:
        return Atom(str(rng.choice(atoms)))
    kind = rng.integers(0, 5)
    if kind == 0:
        return Not(_random_formula(rng, depth - 1))
    a = _random_formula(rng, depth - 1)
    b = _random_formula(rng, depth - 1)
    return [And, Or, Until, Release][int(kind) - 1](a, b)


def test_nnf_preserves_finite_trace_verdicts():
    comps = {"p": "cp", "q": "cq", "r": "cr", "cp": "p", "cq": "q", "cr": "r"}
    rng = np.random.default_rng(321)
    for _ in range(1_000):
        f = _random_formula(rng, int(rng.integers(1, 5)))
        length = int(rng.integers(1, 9))
        trace = []
        for _ in range(length):
            base = {a for a in ("p", "q", "r") if rng.integers(0, 2)}
            full = base | {comps[a] for a in ("p", "q", "r") if a not in base}
            trace.append(frozenset(full))
        assert check_discrete(trace, f) is check_discrete(trace, to_nnf(f, comps))


def _ramp_trajectory(t_end, h):
    times = np.arange(0.0, t_end + h / 2, h)
    states = times.reshape(-1, 1).copy()
    return Trajectory(
        h=h, times=times, states=states,
        controls=np.zeros((len(times) - 1, 1)),
        disturbances=np.zeros((len(times) - 1, 1)),
    )


class TestCheckContinuous:
    def test_crossing_detected(self):
        traj = _ramp_trajectory(10.0, 0.01)
        labels = LabellingSpec({"q": (Box((5.0,), (10.0,)),)})
        assert check_continuous(traj, labels, parse_formula("F q")) is Verdict.SAT

    def test_global_invariant(self):
        traj = _ramp_trajectory(10.0, 0.01)
        labels = LabellingSpec({"p": (Box((-1.0,), (11.0,)),)})
        assert check_continuous(traj, labels, parse_formula("G p")) is Verdict.SAT

    def test_fast_full_crossing_is_unknown(self):
        # the interpolant passes through [0, 1] strictly between two samples
        times = np.array([0.0, 1.0, 2.0])
        states = np.array([[2.0], [-1.0], [2.0]])
        traj = Trajectory(
            h=1.0, times=times, states=states,
            controls=np.zeros((2, 1)), disturbances=np.zeros((2, 1)),
        )
        labels = LabellingSpec({"p": (Box((0.0,), (1.0,)),)})
        assert check_continuous(traj, labels, parse_formula("F p")) is Verdict.UNKNOWN

    def test_unknown_only_for_relevant_atoms(self):
        times = np.array([0.0, 1.0, 2.0])
        states = np.array([[2.0], [-1.0], [2.0]])
        traj = Trajectory(
            h=1.0, times=times, states=states,
            controls=np.zeros((2, 1)), disturbances=np.zeros((2, 1)),
        )
        labels = LabellingSpec(
            {"p": (Box((0.0,), (1.0,)),), "wide": (Box((-5.0,), (5.0,)),)}
        )
        assert check_continuous(traj, labels, parse_formula("G wide")) is Verdict.SAT

    def test_union_gap_is_unknown(self):
        # both endpoints in the union but the segment dips through the gap
        times = np.array([0.0, 1.0])
        states = np.array([[0.5], [2.5]])
        traj = Trajectory(
            h=1.0, times=times, states=states,
            controls=np.zeros((1, 1)), disturbances=np.zeros((1, 1)),
        )
        labels = LabellingSpec({"p": (Box((0.0,), (1.0,)), Box((2.0,), (3.0,)))})
        assert check_continuous(traj, labels, parse_formula("G p")) is Verdict.UNKNOWN


def test_discrete_with_margin_never_contradicts_continuous():
    # sampled satisfaction under the strengthened labelling must not be
    # overturned by the dense monitor with the plain labelling
    rng = np.random.default_rng(777)
    fragment = ["G p", "F p", "p U q", "p R q"]
    M = 1.0
    substeps = 8
    for _ in range(1_000):
        tau = float(rng.uniform(0.1, 0.5))
        steps = int(rng.integers(2, 7))
        h = tau / substeps
        # velocity bounded by M and constant per sub-step: the interpolant
        # through the dense samples is the exact trajectory
        vel = rng.uniform(-M, M, size=steps * substeps)
        states = np.concatenate([[0.0], np.cumsum(vel * h)]) + rng.uniform(-1, 1)
        times = np.arange(len(states)) * h
        traj = Trajectory(
            h=h, times=times, states=states.reshape(-1, 1),
            controls=np.zeros((len(states) - 1, 1)),
            disturbances=np.zeros((len(states) - 1, 1)),
        )
        lo = float(states.min()) - 0.5
        hi = float(states.max()) + 0.5
        def rand_region():
            boxes = []
            for _ in range(int(rng.integers(1, 3))):
                a = float(rng.uniform(lo, hi))
                boxes.append(Box((a,), (a + float(rng.uniform(0.2, 2.0)),)))
            return tuple(boxes)
        labels = LabellingSpec({"p": rand_region(), "q": rand_region()})
        eps = intersample_bound(M, 0.0, tau)
        strong = strengthen(labels, eps)
        sampled = [label(strong, states[i * substeps]) for i in range(steps + 1)]
        formula = parse_formula(str(rng.choice(fragment)))
        if check_discrete(sampled, formula) is Verdict.SAT:
            assert check_continuous(traj, labels, formula) is not Verdict.UNSAT


def test_formula_atoms():
    f = parse_formula("(p U q) & !r")
    assert formula_atoms(f) == {"p", "q", "r"}
