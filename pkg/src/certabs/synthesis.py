"""Fixed-point controller synthesis, dwell wrapping, and closed-loop runs.

Abstraction nondeterminism is resolved adversarially: an action certifies a
state only when every abstract successor is good.  Invariance objectives
are greatest fixed points of ``W -> Safe & cpre(W)``; reachability and
until objectives are least fixed points of ``W -> Target | (Constraint &
cpre(W))`` with the rank-decreasing action rule.  Ties break to the least
action index so artifacts are reproducible.

For until-style objectives the extracted controller switches to an
"achieved" phase on first entering the target; from then on it holds the
closed loop inside the domain-invariant set (cells from which staying in
the state box is enforceable forever) when possible.  A refusal after the
objective has been achieved truncates the run instead of failing it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .abstraction import FiniteAbstraction
from .geometry import Grid, OutOfDomainError
from .labelling import LabellingSpec, label
from .logic import (
    And,
    Atom,
    FalseF,
    Formula,
    Release,
    TrueF,
    Until,
    Verdict,
    check_continuous,
    check_discrete,
)
from .system import SystemSpec, Trajectory, simulate_step

__all__ = [
    "Objective",
    "ExplicitGame",
    "Strategy",
    "ControllerRefusal",
    "SampledController",
    "RunResult",
    "cpre",
    "synthesize",
    "add_dwell",
    "refine_to_sampled",
    "closed_loop_run",
    "save_strategy",
    "load_strategy",
]


@dataclass(frozen=True)
class Objective:
    """Synthesizable fragment: invariance, reachability, until/reach-avoid."""

    kind: str  # "invariance" | "reachability" | "until"
    goal: str
    constraint: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("invariance", "reachability", "until"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "until" and self.constraint is None:
            raise ValueError("until objectives need a constraint atom")

    @classmethod
    def from_formula(cls, f: Formula) -> Optional["Objective"]:
        """Map a formula to the fragment, or ``None`` if outside it."""
        if isinstance(f, Release) and isinstance(f.left, FalseF) and isinstance(f.right, Atom):
            return cls("invariance", f.right.name)
        if isinstance(f, Until) and isinstance(f.right, Atom):
            if isinstance(f.left, TrueF):
                return cls("reachability", f.right.name)
            if isinstance(f.left, Atom):
                return cls("until", f.right.name, f.left.name)
        return None

    def formula(self) -> Formula:
        if self.kind == "invariance":
            return Release(FalseF(), Atom(self.goal))
        if self.kind == "reachability":
            return Until(TrueF(), Atom(self.goal))
        return Until(Atom(self.constraint), Atom(self.goal))

    def atoms(self) -> tuple[str, ...]:
        if self.constraint is None:
            return (self.goal,)
        return (self.constraint, self.goal)


@dataclass
class ExplicitGame:
    """Small transition system with explicit successor sets, for testing.

    A pair is blocked when it has no successors or is listed in
    ``blocked``; the synthesis routines treat both identically.
    """

    n_states: int
    n_actions: int
    post: Mapping[tuple[int, int], tuple[int, ...]]
    blocked: frozenset = frozenset()

    @property
    def state_count(self) -> int:
        return self.n_states

    @property
    def action_count(self) -> int:
        return self.n_actions

    def successors(self, q: int, a: int) -> np.ndarray:
        return np.asarray(self.post.get((q, a), ()), dtype=np.int64)

    def is_blocked(self, q: int, a: int) -> bool:
        return (q, a) in self.blocked or len(self.post.get((q, a), ())) == 0


def _generic_least_certifying(ts, W: np.ndarray) -> np.ndarray:
    out = np.full(ts.state_count, -1, dtype=np.int64)
    for q in range(ts.state_count):
        for a in range(ts.action_count):
            if ts.is_blocked(q, a):
                continue
            succ = ts.successors(q, a)
            if np.all(W[succ]):
                out[q] = a
                break
    return out


def _generic_least_unblocked(ts) -> np.ndarray:
    out = np.full(ts.state_count, -1, dtype=np.int64)
    for q in range(ts.state_count):
        for a in range(ts.action_count):
            if not ts.is_blocked(q, a):
                out[q] = a
                break
    return out


def _least_certifying(ts, W: np.ndarray) -> np.ndarray:
    if hasattr(ts, "least_certifying"):
        return ts.least_certifying(W)
    return _generic_least_certifying(ts, W)


def _least_unblocked(ts) -> np.ndarray:
    if hasattr(ts, "least_unblocked"):
        return ts.least_unblocked()
    return _generic_least_unblocked(ts)


def _as_mask(cells, n: int) -> np.ndarray:
    if isinstance(cells, np.ndarray) and cells.dtype == bool:
        if cells.shape != (n,):
            raise ValueError("label mask has the wrong length")
        return cells
    mask = np.zeros(n, dtype=bool)
    idx = np.fromiter((int(c) for c in cells), dtype=np.int64)
    if idx.size:
        mask[idx] = True
    return mask


def cpre(ts, W: Iterable[int]) -> frozenset:
    """States with an unblocked action whose every successor lies in ``W``."""
    mask = _as_mask(W, ts.state_count)
    return frozenset(int(q) for q in np.flatnonzero(_least_certifying(ts, mask) >= 0))


@dataclass
class Strategy:
    """Finite-memory winning strategy over flat abstract states.

    ``pursue`` maps winning states to their certified action; for
    until-style objectives target states are served by ``achieved``
    instead, which keeps the loop inside the domain-invariant set after
    the objective fires.  ``dwell`` is the number of consecutive periods
    each latched action is held.
    """

    objective: Objective
    n_states: int
    winning: frozenset
    pursue: dict[int, int]
    target: Optional[frozenset] = None
    achieved: Optional[dict[int, int]] = None
    dwell: int = 1

    @property
    def is_realizable(self) -> bool:
        return len(self.winning) > 0


def _synthesize_invariance(ts, safe: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    W = safe.copy()
    for _ in range(ts.state_count + 1):
        lc = _least_certifying(ts, W)
        W_new = safe & (lc >= 0)
        assert not np.any(W_new & ~W), "invariance iterates must shrink"
        if np.array_equal(W_new, W):
            return W, lc
        W = W_new
    raise RuntimeError("invariance iteration failed to stabilise")


def _synthesize_until(
    ts, target: np.ndarray, constraint: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    W = target.copy()
    actions = np.full(ts.state_count, -1, dtype=np.int64)
    for _ in range(ts.state_count + 1):
        lc = _least_certifying(ts, W)
        W_new = target | (constraint & (lc >= 0))
        newly = W_new & ~W
        assert not np.any(W & ~W_new), "until iterates must grow"
        if not np.any(newly):
            return W, actions
        actions[newly] = lc[newly]
        W = W_new
    raise RuntimeError("until iteration failed to stabilise")


def synthesize(ts, objective: Objective, cell_labels: Mapping[str, object]) -> Strategy:
    """Solve the fixed-point game for ``objective`` over ``ts``.

    ``cell_labels`` maps atom names to boolean masks or id collections
    over the flat states.  An empty winning set means the objective is
    unrealizable at this abstraction; callers decide how to report that.
    """
    n = ts.state_count
    goal = _as_mask(cell_labels[objective.goal], n)
    if objective.kind == "invariance":
        W, lc = _synthesize_invariance(ts, goal)
        winning = frozenset(int(q) for q in np.flatnonzero(W))
        pursue = {int(q): int(lc[q]) for q in np.flatnonzero(W)}
        return Strategy(objective, n, winning, pursue)

    constraint = (
        np.ones(n, dtype=bool)
        if objective.kind == "reachability"
        else _as_mask(cell_labels[objective.constraint], n)
    )
    W, actions = _synthesize_until(ts, goal, constraint)
    winning = frozenset(int(q) for q in np.flatnonzero(W))
    pursue = {int(q): int(actions[q]) for q in np.flatnonzero(W & ~goal)}

    # continuation after the goal fires: prefer staying where the state box
    # can be enforced forever, otherwise any unblocked action
    domain = np.ones(n, dtype=bool)
    for _ in range(n + 1):
        lc = _least_certifying(ts, domain)
        new = lc >= 0
        if np.array_equal(new, domain):
            break
        domain = new
    dom_actions = _least_certifying(ts, domain)
    fallback = _least_unblocked(ts)
    cont = np.where(domain & (dom_actions >= 0), dom_actions, fallback)
    achieved = {int(q): int(cont[q]) for q in range(n) if cont[q] >= 0}
    return Strategy(
        objective,
        n,
        winning,
        pursue,
        target=frozenset(int(q) for q in np.flatnonzero(goal)),
        achieved=achieved,
    )


def add_dwell(strategy: Strategy, N: int) -> Strategy:
    """Hold every latched action for ``N`` consecutive sampling periods.

    An ``N``-dwell strategy run at period ``tau`` emits the same control
    sequence as the underlying strategy run at period ``N*tau``.
    """
    if N < 1:
        raise ValueError("dwell must be >= 1")
    return replace(strategy, dwell=N)


class ControllerRefusal(RuntimeError):
    def __init__(self, x, message: str, after_goal: bool = False):
        super().__init__(message)
        self.state = np.array(x, dtype=float)
        self.after_goal = after_goal


@dataclass
class SampledController:
    """Executable sample-and-hold controller refined from a strategy.

    At each sampling instant the continuous state is quantised to its grid
    cell; the strategy table gives a control-grid centre which is held for
    one period.  With dwell ``N`` the table is consulted only every ``N``
    periods and the latched action repeated in between.  Undefined outside
    the winning set.
    """

    strategy: Strategy
    grid: Grid
    actions: np.ndarray
    tau: float
    delta1: float = 0.0
    _phase: str = field(default="pursue", repr=False)
    _counter: int = field(default=0, repr=False)
    _latched: int = field(default=-1, repr=False)

    def reset(self) -> None:
        self._phase = "pursue"
        self._counter = 0
        self._latched = -1

    def snapshot(self) -> dict:
        return {"phase": self._phase, "counter": self._counter, "latched": self._latched}

    def restore(self, state: dict) -> None:
        self._phase = str(state["phase"])
        self._counter = int(state["counter"])
        self._latched = int(state["latched"])

    def _lookup(self, x) -> int:
        s = self.strategy
        try:
            cell = self.grid.flat(self.grid.cell_index(x))
        except OutOfDomainError:
            raise ControllerRefusal(x, "state outside the gridded domain") from None
        if s.objective.kind == "invariance":
            a = s.pursue.get(cell)
            if a is None:
                raise ControllerRefusal(x, f"cell {cell} is outside the winning set")
            return a
        if self._phase == "pursue" and s.target is not None and cell in s.target:
            self._phase = "achieved"
        if self._phase == "pursue":
            a = s.pursue.get(cell)
            if a is None:
                raise ControllerRefusal(x, f"cell {cell} is outside the winning set")
            return a
        a = (s.achieved or {}).get(cell)
        if a is None:
            raise ControllerRefusal(
                x, f"no continuation action at cell {cell}", after_goal=True
            )
        return a

    def step(self, x) -> np.ndarray:
        """Control to hold for the next period; advances the memory."""
        if self._counter == 0:
            self._latched = self._lookup(x)
        self._counter = (self._counter + 1) % self.strategy.dwell
        return np.array(self.actions[self._latched], dtype=float)

    @property
    def action_trace(self) -> int:
        return self._latched


def refine_to_sampled(strategy: Strategy, abstraction: FiniteAbstraction) -> SampledController:
    """Close the loop: quantise with the state grid, emit control centres."""
    if strategy.n_states != abstraction.state_count:
        raise ValueError("strategy was synthesised for a different state grid")
    return SampledController(
        strategy=strategy,
        grid=abstraction.grid,
        actions=np.array(abstraction.actions, dtype=float),
        tau=abstraction.tau,
        delta1=abstraction.delta1,
    )


@dataclass
class RunResult:
    trajectory: Trajectory
    trace: list
    controls: np.ndarray  # per completed period
    discrete: Optional[Verdict]
    continuous: Optional[Verdict]
    max_deviation: float
    deviation_bound: float
    steps_completed: int
    truncated_after_goal: bool = False
    exited: bool = False


def closed_loop_run(
    sys: SystemSpec,
    controller: SampledController,
    x0,
    delta: float,
    steps: int,
    seed: int,
    labels: LabellingSpec,
    formula: Optional[Formula] = None,
    substeps: int = 16,
    period: Optional[float] = None,
) -> RunResult:
    """Drive the perturbed closed loop for ``steps`` sampling periods.

    The disturbance realisation for the whole run is drawn up front from
    the seed (uniform over the infinity-norm ``delta``-ball per sub-step),
    so runs with equal seeds and equal ``period*substeps`` grids share
    their realisation exactly.  Reports the dense trajectory, the sampled
    trace under the plain labelling, monitor verdicts when ``formula`` is
    given, and the largest observed distance between the trajectory and
    its nearest sampling instant (to compare against ``(M+delta)*tau/2``).

    A refusal before the objective fires signals an abstraction-soundness
    bug and propagates; a refusal after an until-style goal has been
    reached merely truncates the run.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    period = controller.tau if period is None else period
    rng = np.random.default_rng(seed)
    w_all = rng.uniform(-delta, delta, size=(steps * substeps, sys.n))
    controller.reset()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()

    times = [0.0]
    states = [x.copy()]
    controls_rows: list[np.ndarray] = []
    dist_rows: list[np.ndarray] = []
    trace = [label(labels, x)]
    period_controls: list[np.ndarray] = []
    max_dev = 0.0
    truncated = False
    exited = False
    steps_done = 0

    for i in range(steps):
        try:
            u = controller.step(x)
        except ControllerRefusal as exc:
            if exc.after_goal:
                truncated = True
                break
            raise
        seg = simulate_step(
            sys,
            x,
            u,
            period,
            delta,
            substeps,
            disturbance=w_all[i * substeps : (i + 1) * substeps],
            t0=i * period,
        )
        period_controls.append(u)
        k = seg.n_substeps
        times.extend(seg.times[1:].tolist())
        states.extend(list(seg.states[1:]))
        controls_rows.extend(list(seg.controls))
        dist_rows.extend(list(seg.disturbances))
        # deviation from the nearest sampling instant
        start, end = seg.states[0], seg.states[-1]
        for j in range(1, k + 1):
            ref = start if j * 2 <= k else end
            max_dev = max(max_dev, float(np.max(np.abs(seg.states[j] - ref))))
        steps_done += 1
        if seg.exited:
            exited = True
            break
        x = seg.final_state.copy()
        trace.append(label(labels, x))

    traj = Trajectory(
        h=period / substeps,
        times=np.asarray(times),
        states=np.asarray(states),
        controls=np.asarray(controls_rows).reshape(len(controls_rows), sys.m),
        disturbances=np.asarray(dist_rows).reshape(len(dist_rows), sys.n),
        exited=exited,
    )
    discrete = check_discrete(trace, formula) if formula is not None else None
    continuous = (
        check_continuous(traj, labels, formula) if formula is not None else None
    )
    return RunResult(
        trajectory=traj,
        trace=trace,
        controls=np.asarray(period_controls).reshape(len(period_controls), sys.m),
        discrete=discrete,
        continuous=continuous,
        max_deviation=max_dev,
        deviation_bound=(sys.bound + delta) * period / 2.0,
        steps_completed=steps_done,
        truncated_after_goal=truncated,
        exited=exited,
    )


_STRATEGY_FORMAT = "certabs-strategy"
_STRATEGY_VERSION = 1


def _table_to_json(table: Optional[dict[int, int]]):
    if table is None:
        return None
    cells = sorted(table)
    return {"cells": cells, "actions": [table[c] for c in cells]}


def _table_from_json(obj) -> Optional[dict[int, int]]:
    if obj is None:
        return None
    return dict(zip((int(c) for c in obj["cells"]), (int(a) for a in obj["actions"])))


def save_strategy(path, strategy: Strategy, abstraction: FiniteAbstraction) -> None:
    """Persist strategy and grid metadata; byte-stable for identical inputs."""
    grid = abstraction.grid
    doc = {
        "format": _STRATEGY_FORMAT,
        "version": _STRATEGY_VERSION,
        "objective": {
            "kind": strategy.objective.kind,
            "goal": strategy.objective.goal,
            "constraint": strategy.objective.constraint,
        },
        "dwell": strategy.dwell,
        "tau": abstraction.tau,
        "delta1": abstraction.delta1,
        "grid": {
            "eta": grid.eta,
            "anchor": list(grid.anchor),
            "lo": list(grid.lo),
            "hi": list(grid.hi),
        },
        "actions": [list(map(float, row)) for row in abstraction.actions],
        "n_states": strategy.n_states,
        "winning": sorted(strategy.winning),
        "pursue": _table_to_json(strategy.pursue),
        "target": sorted(strategy.target) if strategy.target is not None else None,
        "achieved": _table_to_json(strategy.achieved),
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_strategy(path) -> SampledController:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != _STRATEGY_FORMAT:
        raise ValueError(f"{path}: not a strategy file")
    if int(doc.get("version", -1)) != _STRATEGY_VERSION:
        raise ValueError(f"{path}: unsupported strategy version {doc.get('version')}")
    obj = doc["objective"]
    objective = Objective(obj["kind"], obj["goal"], obj.get("constraint"))
    strategy = Strategy(
        objective=objective,
        n_states=int(doc["n_states"]),
        winning=frozenset(int(c) for c in doc["winning"]),
        pursue=_table_from_json(doc["pursue"]) or {},
        target=(
            frozenset(int(c) for c in doc["target"]) if doc["target"] is not None else None
        ),
        achieved=_table_from_json(doc["achieved"]),
        dwell=int(doc["dwell"]),
    )
    g = doc["grid"]
    grid = Grid(
        eta=float(g["eta"]),
        anchor=tuple(float(v) for v in g["anchor"]),
        lo=tuple(int(v) for v in g["lo"]),
        hi=tuple(int(v) for v in g["hi"]),
    )
    return SampledController(
        strategy=strategy,
        grid=grid,
        actions=np.array(doc["actions"], dtype=float),
        tau=float(doc["tau"]),
        delta1=float(doc["delta1"]),
    )
