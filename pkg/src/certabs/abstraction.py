"""Finite abstractions of sampled-data systems and parameter selection.

The abstract states are the centres of a uniform grid over the state box,
the actions are centres of a uniform grid over the control box, and a
transition ``(q, a, q')`` exists exactly when ``q'`` lies within the
one-step transition radius of the Euler endpoint ``q + tau*f(q, a)``.
Successor sets are therefore metric balls and are never materialised:
synthesis tests ball containment against summed-area tables instead of
walking adjacency lists.

Radius and margin bookkeeping follow the growth-bound formulas in
:mod:`certabs.system`; the strengthening margins split as
``eps_i = (M + delta_i) * tau / 2`` plus ``eta / 2`` each when the grid
cannot be assumed to preserve propositions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .geometry import Box, Grid
from .system import SystemSpec, _exprel, gronwall_radius, margin_lhs

__all__ = [
    "AbstractionParams",
    "FiniteAbstraction",
    "InfeasibleParamsError",
    "GridTooLargeError",
    "NonAffineError",
    "SandwichReport",
    "build_abstraction",
    "choose_parameters",
    "min_delta2_for_tau",
    "dwell_mismatch_bound",
    "check_sandwich",
]


class InfeasibleParamsError(ValueError):
    pass


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class AbstractionParams:
    """Resolved discretisation parameters with derived margins.

    ``margin_feasible`` records whether the feasibility inequality
    ``margin < delta2`` holds (required for the completeness direction);
    ``eps_feasible`` whether ``eps1 + eps2 <= epsilon``.
    """

    tau: float
    eta: float
    mu: float
    delta1: float
    delta2: float
    epsilon: float
    eps1: float
    eps2: float
    radius: float
    margin: float
    preserving: bool
    margin_feasible: bool
    eps_feasible: bool

    @classmethod
    def derive(
        cls,
        L: float,
        M: float,
        tau: float,
        delta1: float,
        delta2: float,
        epsilon: float,
        eta: Optional[float] = None,
        mu: Optional[float] = None,
        preserving: bool = False,
    ) -> "AbstractionParams":
        """Fill in the schedule defaults ``eta = tau^2``, ``mu = tau``."""
        if tau < 0:
            raise ValueError("tau must be >= 0")
        eta = tau * tau if eta is None else eta
        mu = tau if mu is None else mu
        radius = gronwall_radius(eta, mu, tau, delta1, L, M)
        margin = margin_lhs(eta, mu, tau, delta1, L, M) if tau > 0 else math.inf
        half_eta = 0.0 if preserving else eta / 2.0
        eps1 = (M + delta1) * tau / 2.0 + half_eta
        eps2 = (M + delta2) * tau / 2.0 + half_eta
        return cls(
            tau=tau,
            eta=eta,
            mu=mu,
            delta1=delta1,
            delta2=delta2,
            epsilon=epsilon,
            eps1=eps1,
            eps2=eps2,
            radius=radius,
            margin=margin,
            preserving=preserving,
            margin_feasible=margin < delta2,
            eps_feasible=eps1 + eps2 <= epsilon,
        )


def choose_parameters(
    L: float,
    M: float,
    delta1: float,
    delta2: float,
    epsilon: float,
    preserving: bool = False,
    tau_ceiling: float = 10.0,
    tau_floor: float = 1e-9,
) -> AbstractionParams:
    """Largest sampling period satisfying both parameter inequalities.

    Applies the schedule ``eta = tau^2``, ``mu = tau`` and bisects for the
    margin inequality together with the strengthening budget
    ``eps1 + eps2 <= epsilon``.  Feasibility is guaranteed for any
    ``delta2 > delta1 >= 0`` and ``epsilon > 0``; hitting the bisection
    floor is reported with diagnostics.
    """
    if not (delta2 > delta1 >= 0):
        raise InfeasibleParamsError(f"need delta2 > delta1 >= 0, got {delta1}, {delta2}")
    if epsilon <= 0:
        raise InfeasibleParamsError("epsilon must be positive")

    def attempt(tau: float) -> AbstractionParams:
        return AbstractionParams.derive(
            L, M, tau, delta1, delta2, epsilon, preserving=preserving
        )

    top = attempt(tau_ceiling)
    if top.margin_feasible and top.eps_feasible:
        return top
    bottom = attempt(tau_floor)
    if not (bottom.margin_feasible and bottom.eps_feasible):
        raise InfeasibleParamsError(
            "bisection floor reached: at tau = "
            f"{tau_floor:g} the margin is {bottom.margin:.6g} (needs < {delta2:g}) "
            f"and eps1+eps2 = {bottom.eps1 + bottom.eps2:.6g} (needs <= {epsilon:g})"
        )
    lo, hi = tau_floor, tau_ceiling
    for _ in range(80):
        mid = math.sqrt(lo * hi)  # log-scale bisection
        p = attempt(mid)
        if p.margin_feasible and p.eps_feasible:
            lo = mid
        else:
            hi = mid
    return attempt(lo)


def min_delta2_for_tau(
    L: float, M: float, tau: float, delta1: float
) -> tuple[float, float]:
    """Smallest certifiable outer perturbation at ``tau`` under the schedule.

    Returns ``(delta2_min, eps_min)`` where ``delta2_min`` is the margin
    value at ``eta = tau^2``, ``mu = tau`` and ``eps_min`` the matching
    strengthening budget ``(2M + delta1 + delta2_min) * tau / 2``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    d2 = margin_lhs(tau * tau, tau, tau, delta1, L, M)
    eps_min = (2.0 * M + delta1 + d2) * tau / 2.0
    return d2, eps_min


def dwell_mismatch_bound(tau_star: float, delta1: float, delta2: float) -> float:
    """Largest sampling-period mismatch absorbable by the perturbation gap.

    Solves ``r / (tau_star - r) + delta1 < delta2`` for ``r`` and scales the
    supremum ``(delta2 - delta1) * tau_star / (1 + delta2 - delta1)`` by
    0.99 to keep the inequality strict.
    """
    if tau_star <= 0:
        raise ValueError("tau_star must be positive")
    if not (delta2 > delta1 >= 0):
        raise ValueError("need delta2 > delta1 >= 0")
    d = delta2 - delta1
    return 0.99 * d * tau_star / (1.0 + d)


def _control_points(U: Box, mu: float) -> np.ndarray:
    """Centres of a ``mu``-grid over the control box, clamped into the box.

    ``mu <= 0`` degenerates to the single box centre.
    """
    if mu <= 0:
        return np.asarray(U.center, dtype=float).reshape(1, U.dim)
    axes = []
    for l, u in zip(U.lower, U.upper):
        count = max(1, math.ceil((u - l) / mu))
        centers = l + (np.arange(count) + 0.5) * mu
        axes.append(np.minimum(centers, u))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


_CACHE_BUDGET_BYTES = 256 * 1024 * 1024


class FiniteAbstraction:
    """Grid abstraction with implicit metric-ball successors.

    States are flat cell ids ``0 .. state_count-1`` in row-major order of
    the state grid; actions are row indices into ``actions``.  A pair is
    *blocked* when its successor ball is not fully covered by the grid, so
    using it could not guarantee staying inside the state box.
    """

    def __init__(
        self,
        sys: SystemSpec,
        grid: Grid,
        actions: np.ndarray,
        params: AbstractionParams,
    ):
        self.sys = sys
        self.grid = grid
        self.actions = np.asarray(actions, dtype=float)
        self.params = params
        self._centers: Optional[np.ndarray] = None
        self._action_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._cache_bytes = 0
        self._blocked_pairs: Optional[int] = None

    @property
    def tau(self) -> float:
        return self.params.tau

    @property
    def delta1(self) -> float:
        return self.params.delta1

    @property
    def radius(self) -> float:
        return self.params.radius

    @property
    def state_count(self) -> int:
        return self.grid.size

    @property
    def action_count(self) -> int:
        return len(self.actions)

    def centers(self) -> np.ndarray:
        if self._centers is None:
            self._centers = self.grid.all_centers()
        return self._centers

    def cell_center(self, q: int) -> np.ndarray:
        return self.centers()[q]

    def _action_data(self, a: int):
        """Per-action successor index bounds (0-based) and blocked mask."""
        cached = self._action_cache.get(a)
        if cached is not None:
            return cached
        grid = self.grid
        C = self.centers()
        u = np.broadcast_to(self.actions[a], (len(C), self.sys.m))
        with np.errstate(all="ignore"):
            endpoint = C + self.tau * self.sys.field()(C, u)
        finite = np.all(np.isfinite(endpoint), axis=1)
        endpoint = np.nan_to_num(endpoint, nan=0.0, posinf=0.0, neginf=0.0)
        anchor = np.asarray(grid.anchor)
        r = self.radius
        klo = np.ceil((endpoint - r - anchor) / grid.eta - 0.5).astype(np.int64)
        khi = np.floor((endpoint + r - anchor) / grid.eta - 0.5).astype(np.int64)
        lo = np.asarray(grid.lo)
        hi = np.asarray(grid.hi)
        blocked = ~finite | np.any(klo < lo, axis=1) | np.any(khi > hi, axis=1)
        klo = np.clip(klo - lo, 0, np.asarray(grid.shape) - 1).astype(np.int32)
        khi = np.clip(khi - lo, 0, np.asarray(grid.shape) - 1).astype(np.int32)
        data = (klo, khi, blocked)
        nbytes = klo.nbytes + khi.nbytes + blocked.nbytes
        if self._cache_bytes + nbytes <= _CACHE_BUDGET_BYTES:
            self._action_cache[a] = data
            self._cache_bytes += nbytes
        return data

    def is_blocked(self, q: int, a: int) -> bool:
        return bool(self._action_data(a)[2][q])

    def successors(self, q: int, a: int) -> np.ndarray:
        """Flat ids of in-grid successor cells of ``(q, a)``, sorted.

        For blocked pairs this is the in-grid part of the successor ball
        only; synthesis never uses blocked pairs.
        """
        klo, khi, _ = self._action_data(a)
        axes = [np.arange(l, h + 1) for l, h in zip(klo[q], khi[q])]
        mesh = np.meshgrid(*axes, indexing="ij")
        rel = np.stack([m.ravel() for m in mesh], axis=0)
        return np.ravel_multi_index(rel, self.grid.shape).astype(np.int64)

    def successor_centers(self, q: int, a: int) -> np.ndarray:
        return self.centers()[self.successors(q, a)]

    def _summed_table(self, mask: np.ndarray) -> np.ndarray:
        W = mask.reshape(self.grid.shape).astype(np.int64)
        for ax in range(self.grid.dim):
            W = W.cumsum(axis=ax)
        S = np.zeros(tuple(s + 1 for s in self.grid.shape), dtype=np.int64)
        S[tuple(slice(1, None) for _ in self.grid.shape)] = W
        return S

    def certified_mask(self, W: np.ndarray, a: int, S: Optional[np.ndarray] = None) -> np.ndarray:
        """States where action ``a`` is unblocked and its ball lies in ``W``."""
        if S is None:
            S = self._summed_table(W)
        klo, khi, blocked = self._action_data(a)
        n = self.grid.dim
        total = np.zeros(self.state_count, dtype=np.int64)
        for corner in itertools.product((0, 1), repeat=n):
            idx = tuple(
                khi[:, d] + 1 if corner[d] else klo[:, d] for d in range(n)
            )
            sign = -1 if (n - sum(corner)) % 2 else 1
            total += sign * S[idx]
        volume = np.prod(khi.astype(np.int64) - klo + 1, axis=1)
        return (~blocked) & (total == volume)

    def cpre_mask(self, W: np.ndarray) -> np.ndarray:
        """Controllable predecessor: some action forces the ball into ``W``."""
        S = self._summed_table(W)
        out = np.zeros(self.state_count, dtype=bool)
        for a in range(self.action_count):
            out |= self.certified_mask(W, a, S)
        return out

    def least_certifying(self, W: np.ndarray) -> np.ndarray:
        """Per state, the least action whose ball lies in ``W`` (-1 if none)."""
        S = self._summed_table(W)
        out = np.full(self.state_count, -1, dtype=np.int64)
        for a in range(self.action_count):
            cert = self.certified_mask(W, a, S)
            out = np.where((out < 0) & cert, a, out)
        return out

    def least_unblocked(self) -> np.ndarray:
        """Per state, the least unblocked action (-1 if every action blocked)."""
        out = np.full(self.state_count, -1, dtype=np.int64)
        for a in range(self.action_count):
            blocked = self._action_data(a)[2]
            out = np.where((out < 0) & ~blocked, a, out)
        return out

    def blocked_pair_count(self) -> int:
        if self._blocked_pairs is None:
            self._blocked_pairs = int(
                sum(int(self._action_data(a)[2].sum()) for a in range(self.action_count))
            )
        return self._blocked_pairs

    def quantize(self, x) -> int:
        """Flat id of the cell containing ``x`` (the abstraction relation)."""
        return self.grid.flat(self.grid.cell_index(x))

    def metadata(self) -> dict:
        p = self.params
        return {
            "tau": p.tau,
            "eta": p.eta,
            "mu": p.mu,
            "delta1": p.delta1,
            "delta2": p.delta2,
            "epsilon": p.epsilon,
            "eps1": p.eps1,
            "eps2": p.eps2,
            "radius": p.radius,
            "margin": p.margin,
            "margin_feasible": p.margin_feasible,
            "eps_feasible": p.eps_feasible,
            "preserving": p.preserving,
            "grid_shape": list(self.grid.shape),
            "state_count": self.state_count,
            "action_count": self.action_count,
            "blocked_pairs": self.blocked_pair_count(),
        }


def build_abstraction(
    sys: SystemSpec,
    params: AbstractionParams,
    max_cells: int = 5_000_000,
    enforce_margin: bool = True,
    anchor: Optional[Iterable[float]] = None,
) -> FiniteAbstraction:
    """Construct the finite transition system for ``sys`` at ``params``.

    With ``enforce_margin=True`` (the default) parameters violating the
    feasibility inequality are rejected, because the completeness half of
    the construction is then void.  ``enforce_margin=False`` builds a
    sound-only abstraction (over-approximation of the ``delta1``-perturbed
    dynamics) at any resolution, which is useful for coarse synthesis.
    """
    expected = gronwall_radius(
        params.eta, params.mu, params.tau, params.delta1, sys.lipschitz, sys.bound
    )
    if not math.isclose(params.radius, expected, rel_tol=1e-12, abs_tol=1e-15):
        raise InfeasibleParamsError(
            f"radius {params.radius!r} does not match the growth bound {expected!r}"
        )
    if enforce_margin and not (params.margin_feasible and params.tau > 0):
        raise InfeasibleParamsError(
            f"margin {params.margin:.6g} is not below delta2 = {params.delta2:g}; "
            "refine the parameters or build with enforce_margin=False"
        )
    grid = Grid.cover(sys.X, params.eta, anchor)
    if grid.size > max_cells:
        raise GridTooLargeError(
            f"state grid has {grid.size} cells, exceeding the limit {max_cells}"
        )
    actions = _control_points(sys.U, params.mu)
    return FiniteAbstraction(sys, grid, actions, params)


class NonAffineError(ValueError):
    pass


@dataclass
class SandwichReport:
    """Outcome of the exact-interval inclusion check on a scalar affine system."""

    passed: bool
    pairs_checked: int
    pairs_skipped: int
    lower_failures: list
    upper_failures: list


def _extract_affine(sys: SystemSpec) -> tuple[float, float, float]:
    """Coefficients (a, b, c) with f(x, u) = a*x + b*u + c, or reject."""
    if sys.n != 1 or sys.m != 1:
        raise NonAffineError("exact reachable intervals need a scalar system")
    f = sys.field()

    def ev(x: float, u: float) -> float:
        return float(f(np.array([x]), np.array([u]))[0])

    c = ev(0.0, 0.0)
    a = ev(1.0, 0.0) - c
    b = ev(0.0, 1.0) - c
    for x, u in ((0.3, 0.7), (-1.1, 0.4), (2.0, -1.5), (0.123, 0.456)):
        got = ev(x, u)
        want = a * x + b * u + c
        if abs(got - want) > 1e-9 * max(1.0, abs(got)):
            raise NonAffineError("dynamics are not affine in (x, u)")
    return a, b, c


def check_sandwich(
    sys: SystemSpec,
    abstraction: FiniteAbstraction,
    delta2: float,
    max_pairs: int = 500_000,
    tol: float = 1e-9,
) -> SandwichReport:
    """Verify both abstraction inclusions against exact scalar reachable sets.

    Lower direction: the cells covering the exact ``delta1``-reachable
    interval from each cell (for every control within half a control cell
    of the action) must be among the abstract successors.  Upper
    direction: every point of every successor cell must lie inside the
    exact ``delta2``-reachable interval, for all states related to the
    cell and all controls quantising to the action.  Pairs whose exact
    reach may leave the state box are skipped: the transition-system
    semantics truncate there and the closed-form intervals stop being
    exact.
    """
    a_coef, b_coef, c_coef = _extract_affine(sys)
    grid = abstraction.grid
    if abstraction.state_count * abstraction.action_count > max_pairs:
        raise ValueError("instance too large for the exhaustive sandwich check")
    tau = abstraction.tau
    delta1 = abstraction.delta1
    eta = grid.eta
    mu = abstraction.params.mu
    growth = math.exp(a_coef * tau)
    pull = tau * _exprel(a_coef * tau)
    x_min, x_max = sys.X.lower[0], sys.X.upper[0]
    u_min, u_max = sys.U.lower[0], sys.U.upper[0]

    def reach(x0: float, u: float, d: float) -> tuple[float, float]:
        lo = growth * x0 + (c_coef + b_coef * u - d) * pull
        hi = growth * x0 + (c_coef + b_coef * u + d) * pull
        return (lo, hi) if lo <= hi else (hi, lo)

    lower_failures: list = []
    upper_failures: list = []
    checked = skipped = 0
    for q in range(abstraction.state_count):
        center = float(abstraction.cell_center(q)[0])
        xl = max(center - eta / 2.0, x_min)
        xh = min(center + eta / 2.0, x_max)
        for ai in range(abstraction.action_count):
            if abstraction.is_blocked(q, ai):
                skipped += 1
                continue
            checked += 1
            u_c = float(abstraction.actions[ai][0])
            post = set(int(s) for s in abstraction.successors(q, ai))

            u_cases = {u_c}
            u_cases.add(max(u_c - mu / 2.0, u_min))
            u_cases.add(min(u_c + mu / 2.0, u_max))
            for u in sorted(u_cases):
                lo1 = reach(xl, u, delta1)[0]
                hi1 = reach(xh, u, delta1)[1]
                hull = (min(xl, lo1), max(xh, hi1))
                if hull[0] < x_min or hull[1] > x_max:
                    skipped += 1
                    continue
                ranges = grid.cubes_intersecting_range([lo1], [hi1])
                if ranges is None:
                    continue
                klo, khi = ranges
                needed = {
                    grid.flat((k,)) for k in range(int(klo[0]), int(khi[0]) + 1)
                }
                if not needed <= post:
                    lower_failures.append(
                        {
                            "state": q,
                            "action": ai,
                            "control": u,
                            "missing_cells": sorted(needed - post),
                        }
                    )

            ks = sorted(post)
            pl = float(abstraction.cell_center(ks[0])[0]) - eta / 2.0
            ph = float(abstraction.cell_center(ks[-1])[0]) + eta / 2.0
            pl = max(pl, x_min)
            ph = min(ph, x_max)
            ul = max(u_c - mu / 2.0, u_min)
            uh = min(u_c + mu / 2.0, u_max)
            for x0 in (xl, xh):
                for u in (ul, uh):
                    lo2, hi2 = reach(x0, u, delta2)
                    hull = (min(x0, lo2), max(x0, hi2))
                    if hull[0] < x_min or hull[1] > x_max:
                        skipped += 1
                        continue
                    scale = max(1.0, abs(lo2), abs(hi2))
                    if pl < lo2 - tol * scale or ph > hi2 + tol * scale:
                        upper_failures.append(
                            {
                                "state": q,
                                "action": ai,
                                "from_state": x0,
                                "control": u,
                                "successor_hull": (pl, ph),
                                "exact_interval": (lo2, hi2),
                            }
                        )
    return SandwichReport(
        passed=not lower_failures and not upper_failures,
        pairs_checked=checked,
        pairs_skipped=skipped,
        lower_failures=lower_failures,
        upper_failures=upper_failures,
    )
