"""System descriptions, growth-bound formulas, and perturbed simulation.

The one-step transition radius and the feasibility margin both involve the
terms ``(e^{L*tau}-1)/L`` and ``(e^{L*tau}-L*tau-1)/L``, which are
ill-conditioned as ``L -> 0``.  They are computed here through the stable
ratios ``exprel(z) = (e^z-1)/z`` and ``exprel2(z) = (e^z-z-1)/z^2`` so the
vanishing-L limits come out exactly (``radius -> eta + delta1*tau``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .expr import Expression, EvalError, compile_expression, evaluate, free_variables
from .geometry import Box

__all__ = [
    "SystemSpec",
    "Trajectory",
    "IntegrationError",
    "gronwall_radius",
    "margin_lhs",
    "intersample_bound",
    "simulate_step",
    "estimate_constants",
    "ConstantsEstimate",
    "spot_check_constants",
]


def _exprel(z: float) -> float:
    """(e^z - 1)/z, stable at z = 0."""
    if abs(z) < 1e-5:
        return 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    return math.expm1(z) / z


def _exprel2(z: float) -> float:
    """(e^z - z - 1)/z^2, stable at z = 0."""
    if abs(z) < 1e-5:
        return 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    return (math.expm1(z) - z) / (z * z)


def gronwall_radius(
    eta: float, mu: float, tau: float, delta1: float, L: float, M: float
) -> float:
    """One-step transition radius around the Euler endpoint.

    Value of ``eta/2 + (eta/2)e^{L tau} + (delta1/L + mu/2)(e^{L tau} - 1)
    + M (e^{L tau} - L tau - 1)/L`` with the ``L -> 0`` limit
    ``eta + delta1*tau`` taken analytically.
    """
    if min(eta, mu, tau, delta1, L, M) < 0:
        raise ValueError("all arguments must be >= 0")
    z = L * tau
    e_z = math.exp(z)
    return (
        0.5 * eta * (1.0 + e_z)
        + delta1 * tau * _exprel(z)
        + 0.5 * mu * z * _exprel(z)
        + M * L * tau * tau * _exprel2(z)
    )


def margin_lhs(
    eta: float, mu: float, tau: float, delta1: float, L: float, M: float
) -> float:
    """Left-hand side of the feasibility inequality; must stay below delta2.

    Value of ``[eta + eta e^{L tau} + (delta1/L + mu)(e^{L tau} - 1)
    + 2M(e^{L tau} - L tau - 1)/L] * [L + 1/tau]``, with the same stable
    small-L treatment as :func:`gronwall_radius`.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if min(eta, mu, delta1, L, M) < 0:
        raise ValueError("all arguments must be >= 0")
    z = L * tau
    e_z = math.exp(z)
    bracket = (
        eta * (1.0 + e_z)
        + delta1 * tau * _exprel(z)
        + mu * z * _exprel(z)
        + 2.0 * M * L * tau * tau * _exprel2(z)
    )
    return bracket * (L + 1.0 / tau)


def intersample_bound(M: float, delta: float, tau: float) -> float:
    """Maximum drift between a trajectory and its nearest sampling instant."""
    if min(M, delta, tau) < 0:
        raise ValueError("all arguments must be >= 0")
    return (M + delta) * tau / 2.0


@dataclass
class SystemSpec:
    """A control system: named dynamics over compact state and control boxes.

    ``lipschitz`` bounds the sensitivity of the vector field in both the
    state and the control argument; ``bound`` bounds its magnitude on
    ``X x U``.  Both are user-supplied in the infinity norm and are not
    verified here (see :func:`spot_check_constants`).
    """

    state_names: tuple[str, ...]
    control_names: tuple[str, ...]
    f: tuple[Expression, ...]
    X: Box
    U: Box
    lipschitz: float
    bound: float
    _field: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        names = self.state_names + self.control_names
        if len(set(names)) != len(names):
            raise ValueError("state and control names must be distinct")
        if len(self.f) != len(self.state_names):
            raise ValueError("need one dynamics expression per state")
        if self.X.dim != len(self.state_names) or self.U.dim != len(self.control_names):
            raise ValueError("box dimension does not match variable count")
        if self.lipschitz < 0 or self.bound < 0:
            raise ValueError("lipschitz and bound must be >= 0")
        for i, e in enumerate(self.f):
            extra = free_variables(e) - set(names)
            if extra:
                raise ValueError(
                    f"dynamics component {i} uses undeclared variable {sorted(extra)[0]!r}"
                )

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.control_names)

    def field(self) -> Callable:
        """Compiled vector field ``(x, u) -> dx`` broadcasting over rows.

        ``x`` has shape ``(..., n)`` and ``u`` shape ``(..., m)``.  No
        domain checking; callers screen for non-finite output.
        """
        if self._field is None:
            names = self.state_names + self.control_names
            comps = [compile_expression(e, names) for e in self.f]

            def _f(x, u, _comps=comps, _n=self.n, _m=self.m):
                x = np.asarray(x, dtype=float)
                u = np.asarray(u, dtype=float)
                cols = [x[..., j] for j in range(_n)] + [u[..., j] for j in range(_m)]
                out = [np.broadcast_to(c(*cols), x[..., 0].shape) for c in _comps]
                return np.stack(out, axis=-1)

            self._field = _f
        return self._field


def eval_vector_field(sys: SystemSpec, x, u) -> np.ndarray:
    """Evaluate the dynamics at one point, with per-component error context."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (sys.n,) or u.shape != (sys.m,):
        raise ValueError(f"expected state dim {sys.n} and control dim {sys.m}")
    env = dict(zip(sys.state_names, x.tolist()))
    env.update(zip(sys.control_names, u.tolist()))
    out = np.empty(sys.n)
    for i, e in enumerate(sys.f):
        try:
            out[i] = evaluate(e, env)
        except EvalError as exc:
            raise EvalError(f"component {i}: {exc}", e) from None
    return out


@dataclass
class Trajectory:
    """Dense output of one or more integration steps.

    ``times`` are uniform with gap ``h``; ``controls`` and ``disturbances``
    apply to the segment starting at the same row index.  ``exited`` marks
    truncation at the first exit from the state box (the exit point is the
    last recorded state).
    """

    h: float
    times: np.ndarray  # (k+1,)
    states: np.ndarray  # (k+1, n)
    controls: np.ndarray  # (k, m)
    disturbances: np.ndarray  # (k, n)
    exited: bool = False

    @property
    def n_substeps(self) -> int:
        return len(self.times) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


class IntegrationError(RuntimeError):
    def __init__(self, message: str, substep: int):
        super().__init__(f"{message} (sub-step {substep})")
        self.substep = substep


def simulate_step(
    sys: SystemSpec,
    x,
    u,
    tau: float,
    delta: float,
    substeps: int,
    seed: int = 0,
    disturbance: Optional[np.ndarray] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate ``x' = f(x, u) + w`` over one sampling period.

    Classical fourth-order one-step integration at step ``tau/substeps``.
    The disturbance ``w`` is piecewise constant per sub-step, drawn
    uniformly from the infinity-norm ``delta``-ball under the seeded
    generator (or taken from ``disturbance`` of shape ``(substeps, n)``
    when supplied).  Deterministic given the seed.  The trajectory is
    truncated with ``exited=True`` at the first sub-step that leaves the
    state box.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if disturbance is None:
        rng = np.random.default_rng(seed)
        w = rng.uniform(-delta, delta, size=(substeps, sys.n))
    else:
        w = np.asarray(disturbance, dtype=float)
        if w.shape != (substeps, sys.n):
            raise ValueError(f"disturbance must have shape ({substeps}, {sys.n})")
    f = sys.field()
    h = tau / substeps
    times = [t0]
    states = [x.copy()]
    controls = []
    dists = []
    exited = False
    with np.errstate(all="ignore"):
        for j in range(substeps):
            wj = w[j]
            k1 = f(x, u) + wj
            k2 = f(x + 0.5 * h * k1, u) + wj
            k3 = f(x + 0.5 * h * k2, u) + wj
            k4 = f(x + h * k3, u) + wj
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationError("non-finite state", j)
            times.append(t0 + (j + 1) * h)
            states.append(x.copy())
            controls.append(np.array(u, dtype=float))
            dists.append(wj.copy())
            if not sys.X.contains(x):
                exited = True
                break
    return Trajectory(
        h=h,
        times=np.array(times),
        states=np.array(states),
        controls=np.array(controls).reshape(len(controls), sys.m),
        disturbances=np.array(dists).reshape(len(dists), sys.n),
        exited=exited,
    )


class ConstantsEstimate(NamedTuple):
    lipschitz: float
    bound: float


def estimate_constants(sys: SystemSpec, samples: int, seed: int = 0) -> ConstantsEstimate:
    """Sampling estimates of the Lipschitz constant and velocity bound.

    NON-RIGOROUS: maxima over ``samples`` random evaluations and difference
    quotients, which only lower-bound the true constants.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = np.random.default_rng(seed)
    lo_x, hi_x = np.asarray(sys.X.lower), np.asarray(sys.X.upper)
    lo_u, hi_u = np.asarray(sys.U.lower), np.asarray(sys.U.upper)
    xs = rng.uniform(lo_x, hi_x, size=(samples, sys.n))
    ys = rng.uniform(lo_x, hi_x, size=(samples, sys.n))
    us = rng.uniform(lo_u, hi_u, size=(samples, sys.m))
    vs = rng.uniform(lo_u, hi_u, size=(samples, sys.m))
    f = sys.field()
    with np.errstate(all="ignore"):
        fxu = f(xs, us)
        fyu = f(ys, us)
        fxv = f(xs, vs)
    m_est = float(np.max(np.abs(fxu)))
    dx = np.max(np.abs(xs - ys), axis=1)
    du = np.max(np.abs(us - vs), axis=1)
    qx = np.max(np.abs(fxu - fyu), axis=1)[dx > 0] / dx[dx > 0]
    qu = np.max(np.abs(fxu - fxv), axis=1)[du > 0] / du[du > 0]
    l_est = 0.0
    if qx.size:
        l_est = max(l_est, float(np.max(qx)))
    if qu.size:
        l_est = max(l_est, float(np.max(qu)))
    return ConstantsEstimate(lipschitz=l_est, bound=m_est)


def spot_check_constants(
    sys: SystemSpec, samples: int = 1000, seed: int = 0, slack: float = 1e-9
) -> list[str]:
    """Sample the Lipschitz/bound inequalities; return violation messages.

    Constants are user-supplied, so violations warn rather than fail.
    """
    rng = np.random.default_rng(seed)
    lo_x, hi_x = np.asarray(sys.X.lower), np.asarray(sys.X.upper)
    lo_u, hi_u = np.asarray(sys.U.lower), np.asarray(sys.U.upper)
    xs = rng.uniform(lo_x, hi_x, size=(samples, sys.n))
    ys = rng.uniform(lo_x, hi_x, size=(samples, sys.n))
    us = rng.uniform(lo_u, hi_u, size=(samples, sys.m))
    vs = rng.uniform(lo_u, hi_u, size=(samples, sys.m))
    f = sys.field()
    with np.errstate(all="ignore"):
        fxu = f(xs, us)
        fyu = f(ys, us)
        fxv = f(xs, vs)
    L, M = sys.lipschitz, sys.bound
    msgs = []
    worst = float(np.max(np.abs(fxu)))
    if worst > M + slack:
        msgs.append(f"|f| reaches {worst:.6g} > bound M = {M:.6g}")
    for tag, diff, dist in (
        ("state", np.abs(fxu - fyu), np.max(np.abs(xs - ys), axis=1)),
        ("control", np.abs(fxu - fxv), np.max(np.abs(us - vs), axis=1)),
    ):
        lhs = np.max(diff, axis=1)
        bad = lhs > L * dist + slack
        if np.any(bad):
            quot = lhs[bad] / np.maximum(dist[bad], 1e-300)
            msgs.append(
                f"{tag} Lipschitz inequality violated: quotient reaches "
                f"{float(np.max(quot)):.6g} > L = {L:.6g}"
            )
    return msgs
