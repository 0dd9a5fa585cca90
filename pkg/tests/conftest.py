import math

import numpy as np
import pytest

from certabs.expr import parse_expression
from certabs.geometry import Box
from certabs.system import SystemSpec

CAR_ALPHA = "atan(0.5*tan(phi)/1)"
CAR_L = 1.2674
CAR_M = 1.5574


@pytest.fixture(scope="session")
def car() -> SystemSpec:
    return SystemSpec(
        state_names=("x", "y", "theta"),
        control_names=("v", "phi"),
        f=(
            parse_expression(f"v*cos({CAR_ALPHA}+theta)/cos({CAR_ALPHA})"),
            parse_expression(f"v*sin({CAR_ALPHA}+theta)/cos({CAR_ALPHA})"),
            parse_expression("v*tan(phi)"),
        ),
        X=Box((0.0, 0.0, -math.pi), (10.0, 10.0, math.pi)),
        U=Box((-1.0, -1.0), (1.0, 1.0)),
        lipschitz=CAR_L,
        bound=CAR_M,
    )


def make_affine(a: float, c: float = 0.0, x_box=(0.0, 1.0), u_box=(-0.5, 0.5)) -> SystemSpec:
    """Scalar system x' = a*x + u + c with honest constants for its boxes."""
    expr = f"{a!r}*x + u" if c == 0.0 else f"{a!r}*x + u + {c!r}"
    corners = [
        abs(a * x + u + c) for x in x_box for u in u_box
    ]
    return SystemSpec(
        state_names=("x",),
        control_names=("u",),
        f=(parse_expression(expr),),
        X=Box((float(x_box[0]),), (float(x_box[1]),)),
        U=Box((float(u_box[0]),), (float(u_box[1]),)),
        lipschitz=max(abs(a), 1.0),
        bound=max(corners),
    )


@pytest.fixture
def line() -> SystemSpec:
    return make_affine(0.0)


def dyadic(rng: np.random.Generator, lo: float, hi: float, denom: int = 64) -> float:
    """Random dyadic rational in [lo, hi]; sums of these are float-exact."""
    span = int((hi - lo) * denom)
    return lo + rng.integers(0, span + 1) / denom
