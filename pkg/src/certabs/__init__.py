"""Certified finite abstractions and sampled-data controller synthesis.

Builds finite transition systems that over-approximate the one-step
reachable sets of a perturbed sampled-data nonlinear system, selects the
discretisation parameters that make the abstraction provably sandwiched
between two perturbation levels, synthesises dwell-time controllers for
an until/invariance temporal-logic fragment, refines them to
sample-and-hold controllers, and validates closed loops with discrete-
and continuous-time trace monitors.
"""

from .abstraction import (
    AbstractionParams,
    FiniteAbstraction,
    build_abstraction,
    check_sandwich,
    choose_parameters,
    dwell_mismatch_bound,
    min_delta2_for_tau,
)
from .expr import parse_expression
from .geometry import Box, Grid, ball_cover, erode_box
from .labelling import LabellingSpec, cell_label, label, strengthen
from .logic import Verdict, check_continuous, check_discrete, parse_formula, to_nnf
from .synthesis import (
    ExplicitGame,
    Objective,
    Strategy,
    add_dwell,
    closed_loop_run,
    cpre,
    refine_to_sampled,
    synthesize,
)
from .system import (
    SystemSpec,
    Trajectory,
    estimate_constants,
    gronwall_radius,
    intersample_bound,
    margin_lhs,
    simulate_step,
)

__version__ = "0.1.0"

__all__ = [
    "AbstractionParams",
    "Box",
    "ExplicitGame",
    "FiniteAbstraction",
    "Grid",
    "LabellingSpec",
    "Objective",
    "Strategy",
    "SystemSpec",
    "Trajectory",
    "Verdict",
    "add_dwell",
    "ball_cover",
    "build_abstraction",
    "cell_label",
    "check_continuous",
    "check_discrete",
    "check_sandwich",
    "choose_parameters",
    "closed_loop_run",
    "cpre",
    "dwell_mismatch_bound",
    "erode_box",
    "estimate_constants",
    "gronwall_radius",
    "intersample_bound",
    "label",
    "margin_lhs",
    "min_delta2_for_tau",
    "parse_expression",
    "parse_formula",
    "refine_to_sampled",
    "simulate_step",
    "strengthen",
    "synthesize",
    "to_nnf",
]
