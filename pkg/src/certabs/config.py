"""Run configuration: a single TOML file with named sections.

Sections and keys (see README for the full grammar)::

    [system]       states, controls, dynamics, state_box, control_box,
                   lipschitz, bound
    [labelling.propositions]   name = [box, ...] with box = [[lo, hi], ...]
    [labelling.complements]    atom = "complement-atom"
    [objective]    formula
    [parameters]   delta1, delta2, epsilon, and optional tau, period,
                   eta, mu, preserving, substeps, steps, max_cells
    [run]          seed, out

Expressions and formulas are quoted strings.  Validation collects every
problem before failing so a broken config is reported in one pass.
"""

from __future__ import annotations

import hashlib
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if _sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .expr import ExprError, parse_expression
from .geometry import Box
from .labelling import LabellingSpec
from .logic import Formula, FormulaSyntaxError, parse_formula
from .system import SystemSpec

__all__ = ["RunConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


@dataclass
class RunConfig:
    system: SystemSpec
    labelling: LabellingSpec
    formula_text: Optional[str]
    formula: Optional[Formula]
    delta1: float
    delta2: float
    epsilon: float
    tau: Optional[float] = None
    period: Optional[float] = None  # fixed sampling period T, split as tau = T/N
    eta: Optional[float] = None
    mu: Optional[float] = None
    preserving: bool = False
    substeps: int = 16
    steps: int = 100
    max_cells: int = 5_000_000
    seed: int = 0
    out_dir: str = "out"
    config_hash: str = ""
    path: Optional[Path] = None
    warnings: list[str] = field(default_factory=list)


def _require(table: dict, key: str, kind, errors: list[str], section: str):
    if key not in table:
        errors.append(f"[{section}] missing key {key!r}")
        return None
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        errors.append(f"[{section}] {key!r} has the wrong type (expected {kind.__name__})")
        return None
    return value


def _parse_box(value, errors: list[str], where: str) -> Optional[Box]:
    try:
        return Box.from_intervals(value)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def load_config(path) -> RunConfig:
    """Parse and validate a config file, collecting a full error list."""
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        doc = _toml.loads(raw.decode("utf-8"))
    except (_toml.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError([f"not valid TOML: {exc}"]) from None

    errors: list[str] = []
    warnings: list[str] = []

    sys_tab = doc.get("system")
    if not isinstance(sys_tab, dict):
        raise ConfigError(["missing [system] section"])

    states = _require(sys_tab, "states", list, errors, "system") or []
    controls = _require(sys_tab, "controls", list, errors, "system") or []
    dynamics_raw = _require(sys_tab, "dynamics", list, errors, "system") or []
    state_box_raw = _require(sys_tab, "state_box", list, errors, "system")
    control_box_raw = _require(sys_tab, "control_box", list, errors, "system")
    lipschitz = _require(sys_tab, "lipschitz", float, errors, "system")
    bound = _require(sys_tab, "bound", float, errors, "system")

    dynamics = []
    for i, text in enumerate(dynamics_raw):
        if not isinstance(text, str):
            errors.append(f"[system] dynamics[{i}] must be a quoted expression string")
            continue
        try:
            dynamics.append(parse_expression(text))
        except ExprError as exc:
            errors.append(f"[system] dynamics[{i}]: {exc}")

    X = _parse_box(state_box_raw, errors, "[system] state_box") if state_box_raw else None
    U = _parse_box(control_box_raw, errors, "[system] control_box") if control_box_raw else None

    system = None
    if not errors and X is not None and U is not None:
        try:
            system = SystemSpec(
                state_names=tuple(states),
                control_names=tuple(controls),
                f=tuple(dynamics),
                X=X,
                U=U,
                lipschitz=float(lipschitz),
                bound=float(bound),
            )
        except ValueError as exc:
            errors.append(f"[system] {exc}")

    lab_tab = doc.get("labelling", {})
    props_tab = lab_tab.get("propositions", {}) if isinstance(lab_tab, dict) else {}
    comps_tab = lab_tab.get("complements", {}) if isinstance(lab_tab, dict) else {}
    propositions = {}
    for name, boxes in props_tab.items():
        if not isinstance(boxes, list):
            errors.append(f"[labelling] proposition {name!r} must be a list of boxes")
            continue
        region = []
        for j, b in enumerate(boxes):
            box = _parse_box(b, errors, f"[labelling] {name}[{j}]")
            if box is not None:
                region.append(box)
        propositions[name] = tuple(region)
    labelling = None
    try:
        labelling = LabellingSpec(propositions, dict(comps_tab))
    except ValueError as exc:
        errors.append(f"[labelling] {exc}")
    if labelling is not None and system is not None:
        for name, region in labelling.propositions.items():
            for b in region:
                if b.dim != system.n:
                    errors.append(
                        f"[labelling] proposition {name!r} has a {b.dim}-dimensional box "
                        f"but the state space is {system.n}-dimensional"
                    )
        if not errors:
            labelling, clip_warnings = labelling.clip_to(system.X)
            warnings.extend(clip_warnings)

    obj_tab = doc.get("objective", {})
    formula_text = obj_tab.get("formula") if isinstance(obj_tab, dict) else None
    formula = None
    if formula_text is not None:
        if not isinstance(formula_text, str):
            errors.append("[objective] formula must be a quoted string")
        else:
            try:
                formula = parse_formula(formula_text)
            except FormulaSyntaxError as exc:
                errors.append(f"[objective] formula: {exc}")
    if formula is not None and labelling is not None:
        from .logic import formula_atoms

        unknown = formula_atoms(formula) - set(labelling.propositions)
        for name in sorted(unknown):
            errors.append(f"[objective] formula uses undeclared proposition {name!r}")

    par_tab = doc.get("parameters")
    if not isinstance(par_tab, dict):
        raise ConfigError(errors + ["missing [parameters] section"])
    delta1 = _require(par_tab, "delta1", float, errors, "parameters")
    delta2 = _require(par_tab, "delta2", float, errors, "parameters")
    epsilon = _require(par_tab, "epsilon", float, errors, "parameters")
    if delta1 is not None and delta2 is not None and not (delta2 > delta1 >= 0):
        errors.append(f"[parameters] need delta2 > delta1 >= 0, got {delta1}, {delta2}")
    if epsilon is not None and epsilon <= 0:
        errors.append("[parameters] epsilon must be positive")

    def optional_positive(key: str) -> Optional[float]:
        if key not in par_tab:
            return None
        v = par_tab[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or float(v) <= 0:
            errors.append(f"[parameters] {key!r} must be a positive number")
            return None
        return float(v)

    tau = optional_positive("tau")
    period = optional_positive("period")
    eta = optional_positive("eta")
    mu = optional_positive("mu")
    if tau is not None and period is not None:
        errors.append("[parameters] give at most one of 'tau' and 'period'")
    preserving = bool(par_tab.get("preserving", False))
    substeps = int(par_tab.get("substeps", 16))
    steps = int(par_tab.get("steps", 100))
    max_cells = int(par_tab.get("max_cells", 5_000_000))
    if substeps < 1:
        errors.append("[parameters] substeps must be >= 1")
    if steps < 0:
        errors.append("[parameters] steps must be >= 0")

    run_tab = doc.get("run", {})
    seed = int(run_tab.get("seed", 0)) if isinstance(run_tab, dict) else 0
    out_dir = str(run_tab.get("out", "out")) if isinstance(run_tab, dict) else "out"

    if errors:
        raise ConfigError(errors)

    return RunConfig(
        system=system,
        labelling=labelling,
        formula_text=formula_text,
        formula=formula,
        delta1=float(delta1),
        delta2=float(delta2),
        epsilon=float(epsilon),
        tau=tau,
        period=period,
        eta=eta,
        mu=mu,
        preserving=preserving,
        substeps=substeps,
        steps=steps,
        max_cells=max_cells,
        seed=seed,
        out_dir=out_dir,
        config_hash=digest,
        path=path,
        warnings=warnings,
    )
