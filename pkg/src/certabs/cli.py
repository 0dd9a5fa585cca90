"""Command-line front end.

Subcommands mirror the decision pipeline: ``params`` selects
discretisation parameters, ``sweep`` tabulates the feasibility bound over
a range of sampling periods, ``abstract`` builds the finite abstraction,
``synth`` synthesises a controller, ``decide`` runs the full realizability
check with exit code 0 (realizable), 1 (not realizable), or 2 (error),
``simulate`` runs a synthesised controller against the perturbed dynamics,
and ``check`` monitors externally supplied traces or trajectories.

All commands are deterministic given the config file and seeds; every
command writes a manifest embedding the resolved parameters and the
config hash.  CSV output uses a fixed column order with 17-significant-
digit floats so regression runs are byte-comparable.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .abstraction import (
    AbstractionParams,
    FiniteAbstraction,
    GridTooLargeError,
    InfeasibleParamsError,
    build_abstraction,
    choose_parameters,
    dwell_mismatch_bound,
    min_delta2_for_tau,
)
from .config import ConfigError, RunConfig, load_config
from .expr import ExprError
from .labelling import LabellingSpec, cell_mask, strengthen
from .logic import FormulaSyntaxError, formula_atoms, parse_formula
from .synthesis import (
    ControllerRefusal,
    Objective,
    closed_loop_run,
    load_strategy,
    refine_to_sampled,
    save_strategy,
    synthesize,
)
from .system import Trajectory, spot_check_constants

SWEEP_NOTE = (
    "delta2_min follows the analytic schedule eta=tau^2, mu=tau and is a "
    "sufficient-condition bound; it is conservative and does not certify "
    "that smaller disturbance bounds are infeasible at the same period."
)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _print_warnings(cfg: RunConfig) -> None:
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for w in spot_check_constants(cfg.system, samples=1000, seed=0):
        print(f"warning (non-rigorous spot check): {w}", file=sys.stderr)


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig, payload: dict) -> None:
    doc = {
        "command": command,
        "config": str(cfg.path),
        "config_sha256": cfg.config_hash,
        "seed": cfg.seed,
    }
    doc.update(payload)
    text = json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n"
    (out / "manifest.json").write_text(text, encoding="utf-8")


def _params_dict(p: AbstractionParams) -> dict:
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
    }


def _resolve_params(cfg: RunConfig, args) -> tuple[AbstractionParams, int]:
    """Resolved parameters plus the dwell factor N when a period is fixed."""
    L, M = cfg.system.lipschitz, cfg.system.bound
    tau = args.tau if getattr(args, "tau", None) is not None else cfg.tau
    eta = args.eta if getattr(args, "eta", None) is not None else cfg.eta
    mu = args.mu if getattr(args, "mu", None) is not None else cfg.mu
    if tau is not None:
        p = AbstractionParams.derive(
            L, M, tau, cfg.delta1, cfg.delta2, cfg.epsilon,
            eta=eta, mu=mu, preserving=cfg.preserving,
        )
        return p, 1
    if cfg.period is not None:
        free = choose_parameters(
            L, M, cfg.delta1, cfg.delta2, cfg.epsilon, preserving=cfg.preserving
        )
        dwell = max(1, math.ceil(cfg.period / free.tau))
        p = AbstractionParams.derive(
            L, M, cfg.period / dwell, cfg.delta1, cfg.delta2, cfg.epsilon,
            eta=eta, mu=mu, preserving=cfg.preserving,
        )
        return p, dwell
    p = choose_parameters(
        L, M, cfg.delta1, cfg.delta2, cfg.epsilon, preserving=cfg.preserving
    )
    if eta is not None or mu is not None:
        p = AbstractionParams.derive(
            L, M, p.tau, cfg.delta1, cfg.delta2, cfg.epsilon,
            eta=eta, mu=mu, preserving=cfg.preserving,
        )
    return p, 1


def cmd_params(cfg: RunConfig, args) -> int:
    p, dwell = _resolve_params(cfg, args)
    L, M = cfg.system.lipschitz, cfg.system.bound
    tau_star = cfg.period if cfg.period is not None else p.tau
    r_star = dwell_mismatch_bound(tau_star, cfg.delta1, cfg.delta2)
    d2_min, eps_min = min_delta2_for_tau(L, M, p.tau, cfg.delta1)
    print(f"tau      = {_fmt(p.tau)}" + (f"   (period {_fmt(tau_star)} / N={dwell})" if dwell > 1 else ""))
    print(f"eta      = {_fmt(p.eta)}")
    print(f"mu       = {_fmt(p.mu)}")
    print(f"radius   = {_fmt(p.radius)}")
    print(f"eps1     = {_fmt(p.eps1)}")
    print(f"eps2     = {_fmt(p.eps2)}")
    print(f"margin   = {_fmt(p.margin)}  (< delta2 = {_fmt(p.delta2)}: {p.margin_feasible})")
    print(f"eps1+eps2= {_fmt(p.eps1 + p.eps2)}  (<= epsilon = {_fmt(p.epsilon)}: {p.eps_feasible})")
    print(f"delta2_min at tau = {_fmt(d2_min)}  (eps_min = {_fmt(eps_min)})")
    print(f"period mismatch bound r* at tau* = {_fmt(tau_star)}: {_fmt(r_star)}")
    out = _out_dir(cfg, args)
    _write_manifest(
        out,
        "params",
        cfg,
        {
            "params": _params_dict(p),
            "dwell": dwell,
            "tau_star": tau_star,
            "r_star": r_star,
            "delta2_min": d2_min,
            "eps_min": eps_min,
        },
    )
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    L, M = cfg.system.lipschitz, cfg.system.bound
    count = args.count
    if count < 1:
        print("error: count must be >= 1", file=sys.stderr)
        return 2
    taus = np.geomspace(args.tau_min, args.tau_max, count)
    rows = []
    for tau in taus:
        d2, eps_min = min_delta2_for_tau(L, M, float(tau), cfg.delta1)
        rows.append((float(tau), float(tau) ** 2, float(tau), d2, eps_min))
    out = _out_dir(cfg, args)
    sweep_path = out / "sweep.csv"
    with sweep_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "eta", "mu", "delta2_min", "eps_min"])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    monotone = all(rows[i][3] < rows[i + 1][3] for i in range(len(rows) - 1))
    print(f"wrote {sweep_path} ({count} rows); delta2_min strictly increasing: {monotone}")
    print(f"note: {SWEEP_NOTE}")
    _write_manifest(
        out,
        "sweep",
        cfg,
        {
            "tau_min": args.tau_min,
            "tau_max": args.tau_max,
            "count": count,
            "delta2_min_strictly_increasing": monotone,
            "note": SWEEP_NOTE,
            "csv": str(sweep_path),
        },
    )
    return 0


def _build(cfg: RunConfig, args, p: AbstractionParams, enforce_margin: bool) -> FiniteAbstraction:
    return build_abstraction(
        cfg.system, p, max_cells=cfg.max_cells, enforce_margin=enforce_margin
    )


def cmd_abstract(cfg: RunConfig, args) -> int:
    p, _ = _resolve_params(cfg, args)
    abstraction = _build(cfg, args, p, enforce_margin=not args.sound_only)
    meta = abstraction.metadata()
    print(
        f"abstraction: {meta['state_count']} cells x {meta['action_count']} actions, "
        f"{meta['blocked_pairs']} blocked pairs, radius {_fmt(meta['radius'])}"
    )
    out = _out_dir(cfg, args)
    _write_manifest(out, "abstract", cfg, {"abstraction": meta})
    return 0


def _synthesis_inputs(cfg: RunConfig, abstraction: FiniteAbstraction):
    """Objective and strengthened cell labels for the pipeline."""
    if cfg.formula is None:
        raise ConfigError(["[objective] formula is required for synthesis"])
    objective = Objective.from_formula(cfg.formula)
    if objective is None:
        raise ConfigError(
            [
                "[objective] formula is outside the synthesizable fragment "
                "(invariance 'G p', reachability 'F p', or 'p U q')"
            ]
        )
    shrink = (cfg.system.bound + cfg.delta1) * abstraction.tau / 2.0
    strengthened = strengthen(cfg.labelling, shrink)
    masks = {
        name: cell_mask(strengthened, abstraction.grid, name)
        for name in objective.atoms()
    }
    return objective, masks


def cmd_synth(cfg: RunConfig, args) -> int:
    p, dwell = _resolve_params(cfg, args)
    abstraction = _build(cfg, args, p, enforce_margin=not args.sound_only)
    objective, masks = _synthesis_inputs(cfg, abstraction)
    strategy = synthesize(abstraction, objective, masks)
    if dwell > 1:
        from .synthesis import add_dwell

        strategy = add_dwell(strategy, dwell)
    out = _out_dir(cfg, args)
    strategy_path = out / "strategy.json"
    save_strategy(strategy_path, strategy, abstraction)
    frac = len(strategy.winning) / abstraction.state_count
    print(
        f"winning set: {len(strategy.winning)} of {abstraction.state_count} cells "
        f"({100 * frac:.1f}%); strategy written to {strategy_path}"
    )
    _write_manifest(
        out,
        "synth",
        cfg,
        {
            "abstraction": abstraction.metadata(),
            "objective": objective.__dict__,
            "winning_cells": len(strategy.winning),
            "dwell": dwell,
            "strategy": str(strategy_path),
        },
    )
    return 0


def cmd_decide(cfg: RunConfig, args) -> int:
    p, dwell = _resolve_params(cfg, args)
    if not (p.margin_feasible and p.eps_feasible):
        print(
            "error: parameters do not certify the abstraction "
            f"(margin {_fmt(p.margin)} vs delta2 {_fmt(p.delta2)}, "
            f"eps1+eps2 {_fmt(p.eps1 + p.eps2)} vs epsilon {_fmt(p.epsilon)})",
            file=sys.stderr,
        )
        return 2
    abstraction = _build(cfg, args, p, enforce_margin=True)
    objective, masks = _synthesis_inputs(cfg, abstraction)
    strategy = synthesize(abstraction, objective, masks)
    out = _out_dir(cfg, args)
    meta = abstraction.metadata()
    if strategy.is_realizable:
        if dwell > 1:
            from .synthesis import add_dwell

            strategy = add_dwell(strategy, dwell)
        strategy_path = out / "strategy.json"
        save_strategy(strategy_path, strategy, abstraction)
        print(
            f"REALIZABLE: the specification is realizable for the delta1-perturbed "
            f"system (delta1 = {_fmt(cfg.delta1)}); strategy written to {strategy_path}"
        )
        verdict = "realizable"
        exit_code = 0
        extra = {"strategy": str(strategy_path), "winning_cells": len(strategy.winning)}
    else:
        losing = abstraction.state_count - len(strategy.winning)
        print(
            "NOT REALIZABLE: under the epsilon-strengthened labelling the "
            f"specification is not realizable for the delta2-perturbed system "
            f"(delta2 = {_fmt(cfg.delta2)}, epsilon = {_fmt(cfg.epsilon)}) "
            "at this certified abstraction"
        )
        print(f"losing initial region: all {losing} cells of the gridded domain")
        verdict = "not realizable"
        exit_code = 1
        extra = {"winning_cells": 0, "losing_cells": losing}
    payload = {
        "abstraction": meta,
        "objective": objective.__dict__,
        "verdict": verdict,
        "exit_code": exit_code,
        "dwell": dwell,
    }
    payload.update(extra)
    _write_manifest(out, "decide", cfg, payload)
    return exit_code


def _write_trajectory_csv(path: Path, traj: Trajectory, cfg: RunConfig) -> None:
    n, m = cfg.system.n, cfg.system.m
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["t"]
            + list(cfg.system.state_names)
            + [f"u_{name}" for name in cfg.system.control_names]
        )
        k = len(traj.times)
        for i in range(k):
            row = [_fmt(traj.times[i])] + [_fmt(v) for v in traj.states[i]]
            if i < len(traj.controls):
                row += [_fmt(v) for v in traj.controls[i]]
            else:
                row += [""] * m
            w.writerow(row)


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    strategy_path = Path(args.strategy) if args.strategy else out / "strategy.json"
    controller = load_strategy(strategy_path)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    delta = controller.delta1
    formula = cfg.formula
    seed0 = args.seed if args.seed is not None else cfg.seed
    winning = sorted(controller.strategy.winning)
    verdicts_path = out / "verdicts.csv"
    columns = [
        "run",
        "seed",
        "x0",
        "steps_completed",
        "discrete",
        "continuous",
        "max_deviation",
        "deviation_bound",
        "refused",
        "exited",
        "truncated_after_goal",
    ]
    rows = []
    for i in range(args.runs):
        seed = seed0 + i
        rng = np.random.default_rng(seed)
        if not winning:
            print("error: the strategy has an empty winning set", file=sys.stderr)
            return 2
        cell = int(winning[rng.integers(len(winning))])
        x0 = controller.grid.cell_center(controller.grid.unflat(cell))
        refused = False
        try:
            result = closed_loop_run(
                cfg.system,
                controller,
                x0,
                delta=float(delta),
                steps=cfg.steps,
                seed=seed,
                labels=cfg.labelling,
                formula=formula,
                substeps=cfg.substeps,
            )
        except ControllerRefusal:
            refused = True
            result = None
        if result is not None:
            _write_trajectory_csv(runs_dir / f"run_{i:04d}.csv", result.trajectory, cfg)
        rows.append(
            [
                str(i),
                str(seed),
                "(" + " ".join(_fmt(v) for v in np.atleast_1d(x0)) + ")",
                str(result.steps_completed) if result else "0",
                result.discrete.value if result and result.discrete else "",
                result.continuous.value if result and result.continuous else "",
                _fmt(result.max_deviation) if result else "",
                _fmt(result.deviation_bound) if result else "",
                str(refused),
                str(result.exited) if result else "",
                str(result.truncated_after_goal) if result else "",
            ]
        )
    with verdicts_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)
    print(f"wrote {verdicts_path} ({len(rows)} runs)")
    _write_manifest(
        out,
        "simulate",
        cfg,
        {
            "strategy": str(strategy_path),
            "runs": args.runs,
            "base_seed": seed0,
            "verdicts": str(verdicts_path),
        },
    )
    return 0


def _load_trace_file(path: Path, labelling: LabellingSpec) -> list[frozenset]:
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data:
        raise ConfigError([f"{path}: trace file must be a non-empty JSON array of arrays"])
    alphabet = set(labelling.propositions)
    trace = []
    for i, step in enumerate(data):
        if not isinstance(step, list):
            raise ConfigError([f"{path}: trace step {i} is not an array"])
        unknown = set(step) - alphabet
        if unknown:
            raise ConfigError(
                [f"{path}: trace step {i} uses unknown proposition {sorted(unknown)[0]!r}"]
            )
        trace.append(frozenset(step))
    return trace


def _load_trajectory_csv(path: Path, cfg: RunConfig) -> Trajectory:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "t":
            raise ConfigError([f"{path}: expected a CSV with a 't' column first"])
        name_cols = []
        for name in cfg.system.state_names:
            if name not in header:
                raise ConfigError([f"{path}: missing state column {name!r}"])
            name_cols.append(header.index(name))
        times = []
        states = []
        for row in reader:
            if not row:
                continue
            times.append(float(row[0]))
            states.append([float(row[c]) for c in name_cols])
    if len(times) < 2:
        raise ConfigError([f"{path}: need at least two samples"])
    times_arr = np.asarray(times)
    return Trajectory(
        h=float(times_arr[1] - times_arr[0]),
        times=times_arr,
        states=np.asarray(states),
        controls=np.zeros((0, cfg.system.m)),
        disturbances=np.zeros((0, cfg.system.n)),
    )


def cmd_check(cfg: RunConfig, args) -> int:
    from .logic import check_continuous, check_discrete

    text = args.formula or cfg.formula_text
    if text is None:
        print("error: no formula (give --formula or an [objective] section)", file=sys.stderr)
        return 2
    formula = parse_formula(text)
    unknown = formula_atoms(formula) - set(cfg.labelling.propositions)
    if unknown:
        print(f"error: formula uses undeclared proposition {sorted(unknown)[0]!r}", file=sys.stderr)
        return 2
    if args.trace:
        trace = _load_trace_file(Path(args.trace), cfg.labelling)
        verdict = check_discrete(trace, formula)
        kind = "discrete"
    elif args.trajectory:
        traj = _load_trajectory_csv(Path(args.trajectory), cfg)
        verdict = check_continuous(traj, cfg.labelling, formula)
        kind = "continuous"
    else:
        print("error: give --trace or --trajectory", file=sys.stderr)
        return 2
    print(f"{kind} verdict: {verdict.value}")
    print(
        "finite-trace convention: until needs an in-trace witness (strong); "
        "release is evaluated over the available positions (weak)"
    )
    out = _out_dir(cfg, args)
    _write_manifest(
        out,
        "check",
        cfg,
        {"formula": text, "verdict": verdict.value, "semantics": kind},
    )
    return 0


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", required=True, help="path to the TOML run config")
    sp.add_argument("--tau", type=float, default=None, help="override the sampling period")
    sp.add_argument("--eta", type=float, default=None, help="override the state grid width")
    sp.add_argument("--mu", type=float, default=None, help="override the control grid width")
    sp.add_argument("--seed", type=int, default=None, help="override the base seed")
    sp.add_argument("--jobs", type=int, default=1, help="worker pool size (reserved; inner loops are vectorised)")
    sp.add_argument("--out", default=None, help="output directory (default from config)")


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="certabs",
        description="certified finite abstractions and sampled-data controller synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (
        ("params", cmd_params),
        ("abstract", cmd_abstract),
        ("synth", cmd_synth),
        ("decide", cmd_decide),
    ):
        sp = sub.add_parser(name)
        _add_common(sp)
        if name in ("abstract", "synth"):
            sp.add_argument(
                "--sound-only",
                action="store_true",
                help="permit margin-infeasible parameters (soundness direction only)",
            )
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("sweep")
    _add_common(sp)
    sp.add_argument("--tau-min", type=float, default=1e-3)
    sp.add_argument("--tau-max", type=float, default=0.2)
    sp.add_argument("--count", type=int, default=50)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("simulate")
    _add_common(sp)
    sp.add_argument("--strategy", default=None, help="strategy file (default <out>/strategy.json)")
    sp.add_argument("--runs", type=int, default=10)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("check")
    _add_common(sp)
    sp.add_argument("--trace", default=None, help="JSON trace file (array of proposition arrays)")
    sp.add_argument("--trajectory", default=None, help="CSV trajectory file (t plus state columns)")
    sp.add_argument("--formula", default=None, help="formula to check (default: config objective)")
    sp.set_defaults(fn=cmd_check)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _print_warnings(cfg)
        if args.seed is not None:
            cfg.seed = args.seed
        return args.fn(cfg, args)
    except (
        ConfigError,
        InfeasibleParamsError,
        GridTooLargeError,
        FormulaSyntaxError,
        ExprError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
