import csv
import json
from pathlib import Path

import numpy as np
import pytest

from certabs.cli import main
from certabs.config import ConfigError, load_config

LINE_TEMPLATE = """
[system]
states = ["x"]
controls = ["u"]
dynamics = ["u"]
state_box = [[0.0, 1.0]]
control_box = [[-0.5, 0.5]]
lipschitz = 1.0
bound = 0.5

[labelling.propositions]
safe = [[[0.2, 0.8]]]
goal = [[[0.55, 0.7]]]

[objective]
formula = "{formula}"

[parameters]
delta1 = 0.02
delta2 = 0.1
epsilon = 0.05
substeps = 8
steps = 30

[run]
seed = 0
out = "{out}"
"""


def write_line_config(tmp_path, formula="G safe", **extra) -> Path:
    text = LINE_TEMPLATE.format(formula=formula, out=str(tmp_path / "out"))
    for key, value in extra.items():
        text = text.replace("[run]", f"{key} = {value}\n\n[run]", 1)
    path = tmp_path / "line.toml"
    path.write_text(text)
    return path


class TestConfig:
    def test_load_valid(self, tmp_path):
        cfg = load_config(write_line_config(tmp_path))
        assert cfg.system.n == 1
        assert cfg.labelling.alphabet == ("safe", "goal")
        assert cfg.formula is not None
        assert len(cfg.config_hash) == 64

    def test_collects_all_errors(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            """
[system]
states = ["x"]
controls = ["u"]
dynamics = ["u +"]
state_box = [[1.0, 0.0]]
control_box = [[0.0, 1.0]]
lipschitz = 1.0
bound = 1.0

[parameters]
delta1 = 0.2
delta2 = 0.1
epsilon = -1.0
"""
        )
        with pytest.raises(ConfigError) as err:
            load_config(path)
        messages = "\n".join(err.value.errors)
        assert "dynamics[0]" in messages
        assert "state_box" in messages
        assert "delta2 > delta1" in messages
        assert "epsilon" in messages
        assert len(err.value.errors) >= 4

    def test_undeclared_formula_atom(self, tmp_path):
        path = write_line_config(tmp_path, formula="G nowhere")
        with pytest.raises(ConfigError, match="nowhere"):
            load_config(path)

    def test_regions_clipped_with_warning(self, tmp_path):
        path = tmp_path / "clip.toml"
        path.write_text(
            LINE_TEMPLATE.format(formula="G safe", out=str(tmp_path / "out")).replace(
                "safe = [[[0.2, 0.8]]]", "safe = [[[-0.5, 0.8]]]"
            )
        )
        cfg = load_config(path)
        assert cfg.warnings
        assert cfg.labelling.propositions["safe"][0].lower == (0.0,)


class TestParamsCommand:
    def test_report_is_internally_consistent(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["params", "--config", str(path)]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        p = manifest["params"]
        assert p["margin"] < p["delta2"]
        assert p["eps1"] + p["eps2"] <= p["epsilon"]
        from certabs.abstraction import min_delta2_for_tau

        d2, eps_min = min_delta2_for_tau(1.0, 0.5, p["tau"], p["delta1"])
        assert manifest["delta2_min"] == d2
        assert manifest["eps_min"] == eps_min

    def test_delta_order_is_config_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            LINE_TEMPLATE.format(formula="G safe", out=str(tmp_path / "out")).replace(
                "delta2 = 0.1", "delta2 = 0.01"
            )
        )
        assert main(["params", "--config", str(path)]) == 2

    def test_period_reports_dwell(self, tmp_path):
        path = write_line_config(tmp_path, period=0.5)
        assert main(["params", "--config", str(path)]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["dwell"] >= 2
        assert manifest["params"]["tau"] * manifest["dwell"] == pytest.approx(0.5)
        assert manifest["tau_star"] == 0.5


class TestSweepCommand:
    def test_monotone_and_documented(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["sweep", "--config", str(path), "--count", "20"]) == 0
        rows = list(csv.DictReader((tmp_path / "out" / "sweep.csv").open()))
        assert len(rows) == 20
        vals = [float(r["delta2_min"]) for r in rows]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["delta2_min_strictly_increasing"] is True
        assert "conservative" in manifest["note"]

    def test_single_row_keeps_header(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["sweep", "--config", str(path), "--count", "1"]) == 0
        lines = (tmp_path / "out" / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "tau,eta,mu,delta2_min,eps_min"
        assert len(lines) == 2


class TestAbstractAndSynth:
    def test_abstract_reports_metadata(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["abstract", "--config", str(path)]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        meta = manifest["abstraction"]
        assert meta["state_count"] > 0
        assert meta["blocked_pairs"] >= 0
        assert meta["radius"] > 0

    def test_abstract_sound_only_permits_coarse_grid(self, tmp_path):
        path = write_line_config(tmp_path)
        args = ["abstract", "--config", str(path), "--tau", "0.05", "--eta", "0.1"]
        assert main(args) == 2
        assert main(args + ["--sound-only"]) == 0

    def test_synth_writes_strategy(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["synth", "--config", str(path)]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["winning_cells"] > 0
        assert (tmp_path / "out" / "strategy.json").exists()


class TestSweepWithInnerPerturbation:
    def test_delta2_min_floor_is_delta1(self, tmp_path):
        path = tmp_path / "perturbed.toml"
        path.write_text(
            LINE_TEMPLATE.format(formula="G safe", out=str(tmp_path / "out")).replace(
                "delta1 = 0.02", "delta1 = 0.3"
            ).replace("delta2 = 0.1", "delta2 = 0.5")
        )
        assert main(["sweep", "--config", str(path), "--count", "15"]) == 0
        rows = list(csv.DictReader((tmp_path / "out" / "sweep.csv").open()))
        assert all(float(r["delta2_min"]) > 0.3 for r in rows)


class TestDecideCommand:
    def test_realizable_writes_strategy(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["decide", "--config", str(path)]) == 0
        out = tmp_path / "out"
        assert (out / "strategy.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["verdict"] == "realizable"
        assert manifest["winning_cells"] > 0
        assert manifest["abstraction"]["margin_feasible"] is True

    def test_eroded_away_goal_is_not_realizable(self, tmp_path):
        # the goal region is thinner than the strengthening erosion
        path = tmp_path / "thin.toml"
        path.write_text(
            LINE_TEMPLATE.format(formula="F goal", out=str(tmp_path / "out")).replace(
                "goal = [[[0.55, 0.7]]]", "goal = [[[0.55, 0.555]]]"
            )
        )
        assert main(["decide", "--config", str(path)]) == 1
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["verdict"] == "not realizable"
        assert manifest["losing_cells"] > 0

    def test_malformed_formula_is_error(self, tmp_path):
        path = write_line_config(tmp_path, formula="G (safe")
        assert main(["decide", "--config", str(path)]) == 2

    def test_non_fragment_formula_is_error(self, tmp_path):
        path = write_line_config(tmp_path, formula="safe U (goal U safe)")
        assert main(["decide", "--config", str(path)]) == 2

    def test_strategy_file_byte_stable(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["decide", "--config", str(path)]) == 0
        first = (tmp_path / "out" / "strategy.json").read_bytes()
        assert main(["decide", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "strategy.json").read_bytes() == first


class TestSimulateCommand:
    @pytest.fixture
    def decided(self, tmp_path):
        path = write_line_config(tmp_path)
        assert main(["decide", "--config", str(path)]) == 0
        return path, tmp_path / "out"

    def test_batch_runs_are_sound(self, decided):
        path, out = decided
        assert main(["simulate", "--config", str(path), "--runs", "20"]) == 0
        rows = list(csv.DictReader((out / "verdicts.csv").open()))
        assert len(rows) == 20
        for row in rows:
            assert row["discrete"] == "sat"
            assert row["refused"] == "False"
            assert float(row["max_deviation"]) <= float(row["deviation_bound"])

    def test_zero_runs_empty_table(self, decided):
        path, out = decided
        assert main(["simulate", "--config", str(path), "--runs", "0"]) == 0
        lines = (out / "verdicts.csv").read_text().strip().splitlines()
        assert len(lines) == 1

    def test_deterministic_given_seed(self, decided):
        path, out = decided
        assert main(["simulate", "--config", str(path), "--runs", "5", "--seed", "3"]) == 0
        first = (out / "verdicts.csv").read_bytes()
        assert main(["simulate", "--config", str(path), "--runs", "5", "--seed", "3"]) == 0
        assert (out / "verdicts.csv").read_bytes() == first

    def test_trajectory_files_written(self, decided):
        path, out = decided
        assert main(["simulate", "--config", str(path), "--runs", "2"]) == 0
        rows = list(csv.reader((out / "runs" / "run_0000.csv").open()))
        assert rows[0] == ["t", "x", "u_u"]
        assert len(rows) > 30 * 8


class TestCheckCommand:
    def test_trace_until(self, tmp_path, capsys):
        path = write_line_config(tmp_path)
        trace = tmp_path / "trace.json"
        trace.write_text(json.dumps([["safe"], ["safe"], ["goal"]]))
        code = main(
            ["check", "--config", str(path), "--trace", str(trace), "--formula", "safe U goal"]
        )
        assert code == 0
        captured = capsys.readouterr().out
        assert "discrete verdict: sat" in captured
        assert "finite-trace convention" in captured

    def test_trace_always(self, tmp_path, capsys):
        path = write_line_config(tmp_path)
        trace = tmp_path / "trace.json"
        trace.write_text(json.dumps([["safe"], ["safe"], ["safe"]]))
        assert main(["check", "--config", str(path), "--trace", str(trace)]) == 0
        assert "sat" in capsys.readouterr().out

    def test_unknown_proposition_rejected(self, tmp_path):
        path = write_line_config(tmp_path)
        trace = tmp_path / "trace.json"
        trace.write_text(json.dumps([["mystery"]]))
        assert main(["check", "--config", str(path), "--trace", str(trace)]) == 2

    def test_trajectory_check(self, tmp_path, capsys):
        path = write_line_config(tmp_path)
        traj = tmp_path / "traj.csv"
        with traj.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"])
            for i in range(100):
                w.writerow([i * 0.01, 0.3 + i * 0.003])
        code = main(
            ["check", "--config", str(path), "--trajectory", str(traj), "--formula", "G safe"]
        )
        assert code == 0
        assert "continuous verdict: sat" in capsys.readouterr().out


class TestManifest:
    def test_embeds_config_hash(self, tmp_path):
        path = write_line_config(tmp_path)
        cfg = load_config(path)
        assert main(["params", "--config", str(path)]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["config_sha256"] == cfg.config_hash
        assert manifest["command"] == "params"


class TestRepoConfigs:
    def test_shipped_car_config_loads(self):
        cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "car.toml")
        assert cfg.system.n == 3
        assert cfg.system.lipschitz == 1.2674

    def test_shipped_line_config_decides(self, tmp_path):
        src = Path(__file__).resolve().parents[1] / "configs" / "line.toml"
        text = src.read_text().replace('out = "out/line"', f'out = "{tmp_path}/out"')
        path = tmp_path / "line.toml"
        path.write_text(text)
        assert main(["decide", "--config", str(path)]) == 0


class TestConsoleScript:
    def test_entry_point_runs(self, tmp_path):
        import subprocess
        import sys

        path = write_line_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "certabs.cli", "params", "--config", str(path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "margin" in proc.stdout
