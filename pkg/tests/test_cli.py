"""End-to-end tests of the command-line interface."""
import csv
import json
import os

import pytest
from click.testing import CliRunner

from modevo.cli import main

TINY_CONFIG = {
    "population_size": 4,
    "generations": 1,
    "tournament_size": 2,
    "seed": 11,
    "evaluation": {"settle_time": 0.2, "control_steps": 3,
                   "early_check_from": 0.4, "stall_window": 0.4},
}


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, doc=TINY_CONFIG, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def do_run(runner, tmp_path, out="out", extra=()):
    cfg = write_config(tmp_path)
    out_dir = str(tmp_path / out)
    result = runner.invoke(main, ["run", "--config", cfg, "--out", out_dir,
                                  "--quiet", *extra])
    assert result.exit_code == 0, result.output
    return out_dir


class TestRun:
    def test_artifacts(self, runner, tmp_path):
        out = do_run(runner, tmp_path)
        assert os.path.exists(os.path.join(out, "run.csv"))
        assert os.path.exists(os.path.join(out, "manifest.json"))
        best = os.path.join(out, "individuals", "best.json")
        with open(best) as fh:
            doc = json.load(fh)
        assert {"morph", "controller", "fitness"} <= set(doc)
        with open(os.path.join(out, "run.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2  # generations 0 and 1
        assert int(rows[-1]["evaluations"]) == 8

    def test_manifest_reproducibility_info(self, runner, tmp_path):
        out = do_run(runner, tmp_path)
        with open(os.path.join(out, "manifest.json")) as fh:
            m = json.load(fh)
        assert m["seed"] == 11
        assert m["config"]["population_size"] == 4
        assert len(m["config_sha256"]) == 64

    def test_seed_option_overrides_config(self, runner, tmp_path):
        out = do_run(runner, tmp_path, extra=["--seed", "99"])
        with open(os.path.join(out, "manifest.json")) as fh:
            assert json.load(fh)["seed"] == 99

    def test_unknown_key_exits_2(self, runner, tmp_path):
        cfg = write_config(tmp_path, {**TINY_CONFIG, "popsize": 4})
        result = runner.invoke(main, ["run", "--config", cfg,
                                      "--out", str(tmp_path / "x")])
        assert result.exit_code == 2

    def test_bad_value_exits_2(self, runner, tmp_path):
        cfg = write_config(tmp_path, {**TINY_CONFIG, "tournament_size": 40})
        result = runner.invoke(main, ["run", "--config", cfg,
                                      "--out", str(tmp_path / "x")])
        assert result.exit_code == 2

    def test_jobs_do_not_change_run_csv(self, runner, tmp_path):
        out1 = do_run(runner, tmp_path, "o1", ["--jobs", "1"])
        out2 = do_run(runner, tmp_path, "o2", ["--jobs", "3"])
        with open(os.path.join(out1, "run.csv"), "rb") as fh:
            b1 = fh.read()
        with open(os.path.join(out2, "run.csv"), "rb") as fh:
            b2 = fh.read()
        assert b1 == b2


class TestEvalAndReplay:
    def test_eval_prints_result(self, runner, tmp_path):
        out = do_run(runner, tmp_path)
        cfg = write_config(tmp_path)
        best = os.path.join(out, "individuals", "best.json")
        result = runner.invoke(main, ["eval", "--individual", best,
                                      "--config", cfg])
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output.strip().splitlines()[-1])
        assert "fitness" in doc and not doc["diverged"]

    def test_replay_writes_trace(self, runner, tmp_path):
        out = do_run(runner, tmp_path)
        cfg = write_config(tmp_path)
        best = os.path.join(out, "individuals", "best.json")
        trace = str(tmp_path / "trace.csv")
        result = runner.invoke(main, ["replay", "--individual", best,
                                      "--config", cfg, "--trace", trace])
        assert result.exit_code == 0, result.output
        with open(trace, newline="") as fh:
            header = next(csv.reader(fh))
        assert header[:4] == ["step", "time_s", "root_x_m", "root_z_m"]

    def test_eval_missing_individual_exits_2(self, runner, tmp_path):
        bad = tmp_path / "nope.json"
        bad.write_text("{}")
        result = runner.invoke(main, ["eval", "--individual", str(bad)])
        assert result.exit_code == 2


class TestSweep:
    def test_sweep_artifacts(self, runner, tmp_path):
        doc = {**TINY_CONFIG, "morph_values": [0.2, 0.4],
               "control_values": [0.3], "repeats": 1}
        cfg = write_config(tmp_path, doc)
        out = str(tmp_path / "sweep")
        result = runner.invoke(main, ["sweep", "--config", cfg, "--out", out,
                                      "--quiet"])
        assert result.exit_code == 0, result.output
        with open(os.path.join(out, "sweep_table.csv"), newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3  # header + 2 cells


class TestCompare:
    def test_compare_outputs_csv(self, runner, tmp_path):
        doc = {"alpha": 0.05, "checkpoints": [50],
               "series": {"a": {"50": [1, 2, 3, 4]},
                          "b": {"50": [10, 11, 12, 13]}}}
        inp = tmp_path / "cmp.json"
        inp.write_text(json.dumps(doc))
        out = str(tmp_path / "cmp.csv")
        result = runner.invoke(main, ["compare", "--input", str(inp),
                                      "--out", out])
        assert result.exit_code == 0, result.output
        assert "a vs b" in result.output
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["u_statistic"]) == 0.0

    def test_malformed_input_exits_2(self, runner, tmp_path):
        inp = tmp_path / "bad.json"
        inp.write_text("{\"series\": {}}")
        result = runner.invoke(main, ["compare", "--input", str(inp),
                                      "--out", str(tmp_path / "o.csv")])
        assert result.exit_code == 2


class TestFigures:
    def test_figures_from_runs(self, runner, tmp_path):
        out1 = do_run(runner, tmp_path, "r1")
        out2 = do_run(runner, tmp_path, "r2", ["--seed", "12"])
        fig = str(tmp_path / "figs")
        result = runner.invoke(main, ["figures", out1, out2, "--out", fig])
        assert result.exit_code == 0, result.output
        for name in ("fitness_progression.csv", "module_progression.csv",
                     "morph_changes.csv", "final_distribution.csv"):
            assert os.path.exists(os.path.join(fig, name))

    def test_missing_run_csv_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["figures", str(tmp_path),
                                      "--out", str(tmp_path / "f")])
        assert result.exit_code == 2
