"""Unit tests for the fitness evaluation protocol."""
import csv
import json

import numpy as np
import pytest

from modevo.controllers import (ControllerGenome, ControllerKind, SineParams,
                                new_controller)
from modevo.errors import ConfigError
from modevo.evaluation import EvalConfig, EvalResult, evaluate, stalled
from modevo.morphology import (MODULE_HEIGHT_M, Face, ModuleGene, MorphGenome,
                               iter_modules, random_genome)


def chain(n):
    root = ModuleGene()
    cur = root
    for _ in range(n - 1):
        nxt = ModuleGene()
        cur.children[Face.TOP] = nxt
        cur = nxt
    return MorphGenome(root)


def zero_sine_individual(n):
    g = chain(n)
    for _, m in iter_modules(g):
        m.local_control = SineParams(0.0, 0.0, 0.0)
    return g, ControllerGenome(ControllerKind.SINE)


class TestEvalConfig:
    def test_defaults(self):
        cfg = EvalConfig()
        assert cfg.settle_time == 2.0
        assert cfg.control_steps == 100
        assert cfg.control_dt == 0.2
        assert cfg.physics_dt == 0.02
        assert cfg.substeps == 10

    def test_rejects_nonmultiple_steps(self):
        with pytest.raises(ConfigError):
            EvalConfig(control_dt=0.05, physics_dt=0.02)

    def test_rejects_nonpositive_times(self):
        with pytest.raises(ConfigError):
            EvalConfig(settle_time=0.0)


class TestStalled:
    def test_short_history_never_stalls(self):
        assert not stalled([(0.0, 0.0)] * 5, 10, 0.1)

    def test_static_positions_stall(self):
        assert stalled([(1.0, 2.0)] * 11, 10, 0.1)

    def test_any_pairwise_excursion_prevents_stall(self):
        pts = [(0.0, 0.0)] * 11
        pts[5] = (0.2, 0.0)  # went and came back
        assert not stalled(pts, 10, 0.1)

    def test_threshold_is_strict(self):
        pts = [(0.0, 0.0)] * 10 + [(0.1, 0.0)]
        assert not stalled(pts, 10, 0.1)
        pts = [(0.0, 0.0)] * 10 + [(0.0999, 0.0)]
        assert stalled(pts, 10, 0.1)


class TestProtocol:
    def test_all_zero_controller_scores_nothing(self):
        g, ctrl = zero_sine_individual(1)
        res = evaluate(g, ctrl)
        assert res.fitness < 0.1
        assert not res.diverged

    def test_static_fixture_stops_by_six_seconds(self):
        g, ctrl = zero_sine_individual(2)
        res = evaluate(g, ctrl)
        assert res.terminated_early
        assert res.elapsed <= 6.0

    def test_repeat_evaluation_bitwise_identical(self):
        g = random_genome(np.random.default_rng(21))
        ctrl = new_controller(ControllerKind.DECENTRALIZED, g,
                              np.random.default_rng(22))
        a = evaluate(g, ctrl)
        b = evaluate(g, ctrl)
        assert a == b

    def test_fitness_unit_bridge(self):
        # 30 fitness units correspond to exactly 2.40 m of displacement
        assert 30 * MODULE_HEIGHT_M == 2.4
        assert 2.4 / MODULE_HEIGHT_M == 30.0

    def test_moving_sine_robot_outscores_static(self):
        g = random_genome(np.random.default_rng(11))
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(12))
        res = evaluate(g, ctrl)
        assert res.fitness > 0.1
        assert res.expressed_count >= 1

    def test_fitness_matches_endpoint_geometry(self):
        g = random_genome(np.random.default_rng(31))
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(32))
        res = evaluate(g, ctrl)
        d = np.hypot(res.x_end - res.x_start, res.y_end - res.y_start)
        assert res.fitness == pytest.approx(d)

    def test_settle_motion_does_not_count(self):
        # a robot that only falls over during settle scores ~nothing
        g, ctrl = zero_sine_individual(5)  # tall enough to topple
        res = evaluate(g, ctrl)
        # whatever happened during settle, fitness measures from t = 2 s
        assert res.fitness <= 6.0  # bounded by the chain's own length

    def test_result_serializes(self):
        g, ctrl = zero_sine_individual(1)
        d = evaluate(g, ctrl).to_dict()
        json.dumps(d)
        assert set(d) == {"fitness", "x_start", "y_start", "x_end", "y_end",
                          "expressed_count", "terminated_early", "elapsed",
                          "diverged"}


class TestTrace:
    def test_trace_csv_layout(self, tmp_path):
        g, ctrl = zero_sine_individual(3)
        path = tmp_path / "trace.csv"
        evaluate(g, ctrl, EvalConfig(), trace_path=str(path))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        assert header[:4] == ["step", "time_s", "root_x_m", "root_z_m"]
        assert header[4:] == ["joint0_angle_deg", "joint1_angle_deg"]
        assert len(rows) > 1
        # one row per control step, time strictly increasing
        times = [float(r[1]) for r in rows[1:]]
        assert all(b > a for a, b in zip(times, times[1:]))
