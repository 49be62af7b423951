"""Fitness protocol for one individual: build, settle, control loop, early
termination, and planar-displacement scoring in module-height units.

The robot gets a settle phase (2 s, no control output, targets held at 0)
before the start position is recorded, so falling over during settle earns
nothing. Fitness is the horizontal distance between the root's position at
the end of the settle phase and at termination, divided by the module
height (0.08 m). Evaluation stops early once 4 s of simulation have passed
and the root has not moved within the trailing 2 s window.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import controllers, physics
from .controllers import (ControllerGenome, ControllerKind, GlobalSineConfig,
                          DEFAULT_SINE_FREQUENCY)
from .errors import ConfigError, SimulationDiverged
from .morphology import MODULE_HEIGHT_M, MorphGenome, decode


@dataclass
class EvalConfig:
    settle_time: float = 2.0        # s
    control_steps: int = 100
    control_dt: float = 0.2         # s
    physics_dt: float = 0.02        # s
    early_check_from: float = 4.0   # s of total simulation
    stall_window: float = 2.0       # s
    stall_epsilon: float = 0.05     # module-heights
    sine_frequency: float = DEFAULT_SINE_FREQUENCY  # rad/s
    drop_height: float = 0.0        # m, lowest vertex above ground at build
    seed: int = 0

    def __post_init__(self):
        for name in ("settle_time", "control_dt", "physics_dt", "stall_window"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("control_dt must be an integer multiple of physics_dt")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))


@dataclass
class EvalResult:
    fitness: float            # module-heights
    x_start: float            # module-heights
    y_start: float
    x_end: float
    y_end: float
    expressed_count: int
    terminated_early: bool
    elapsed: float            # s of simulated time
    diverged: bool = False

    def to_dict(self) -> dict:
        return {"fitness": self.fitness, "x_start": self.x_start,
                "y_start": self.y_start, "x_end": self.x_end,
                "y_end": self.y_end, "expressed_count": self.expressed_count,
                "terminated_early": self.terminated_early,
                "elapsed": self.elapsed, "diverged": self.diverged}


def stalled(positions, window_steps: int, epsilon: float) -> bool:
    """True iff the maximum displacement among the trailing `window_steps`+1
    sampled positions is below epsilon (same units as the positions)."""
    if len(positions) < window_steps + 1:
        return False
    window = positions[-(window_steps + 1):]
    eps2 = epsilon * epsilon
    for i in range(len(window)):
        xi, yi = window[i]
        for j in range(i + 1, len(window)):
            dx = window[j][0] - xi
            dy = window[j][1] - yi
            if dx * dx + dy * dy >= eps2:
                return False
    return True


def evaluate(morph: MorphGenome, controller: ControllerGenome,
             cfg: EvalConfig | None = None, trace_path=None) -> EvalResult:
    """Run the full fitness protocol. Deterministic given the genomes and
    config; a diverged simulation scores 0 instead of raising."""
    cfg = cfg or EvalConfig()
    plan = decode(morph)
    n_expressed = len(plan.placements)
    world = physics.build_world(plan, cfg.drop_height)
    instance = controllers.instantiate(
        controller, plan, GlobalSineConfig(cfg.sine_frequency))
    needs_sensors = controller.kind is not ControllerKind.SINE
    window_steps = int(round(cfg.stall_window / cfg.control_dt))
    trace_rows = []

    def origin():
        x, y = physics.origin_position(world)
        return (x, y)

    diverged = False
    terminated_early = False
    start = origin()
    end = start
    try:
        settle_steps = int(round(cfg.settle_time / cfg.physics_dt))
        for _ in range(settle_steps):
            world.step()
        start = origin()
        end = start
        history = [start]
        for step_i in range(cfg.control_steps):
            t = step_i * cfg.control_dt
            if needs_sensors:
                sensors = physics.read_sensors(world, plan)
            else:
                sensors = None
            targets = controllers.control_step(instance, controller, sensors,
                                               t, cfg.control_dt)
            world.set_targets(targets[1:])  # the root's servo is limp
            for _ in range(cfg.substeps):
                world.step()
            end = origin()
            history.append(end)
            if trace_path is not None:
                angles = world.joint_angles_deg()
                trace_rows.append((world.step_count, world.elapsed,
                                   end[0], end[1], angles))
            t_total = cfg.settle_time + (step_i + 1) * cfg.control_dt
            if t_total >= cfg.early_check_from and stalled(
                    history, window_steps, cfg.stall_epsilon * MODULE_HEIGHT_M):
                terminated_early = True
                break
    except SimulationDiverged:
        diverged = True

    if trace_path is not None:
        _write_trace(trace_path, trace_rows, world.num_joints)

    if diverged:
        fitness = 0.0
        end = start
    else:
        fitness = math.hypot(end[0] - start[0], end[1] - start[1]) / MODULE_HEIGHT_M
    return EvalResult(
        fitness=fitness,
        x_start=start[0] / MODULE_HEIGHT_M,
        y_start=start[1] / MODULE_HEIGHT_M,
        x_end=end[0] / MODULE_HEIGHT_M,
        y_end=end[1] / MODULE_HEIGHT_M,
        expressed_count=n_expressed,
        terminated_early=terminated_early,
        elapsed=world.step_count * cfg.physics_dt,
        diverged=diverged,
    )


def _write_trace(path, rows, num_joints):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step", "time_s", "root_x_m", "root_z_m"]
        header += [f"joint{j}_angle_deg" for j in range(num_joints)]
        writer.writerow(header)
        for step, time_s, x, y, angles in rows:
            writer.writerow([step, f"{time_s:.6f}", repr(x), repr(y)]
                            + [repr(a) for a in angles])
