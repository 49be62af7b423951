"""The four controller architectures and their mutation/inheritance rules.

- sine: open-loop per-module sine generator, shared fixed frequency
- centralized: one 45-input / 15-output CTRNN for the whole body
- decentralized: one small (3-in, 1-out) CTRNN per module
- copy: two shared small CTRNNs; each module picks one by slot index and
  receives a private runtime copy at evaluation start

Per-module parameter records (sine params, decentralized networks) live in
the morphology genes (ModuleGene.local_control), so morphology add/duplicate
mutations inherit them for free. Controller outputs are servo target angles
clamped to [-90, 90] degrees.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import ctrnn
from .ctrnn import Activation, CtrnnGenome
from .errors import ConfigError, ContractError
from .morphology import BodyPlan, ModuleGene, MorphGenome, count_total, iter_modules

SERVO_LIMIT_DEG = 90.0
CENTRAL_INPUTS = 45
CENTRAL_OUTPUTS = 15
CENTRAL_HIDDEN = 45
CENTRAL_CONNECT_FRACTION = 0.20
UNIT_NET_SHAPE = (3, 1, 3)          # inputs, outputs, hidden of the module net
DEFAULT_SINE_FREQUENCY = 2.0 * math.pi * 0.5   # rad/s, never mutated
SLOT_FLIP_FACTOR = 0.1              # copy slot flips at 0.1 x control rate
SINE_MUTATION_POWER = (5.0, 0.3, 5.0)  # sigma for amplitude(deg), phase(rad), offset(deg)
CONTROL_DT = 0.2                    # seconds per control step
CTRNN_STEP = 0.005                  # CTRNN integration substep, seconds


@dataclass
class SineParams:
    amplitude: float   # degrees
    phase: float       # radians
    offset: float      # degrees


@dataclass(frozen=True)
class GlobalSineConfig:
    frequency: float = DEFAULT_SINE_FREQUENCY   # rad/s, shared by all modules


class ControllerKind(str, Enum):
    SINE = "sine"
    CENTRALIZED = "centralized"
    DECENTRALIZED = "decentralized"
    COPY = "copy"


@dataclass
class ControllerGenome:
    kind: ControllerKind
    networks: list = field(default_factory=list)  # centralized: 1; copy: 2

    def clone(self) -> "ControllerGenome":
        return ControllerGenome(self.kind, [n.clone() for n in self.networks])


def sine_output(params: SineParams, cfg: GlobalSineConfig, t: float) -> float:
    """y(t) = A*sin(w*t + p) + o, clamped to the servo range."""
    y = params.amplitude * math.sin(cfg.frequency * t + params.phase) + params.offset
    return float(np.clip(y, -SERVO_LIMIT_DEG, SERVO_LIMIT_DEG))


def _random_sine_params(rng) -> SineParams:
    return SineParams(amplitude=float(rng.uniform(0.0, 90.0)),
                      phase=float(rng.uniform(0.0, 2.0 * math.pi)),
                      offset=float(rng.uniform(-45.0, 45.0)))


def _unit_network(rng) -> CtrnnGenome:
    ni, no, nh = UNIT_NET_SHAPE
    return ctrnn.new_genome(ni, no, nh, 1.0, rng, output_activation=Activation.CLAMPED)


def new_controller(kind: ControllerKind, morph: MorphGenome,
                   rng: np.random.Generator) -> ControllerGenome:
    """Build a fresh controller sized to the morphology. For sine and
    decentralized kinds this fills every module gene's local_control."""
    kind = ControllerKind(kind)
    if kind is ControllerKind.SINE:
        for _, g in iter_modules(morph):
            g.local_control = _random_sine_params(rng)
        return ControllerGenome(kind)
    if kind is ControllerKind.CENTRALIZED:
        net = ctrnn.new_genome(CENTRAL_INPUTS, CENTRAL_OUTPUTS, CENTRAL_HIDDEN,
                               CENTRAL_CONNECT_FRACTION, rng,
                               output_activation=Activation.CLAMPED)
        return ControllerGenome(kind, [net])
    if kind is ControllerKind.DECENTRALIZED:
        for _, g in iter_modules(morph):
            g.local_control = _unit_network(rng)
        return ControllerGenome(kind)
    if kind is ControllerKind.COPY:
        net = _unit_network(rng)
        # the two networks start out as clones and diverge by mutation
        return ControllerGenome(kind, [net, net.clone()])
    raise ConfigError(f"unknown controller kind {kind}")


@dataclass
class ControllerInstance:
    """Per-evaluation mutable control state. Single-owner; one per evaluation."""
    kind: ControllerKind
    sine_cfg: GlobalSineConfig
    sine_params: list = field(default_factory=list)     # per expressed module
    states: list = field(default_factory=list)          # CtrnnState per module (or one)
    genomes: list = field(default_factory=list)         # runtime net per module
    active: np.ndarray | None = None                    # centralized actuation mask


def instantiate(controller: ControllerGenome, plan: BodyPlan,
                sine_cfg: GlobalSineConfig | None = None) -> ControllerInstance:
    """Build fresh (zeroed) control state for one evaluation of a decoded body."""
    sine_cfg = sine_cfg or GlobalSineConfig()
    inst = ControllerInstance(controller.kind, sine_cfg)
    mods = plan.placements
    if controller.kind is ControllerKind.SINE:
        inst.sine_params = [p.gene.local_control for p in mods]
    elif controller.kind is ControllerKind.CENTRALIZED:
        net = controller.networks[0]
        inst.genomes = [net]
        inst.states = [ctrnn.reset(net)]
        # depth-first modules beyond the network capacity are unactuated/unsensed
        inst.active = np.arange(len(mods)) < CENTRAL_OUTPUTS
    elif controller.kind is ControllerKind.DECENTRALIZED:
        inst.genomes = [p.gene.local_control for p in mods]
        inst.states = [ctrnn.reset(g) for g in inst.genomes]
    elif controller.kind is ControllerKind.COPY:
        # networks are copied into their modules and evolve independently
        inst.genomes = [controller.networks[p.gene.controller_slot % 2] for p in mods]
        inst.states = [ctrnn.reset(g) for g in inst.genomes]
    return inst


def _squash_to_angle(value: float) -> float:
    return float(np.clip(value, -1.0, 1.0)) * SERVO_LIMIT_DEG


def control_step(instance: ControllerInstance, controller: ControllerGenome,
                 sensors, t: float, dt: float = CONTROL_DT) -> np.ndarray:
    """One control tick: returns target angles in degrees, one per expressed
    module in depth-first order. The root's target is ignored downstream."""
    kind = instance.kind
    if kind is ControllerKind.SINE:
        n = len(instance.sine_params)
        return np.array([sine_output(p, instance.sine_cfg, t)
                         for p in instance.sine_params])
    sensors = np.asarray(sensors, dtype=float)
    if kind is ControllerKind.CENTRALIZED:
        n = int(instance.active.shape[0])
        if sensors.shape != (n, 3):
            raise ContractError(f"expected sensors shape ({n}, 3), got {sensors.shape}")
        inputs = np.zeros(CENTRAL_INPUTS)
        for k in range(min(n, CENTRAL_OUTPUTS)):
            inputs[3 * k:3 * k + 3] = sensors[k]
        outputs = ctrnn.advance(instance.states[0], instance.genomes[0],
                                inputs, dt, CTRNN_STEP)
        targets = np.zeros(n)
        for k in range(n):
            targets[k] = _squash_to_angle(outputs[k]) if instance.active[k] else 0.0
        return targets
    # decentralized / copy: one private network per module
    n = len(instance.states)
    if sensors.shape != (n, 3):
        raise ContractError(f"expected sensors shape ({n}, 3), got {sensors.shape}")
    targets = np.zeros(n)
    for k in range(n):
        out = ctrnn.advance(instance.states[k], instance.genomes[k],
                            sensors[k], dt, CTRNN_STEP)
        targets[k] = _squash_to_angle(out[0])
    return targets


def mutate_controller(controller: ControllerGenome, control_rate: float,
                      morph: MorphGenome, rng: np.random.Generator,
                      counter: dict | None = None):
    """Mutate controller genes. Returns (controller, morph); the morphology is
    replaced by a mutated copy when it carries the per-module control records
    (sine, decentralized) or slot indices (copy)."""
    if control_rate < 0:
        raise ContractError("control_rate must be >= 0")
    kind = controller.kind
    if control_rate == 0:
        return controller.clone(), morph
    if kind is ControllerKind.SINE:
        out = morph.clone()
        rate = min(1.0, control_rate / count_total(out))
        sa, sp, so = SINE_MUTATION_POWER
        for _, g in iter_modules(out):
            p = g.local_control
            if rng.random() < rate:
                p.amplitude = float(np.clip(p.amplitude + rng.normal(0.0, sa), 0.0, 90.0))
                _count(counter, "sine_amplitude")
            if rng.random() < rate:
                p.phase = float((p.phase + rng.normal(0.0, sp)) % (2.0 * math.pi))
                _count(counter, "sine_phase")
            if rng.random() < rate:
                p.offset = float(np.clip(p.offset + rng.normal(0.0, so), -90.0, 90.0))
                _count(counter, "sine_offset")
        return controller.clone(), out
    if kind is ControllerKind.CENTRALIZED:
        net = ctrnn.mutate(controller.networks[0], control_rate, rng, counter)
        return ControllerGenome(kind, [net]), morph
    if kind is ControllerKind.DECENTRALIZED:
        out = morph.clone()
        rate = control_rate / count_total(out)
        for _, g in iter_modules(out):
            g.local_control = ctrnn.mutate(g.local_control, rate, rng, counter)
        return controller.clone(), out
    if kind is ControllerKind.COPY:
        nets = [ctrnn.mutate(n, control_rate, rng, counter)
                for n in controller.networks]
        out = morph.clone()
        flip_rate = min(1.0, SLOT_FLIP_FACTOR * control_rate)
        for _, g in iter_modules(out):
            if rng.random() < flip_rate:
                g.controller_slot = 1 - (g.controller_slot % 2)
                _count(counter, "slot_flip")
        return ControllerGenome(kind, nets), out
    raise ConfigError(f"unknown controller kind {kind}")


def _count(counter, name):
    if counter is not None:
        counter[name] = counter.get(name, 0) + 1


def inherit_on_add(parent: ModuleGene) -> tuple:
    """Control record for a module freshly attached under `parent`:
    a deep copy of the parent's local parameters plus its slot index.
    Centralized control carries no per-module record (positional mapping)."""
    return copy.deepcopy(parent.local_control), parent.controller_slot


def count_controller_parameters(controller: ControllerGenome,
                                morph: MorphGenome) -> int:
    """Evolvable controller parameter count for this body."""
    kind = controller.kind
    n_total = count_total(morph)
    if kind is ControllerKind.SINE:
        return 3 * n_total
    if kind is ControllerKind.CENTRALIZED:
        return ctrnn.count_parameters(controller.networks[0])
    if kind is ControllerKind.DECENTRALIZED:
        total = 0
        for _, g in iter_modules(morph):
            if isinstance(g.local_control, CtrnnGenome):
                total += ctrnn.count_parameters(g.local_control)
        return total
    if kind is ControllerKind.COPY:
        return sum(ctrnn.count_parameters(n) for n in controller.networks) + n_total
    raise ConfigError(f"unknown controller kind {kind}")


def controller_to_dict(controller: ControllerGenome) -> dict:
    from .ctrnn import genome_to_dict
    return {"kind": controller.kind.value,
            "networks": [genome_to_dict(n) for n in controller.networks]}


def controller_from_dict(d: dict) -> ControllerGenome:
    from .ctrnn import genome_from_dict
    return ControllerGenome(ControllerKind(d["kind"]),
                            [genome_from_dict(n) for n in d.get("networks", [])])
