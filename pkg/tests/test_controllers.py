"""Unit tests for the four controller architectures."""
import math

import numpy as np
import pytest

from modevo import controllers as C
from modevo import ctrnn, morphology
from modevo.controllers import (ControllerKind, GlobalSineConfig, SineParams,
                                control_step, controller_from_dict,
                                controller_to_dict, count_controller_parameters,
                                inherit_on_add, instantiate, mutate_controller,
                                new_controller, sine_output)
from modevo.errors import ContractError
from modevo.morphology import Face, ModuleGene, MorphGenome, decode


def chain(n):
    root = ModuleGene()
    cur = root
    for _ in range(n - 1):
        nxt = ModuleGene()
        cur.children[Face.TOP] = nxt
        cur = nxt
    return MorphGenome(root)


class TestSineOutput:
    def test_formula(self):
        p = SineParams(amplitude=30.0, phase=0.7, offset=5.0)
        cfg = GlobalSineConfig()
        for t in (0.0, 0.3, 1.7):
            expect = 30.0 * math.sin(cfg.frequency * t + 0.7) + 5.0
            assert sine_output(p, cfg, t) == pytest.approx(expect)

    def test_frequency_is_half_hertz(self):
        assert GlobalSineConfig().frequency == pytest.approx(2 * math.pi * 0.5)

    def test_clamped_to_servo_range(self):
        p = SineParams(amplitude=90.0, phase=math.pi / 2, offset=45.0)
        assert sine_output(p, GlobalSineConfig(), 0.0) == 90.0
        p = SineParams(amplitude=90.0, phase=-math.pi / 2, offset=-45.0)
        assert sine_output(p, GlobalSineConfig(), 0.0) == -90.0


class TestNewController:
    def test_sine_fills_every_module(self):
        g = chain(4)
        new_controller(ControllerKind.SINE, g, np.random.default_rng(0))
        for _, mod in morphology.iter_modules(g):
            assert isinstance(mod.local_control, SineParams)
            assert 0.0 <= mod.local_control.amplitude <= 90.0

    def test_centralized_network_shape(self):
        ctrl = new_controller(ControllerKind.CENTRALIZED, chain(3),
                              np.random.default_rng(0))
        net = ctrl.networks[0]
        assert net.num_inputs == 45
        assert net.num_outputs == 15
        assert len(net.nodes) == 60
        ctrnn.validate(net)

    def test_decentralized_unit_nets(self):
        g = chain(3)
        new_controller(ControllerKind.DECENTRALIZED, g,
                       np.random.default_rng(0))
        for _, mod in morphology.iter_modules(g):
            assert ctrnn.count_parameters(mod.local_control) == 68

    def test_copy_starts_with_identical_twins(self):
        ctrl = new_controller(ControllerKind.COPY, chain(3),
                              np.random.default_rng(0))
        assert len(ctrl.networks) == 2
        assert (ctrnn.genome_to_json(ctrl.networks[0])
                == ctrnn.genome_to_json(ctrl.networks[1]))
        assert ctrl.networks[0] is not ctrl.networks[1]


class TestControlStep:
    def all_kinds(self, n=4, seed=0):
        for kind in ControllerKind:
            g = chain(n)
            rng = np.random.default_rng(seed)
            ctrl = new_controller(kind, g, rng)
            plan = decode(g)
            inst = instantiate(ctrl, plan)
            yield kind, ctrl, plan, inst

    def test_targets_shape_and_range(self):
        sensors = np.full((4, 3), -1.0)
        for kind, ctrl, plan, inst in self.all_kinds():
            targets = control_step(inst, ctrl, sensors, 0.0)
            assert targets.shape == (4,)
            assert np.all(np.abs(targets) <= 90.0)

    def test_range_holds_for_extreme_sensors(self):
        sensors = np.full((4, 3), 1e6)
        for kind, ctrl, plan, inst in self.all_kinds():
            targets = control_step(inst, ctrl, sensors, 3.0)
            assert np.all(np.abs(targets) <= 90.0)

    def test_sine_matches_per_module_params(self):
        g = chain(3)
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(1))
        plan = decode(g)
        inst = instantiate(ctrl, plan)
        t = 0.8
        targets = control_step(inst, ctrl, None, t)
        for k, p in enumerate(plan.placements):
            assert targets[k] == pytest.approx(
                sine_output(p.gene.local_control, inst.sine_cfg, t))

    def test_centralized_extra_modules_are_limp(self):
        g = chain(17)
        ctrl = new_controller(ControllerKind.CENTRALIZED, g,
                              np.random.default_rng(2))
        plan = decode(g)
        inst = instantiate(ctrl, plan)
        targets = control_step(inst, ctrl, np.zeros((17, 3)), 0.0)
        assert targets.shape == (17,)
        assert targets[15] == 0.0 and targets[16] == 0.0

    def test_copy_uses_slot_networks(self):
        g = chain(2)
        g.root.controller_slot = 0
        g.root.children[Face.TOP].controller_slot = 1
        ctrl = new_controller(ControllerKind.COPY, g, np.random.default_rng(3))
        # make the two networks distinguishable
        ctrl.networks[1] = ctrnn.mutate(ctrl.networks[1], 2.0,
                                        np.random.default_rng(4))
        inst = instantiate(ctrl, decode(g))
        assert inst.genomes[0] is ctrl.networks[0]
        assert inst.genomes[1] is ctrl.networks[1]
        assert inst.states[0] is not inst.states[1]

    def test_sensor_shape_checked(self):
        for kind, ctrl, plan, inst in self.all_kinds():
            if kind is ControllerKind.SINE:
                continue
            with pytest.raises(ContractError):
                control_step(inst, ctrl, np.zeros((2, 3)), 0.0)


class TestMutateController:
    def test_zero_rate_identity(self):
        for kind in ControllerKind:
            g = chain(3)
            ctrl = new_controller(kind, g, np.random.default_rng(0))
            before_m = morphology.morph_to_json(g)
            c2, m2 = mutate_controller(ctrl, 0.0, g, np.random.default_rng(1))
            assert morphology.morph_to_json(m2) == before_m

    def test_sine_mutation_rewrites_morph_copy(self):
        g = chain(3)
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(5))
        before = morphology.morph_to_json(g)
        changed = False
        rng = np.random.default_rng(6)
        for _ in range(50):
            _, m2 = mutate_controller(ctrl, 3.0, g, rng)
            if morphology.morph_to_json(m2) != before:
                changed = True
                break
        assert changed
        assert morphology.morph_to_json(g) == before

    def test_sine_params_stay_in_range(self):
        g = chain(3)
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(7))
        rng = np.random.default_rng(8)
        m = g
        for _ in range(200):
            ctrl, m = mutate_controller(ctrl, 3.0, m, rng)
        for _, mod in morphology.iter_modules(m):
            p = mod.local_control
            assert 0.0 <= p.amplitude <= 90.0
            assert 0.0 <= p.phase < 2 * math.pi
            assert -90.0 <= p.offset <= 90.0

    def test_centralized_mutates_network_not_morph(self):
        g = chain(3)
        ctrl = new_controller(ControllerKind.CENTRALIZED, g,
                              np.random.default_rng(9))
        c2, m2 = mutate_controller(ctrl, 1.0, g, np.random.default_rng(10))
        assert m2 is g
        assert (ctrnn.genome_to_json(c2.networks[0])
                != ctrnn.genome_to_json(ctrl.networks[0]))
        ctrnn.validate(c2.networks[0])

    def test_decentralized_networks_diverge(self):
        g = chain(4)
        ctrl = new_controller(ControllerKind.DECENTRALIZED, g,
                              np.random.default_rng(11))
        rng = np.random.default_rng(12)
        m = g
        for _ in range(30):
            ctrl, m = mutate_controller(ctrl, 4.0, m, rng)
        texts = {ctrnn.genome_to_json(mod.local_control)
                 for _, mod in morphology.iter_modules(m)}
        assert len(texts) > 1
        for _, mod in morphology.iter_modules(m):
            ctrnn.validate(mod.local_control)

    def test_copy_slot_flips_happen(self):
        g = chain(6)
        ctrl = new_controller(ControllerKind.COPY, g, np.random.default_rng(13))
        rng = np.random.default_rng(14)
        counter = {}
        m = g
        for _ in range(100):
            ctrl, m = mutate_controller(ctrl, 1.0, m, rng, counter)
        assert counter.get("slot_flip", 0) > 0
        slots = {mod.controller_slot for _, mod in morphology.iter_modules(m)}
        assert slots <= {0, 1}

    def test_per_module_rate_division(self):
        # decentralized event frequency per network scales as rate / n
        rng = np.random.default_rng(15)
        rate = 0.8
        freqs = {}
        for n in (2, 8):
            g = chain(n)
            ctrl = new_controller(ControllerKind.DECENTRALIZED, g,
                                  np.random.default_rng(16))
            counter = {}
            trials = 600
            for _ in range(trials):
                mutate_controller(ctrl, rate, g, rng, counter)
            freqs[n] = sum(counter.values()) / trials / n
        # total events divided by modules: per-module load must not grow with n
        assert freqs[8] < freqs[2] * 0.5


class TestInheritance:
    def test_inherit_on_add_deep_copies(self):
        parent = ModuleGene(controller_slot=1,
                            local_control=SineParams(20.0, 0.1, 0.0))
        lc, slot = inherit_on_add(parent)
        assert slot == 1
        assert lc.amplitude == 20.0
        assert lc is not parent.local_control

    def test_inherit_on_add_none_for_centralized_bodies(self):
        lc, slot = inherit_on_add(ModuleGene())
        assert lc is None and slot == 0


class TestParameterCounts:
    def test_sine(self):
        g = chain(6)
        ctrl = new_controller(ControllerKind.SINE, g, np.random.default_rng(0))
        assert count_controller_parameters(ctrl, g) == 18

    def test_decentralized(self):
        g = chain(6)
        ctrl = new_controller(ControllerKind.DECENTRALIZED, g,
                              np.random.default_rng(0))
        assert count_controller_parameters(ctrl, g) == 408

    def test_copy(self):
        g = chain(6)
        ctrl = new_controller(ControllerKind.COPY, g, np.random.default_rng(0))
        assert count_controller_parameters(ctrl, g) == 136 + 6


class TestSerialization:
    def test_roundtrip(self):
        import json
        for kind in ControllerKind:
            g = chain(3)
            ctrl = new_controller(kind, g, np.random.default_rng(1))
            d = controller_to_dict(ctrl)
            c2 = controller_from_dict(json.loads(json.dumps(d)))
            assert controller_to_dict(c2) == d
