"""Evolvable continuous-time recurrent neural networks.

A genome is a set of node genes (hidden + output) and connection genes.
Node ids: inputs are negative (-1 .. -num_inputs), outputs occupy
0 .. num_outputs-1, hidden nodes get ids >= num_outputs.

Each node integrates a first-order ODE of its aggregated weighted inputs:

    ds_i/dt = (1/tau_i) * (-s_i + Agg_i(w_ji * o_j))
    o_i     = Act_i(bias_i + response_i * s_i)

advanced with explicit Euler substeps. Genomes are treated as immutable
values; mutation returns a fresh genome.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SIN = "sin"
    GAUSS = "gauss"
    RELU = "relu"
    IDENTITY = "identity"
    CLAMPED = "clamped"
    ABS = "abs"


class Aggregation(str, Enum):
    SUM = "sum"
    PRODUCT = "product"
    MAX = "max"
    MIN = "min"
    MEAN = "mean"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


ACTIVATION_FUNCS = {
    Activation.SIGMOID: _sigmoid,
    Activation.TANH: np.tanh,
    Activation.SIN: np.sin,
    Activation.GAUSS: lambda x: np.exp(-np.clip(x, -8.0, 8.0) ** 2),
    Activation.RELU: lambda x: np.maximum(x, 0.0),
    Activation.IDENTITY: lambda x: x,
    Activation.CLAMPED: lambda x: np.clip(x, -1.0, 1.0),
    Activation.ABS: np.abs,
}

# Conventions for empty input lists: sum -> 0, product -> 1, max/min/mean -> 0.
def aggregate(kind: Aggregation, values: np.ndarray) -> float:
    if values.size == 0:
        return 1.0 if kind is Aggregation.PRODUCT else 0.0
    if kind is Aggregation.SUM:
        return float(values.sum())
    if kind is Aggregation.PRODUCT:
        return float(values.prod())
    if kind is Aggregation.MAX:
        return float(values.max())
    if kind is Aggregation.MIN:
        return float(values.min())
    return float(values.mean())


@dataclass(frozen=True)
class NodeGene:
    id: int
    bias: float
    response: float
    tau: float  # time constant, seconds; always > 0
    activation: Activation
    aggregation: Aggregation


@dataclass(frozen=True)
class ConnectionGene:
    source: int  # node id or (negative) input id
    target: int  # node id, never an input
    weight: float
    enabled: bool


@dataclass
class CtrnnGenome:
    num_inputs: int
    num_outputs: int
    nodes: dict  # id -> NodeGene
    connections: dict  # (source, target) -> ConnectionGene

    def clone(self) -> "CtrnnGenome":
        return CtrnnGenome(self.num_inputs, self.num_outputs,
                           dict(self.nodes), dict(self.connections))


# Per-gene base mutation event rates, multiplied by the caller's rate scale.
MUTATION_RATES = {
    "weight_perturb": 0.8,
    "weight_replace": 0.1,
    "conn_toggle": 0.05,
    "bias_perturb": 0.8,
    "response_perturb": 0.8,
    "tau_perturb": 0.8,
    "bias_replace": 0.1,
    "response_replace": 0.1,
    "tau_replace": 0.1,
    "activation_swap": 0.1,
    "aggregation_swap": 0.1,
    "conn_add": 0.1,
    "conn_delete": 0.1,
    "node_add": 0.05,
    "node_delete": 0.05,
}

MUTATION_POWER = 0.5       # Gaussian sigma for weight/bias/response perturbations
TAU_MUTATION_POWER = 0.1   # Gaussian sigma for time-constant perturbations
TAU_MIN = 0.1              # seconds; floored well above the integration
                           # substep so explicit Euler stays accurate
VALUE_CLAMP = 8.0          # weights/biases/responses live in [-8, 8]

_ACTIVATIONS = list(Activation)
_AGGREGATIONS = list(Aggregation)


def _clamp_value(x: float) -> float:
    return float(min(VALUE_CLAMP, max(-VALUE_CLAMP, x)))


def input_ids(num_inputs: int) -> list:
    return [-(k + 1) for k in range(num_inputs)]


def _candidate_connections(num_inputs, num_outputs, hidden_ids):
    """Initial candidate topology: inputs->hidden, hidden->output,
    inputs->output, and output self-recurrence."""
    ins = input_ids(num_inputs)
    outs = list(range(num_outputs))
    cands = []
    for i in ins:
        for h in hidden_ids:
            cands.append((i, h))
    for h in hidden_ids:
        for o in outs:
            cands.append((h, o))
    for i in ins:
        for o in outs:
            cands.append((i, o))
    for o in outs:
        cands.append((o, o))
    return cands


def new_genome(num_inputs: int, num_outputs: int, num_hidden: int,
               connect_fraction: float, rng: np.random.Generator,
               output_activation: Activation = Activation.SIGMOID) -> CtrnnGenome:
    """Create a fresh genome with num_hidden hidden nodes and a random
    subset of the candidate connections at the given density."""
    if num_outputs < 1:
        raise ConfigError("num_outputs must be >= 1")
    if not 0.0 <= connect_fraction <= 1.0:
        raise ConfigError(f"connect_fraction must be in [0, 1], got {connect_fraction}")
    hidden_ids = list(range(num_outputs, num_outputs + num_hidden))
    nodes = {}
    for oid in range(num_outputs):
        nodes[oid] = NodeGene(oid, _clamp_value(rng.normal(0.0, 1.0)), 1.0, 1.0,
                              output_activation, Aggregation.SUM)
    for hid in hidden_ids:
        nodes[hid] = NodeGene(hid, _clamp_value(rng.normal(0.0, 1.0)), 1.0, 1.0,
                              Activation.SIGMOID, Aggregation.SUM)
    cands = _candidate_connections(num_inputs, num_outputs, hidden_ids)
    k = int(round(connect_fraction * len(cands)))
    if k >= len(cands):
        chosen = list(range(len(cands)))
    else:
        chosen = sorted(rng.choice(len(cands), size=k, replace=False).tolist())
    connections = {}
    for ci in chosen:
        s, t = cands[ci]
        connections[(s, t)] = ConnectionGene(s, t, _clamp_value(rng.normal(0.0, 1.0)), True)
    return CtrnnGenome(num_inputs, num_outputs, nodes, connections)


def validate(genome: CtrnnGenome) -> None:
    """Raise on any violated genome invariant (used by property tests)."""
    for oid in range(genome.num_outputs):
        if oid not in genome.nodes:
            raise ContractError(f"missing output node {oid}")
    for (s, t), c in genome.connections.items():
        if (s, t) != (c.source, c.target):
            raise ContractError("connection key/fields mismatch")
        if t < 0:
            raise ContractError("connection targets an input id")
        if t not in genome.nodes:
            raise ContractError(f"dangling connection target {t}")
        if s >= 0 and s not in genome.nodes:
            raise ContractError(f"dangling connection source {s}")
        if s < 0 and s not in input_ids(genome.num_inputs):
            raise ContractError(f"invalid input id {s}")
    for n in genome.nodes.values():
        if n.tau <= 0:
            raise ContractError("time constant must be positive")


def count_parameters(genome: CtrnnGenome) -> int:
    """3 evolvable parameters per connection, 5 per node."""
    return 3 * len(genome.connections) + 5 * len(genome.nodes)


class CtrnnState:
    """Mutable per-evaluation network state plus a compiled runtime view
    of its (immutable) genome. Single-owner; never advance from two threads."""

    def __init__(self, genome: CtrnnGenome):
        self.node_ids = sorted(genome.nodes)
        n = len(self.node_ids)
        ni = genome.num_inputs
        slot = {nid: i for i, nid in enumerate(self.node_ids)}
        for k, iid in enumerate(input_ids(ni)):
            slot[iid] = n + k
        self.s = np.zeros(n)
        self.out = np.zeros(n)
        self._buf = np.zeros(n + ni)
        self._bias = np.array([genome.nodes[i].bias for i in self.node_ids])
        self._response = np.array([genome.nodes[i].response for i in self.node_ids])
        self._tau = np.array([genome.nodes[i].tau for i in self.node_ids])
        # incoming enabled connections, grouped per node
        incoming = {i: ([], []) for i in range(n)}
        for c in genome.connections.values():
            if c.enabled:
                srcs, ws = incoming[slot[c.target]]
                srcs.append(slot[c.source])
                ws.append(c.weight)
        aggs = [genome.nodes[i].aggregation for i in self.node_ids]
        self._all_sum = all(a is Aggregation.SUM for a in aggs)
        if self._all_sum:
            W = np.zeros((n, n + ni))
            for i in range(n):
                srcs, ws = incoming[i]
                for s_, w_ in zip(srcs, ws):
                    W[i, s_] += w_
            self._W = W
        else:
            self._incoming = [
                (np.array(incoming[i][0], dtype=np.intp), np.array(incoming[i][1]), aggs[i])
                for i in range(n)
            ]
        # group node slots by activation kind
        acts = [genome.nodes[i].activation for i in self.node_ids]
        groups = {}
        for i, a in enumerate(acts):
            groups.setdefault(a, []).append(i)
        self._act_groups = [(ACTIVATION_FUNCS[a], np.array(ix, dtype=np.intp))
                            for a, ix in sorted(groups.items(), key=lambda kv: kv[0].value)]

    def reset_values(self):
        self.s[:] = 0.0
        self.out[:] = 0.0


def reset(genome: CtrnnGenome) -> CtrnnState:
    """Build a zeroed state for the genome."""
    return CtrnnState(genome)


def advance(state: CtrnnState, genome: CtrnnGenome, inputs,
            advance_time: float, integration_step: float) -> np.ndarray:
    """Advance the network by ceil(advance_time / integration_step) Euler
    substeps and return the output-node values (length num_outputs)."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape != (genome.num_inputs,):
        raise ContractError(
            f"expected {genome.num_inputs} inputs, got shape {inputs.shape}")
    if not 0.0 < integration_step <= advance_time:
        raise ContractError("require 0 < integration_step <= advance_time")
    n_sub = math.ceil(advance_time / integration_step - 1e-9)
    n = len(state.node_ids)
    buf = state._buf
    buf[n:] = inputs
    s, out = state.s, state.out
    for _ in range(n_sub):
        buf[:n] = out
        if state._all_sum:
            pre = state._W @ buf
        else:
            pre = np.empty(n)
            for i, (srcs, ws, agg) in enumerate(state._incoming):
                pre[i] = aggregate(agg, ws * buf[srcs])
        s += (integration_step / state._tau) * (pre - s)
        z = state._bias + state._response * s
        for fn, idx in state._act_groups:
            out[idx] = fn(z[idx])
    return out[:genome.num_outputs].copy()


def _fire(rng, rate, scale, counter, name):
    if rng.random() < min(1.0, rate * scale):
        if counter is not None:
            counter[name] = counter.get(name, 0) + 1
        return True
    return False


def mutate(genome: CtrnnGenome, rate_scale: float, rng: np.random.Generator,
           counter: dict | None = None) -> CtrnnGenome:
    """Return a mutated copy. Each per-gene event fires with probability
    base_rate * rate_scale; rate_scale 0 returns an identical genome.
    `counter` (optional) collects event counts for statistical tests."""
    if rate_scale < 0:
        raise ContractError("rate_scale must be >= 0")
    if rate_scale == 0:
        return genome.clone()
    R = MUTATION_RATES
    nodes = {}
    for nid in sorted(genome.nodes):
        g = genome.nodes[nid]
        bias, response, tau = g.bias, g.response, g.tau
        act, agg = g.activation, g.aggregation
        if _fire(rng, R["bias_perturb"], rate_scale, counter, "bias_perturb"):
            bias = _clamp_value(bias + rng.normal(0.0, MUTATION_POWER))
        if _fire(rng, R["bias_replace"], rate_scale, counter, "bias_replace"):
            bias = _clamp_value(rng.normal(0.0, 1.0))
        if _fire(rng, R["response_perturb"], rate_scale, counter, "response_perturb"):
            response = _clamp_value(response + rng.normal(0.0, MUTATION_POWER))
        if _fire(rng, R["response_replace"], rate_scale, counter, "response_replace"):
            response = _clamp_value(rng.normal(0.0, 1.0))
        if _fire(rng, R["tau_perturb"], rate_scale, counter, "tau_perturb"):
            tau = max(TAU_MIN, tau + rng.normal(0.0, TAU_MUTATION_POWER))
        if _fire(rng, R["tau_replace"], rate_scale, counter, "tau_replace"):
            tau = max(TAU_MIN, abs(rng.normal(1.0, 0.5)))
        if _fire(rng, R["activation_swap"], rate_scale, counter, "activation_swap"):
            act = _ACTIVATIONS[rng.integers(len(_ACTIVATIONS))]
        if _fire(rng, R["aggregation_swap"], rate_scale, counter, "aggregation_swap"):
            agg = _AGGREGATIONS[rng.integers(len(_AGGREGATIONS))]
        nodes[nid] = NodeGene(nid, bias, response, tau, act, agg)
    connections = {}
    for key in sorted(genome.connections):
        c = genome.connections[key]
        weight, enabled = c.weight, c.enabled
        if _fire(rng, R["weight_perturb"], rate_scale, counter, "weight_perturb"):
            weight = _clamp_value(weight + rng.normal(0.0, MUTATION_POWER))
        if _fire(rng, R["weight_replace"], rate_scale, counter, "weight_replace"):
            weight = _clamp_value(rng.normal(0.0, 1.0))
        if _fire(rng, R["conn_toggle"], rate_scale, counter, "conn_toggle"):
            enabled = not enabled
        connections[key] = ConnectionGene(c.source, c.target, weight, enabled)
    out = CtrnnGenome(genome.num_inputs, genome.num_outputs, nodes, connections)
    if _fire(rng, R["conn_add"], rate_scale, counter, "conn_add"):
        _add_connection(out, rng)
    if _fire(rng, R["conn_delete"], rate_scale, counter, "conn_delete"):
        _delete_connection(out, rng)
    if _fire(rng, R["node_add"], rate_scale, counter, "node_add"):
        _add_node(out, rng)
    if _fire(rng, R["node_delete"], rate_scale, counter, "node_delete"):
        _delete_node(out, rng)
    return out


def _add_connection(genome, rng):
    sources = input_ids(genome.num_inputs) + sorted(genome.nodes)
    targets = sorted(genome.nodes)
    missing = [(s, t) for s in sources for t in targets
               if (s, t) not in genome.connections]
    if not missing:
        return
    s, t = missing[rng.integers(len(missing))]
    genome.connections[(s, t)] = ConnectionGene(s, t, _clamp_value(rng.normal(0.0, 1.0)), True)


def _delete_connection(genome, rng):
    keys = sorted(genome.connections)
    if not keys:
        return
    del genome.connections[keys[rng.integers(len(keys))]]


def _add_node(genome, rng):
    """NEAT-style: split an enabled connection with a new node."""
    enabled = [k for k in sorted(genome.connections) if genome.connections[k].enabled]
    if not enabled:
        return
    key = enabled[rng.integers(len(enabled))]
    old = genome.connections[key]
    new_id = max(max(genome.nodes), genome.num_outputs - 1) + 1
    genome.nodes[new_id] = NodeGene(new_id, _clamp_value(rng.normal(0.0, 1.0)),
                                    1.0, 1.0, Activation.SIGMOID, Aggregation.SUM)
    genome.connections[key] = replace(old, enabled=False)
    genome.connections[(old.source, new_id)] = ConnectionGene(old.source, new_id, 1.0, True)
    genome.connections[(new_id, old.target)] = ConnectionGene(new_id, old.target, old.weight, True)


def _delete_node(genome, rng):
    hidden = [i for i in sorted(genome.nodes) if i >= genome.num_outputs]
    if not hidden:
        return
    nid = hidden[rng.integers(len(hidden))]
    del genome.nodes[nid]
    for key in [k for k in genome.connections if nid in k]:
        del genome.connections[key]


def genome_to_dict(genome: CtrnnGenome) -> dict:
    return {
        "num_inputs": genome.num_inputs,
        "num_outputs": genome.num_outputs,
        "nodes": [
            {"id": n.id, "bias": n.bias, "response": n.response, "tau": n.tau,
             "activation": n.activation.value, "aggregation": n.aggregation.value}
            for n in (genome.nodes[i] for i in sorted(genome.nodes))
        ],
        "connections": [
            {"source": c.source, "target": c.target, "weight": c.weight,
             "enabled": c.enabled}
            for c in (genome.connections[k] for k in sorted(genome.connections))
        ],
    }


def genome_from_dict(d: dict) -> CtrnnGenome:
    nodes = {n["id"]: NodeGene(n["id"], n["bias"], n["response"], n["tau"],
                               Activation(n["activation"]), Aggregation(n["aggregation"]))
             for n in d["nodes"]}
    conns = {(c["source"], c["target"]):
             ConnectionGene(c["source"], c["target"], c["weight"], c["enabled"])
             for c in d["connections"]}
    return CtrnnGenome(d["num_inputs"], d["num_outputs"], nodes, conns)


def genome_to_json(genome: CtrnnGenome) -> str:
    return json.dumps(genome_to_dict(genome), sort_keys=True)


def genome_from_json(text: str) -> CtrnnGenome:
    return genome_from_dict(json.loads(text))
