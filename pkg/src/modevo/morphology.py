"""Directed-tree body genome, deterministic decode with collision pruning,
and morphology mutation.

Each module is a unit cube (edge = 1 module-height = 0.08 m) with its male
base face at -Z and three female faces: Top (+Z), Left (+X), Right (-X).
The hinge axis is the module's local Y. Orientation genes are quarter
turns about the attachment normal, so every placed box stays axis-aligned.

Decode walks the tree breadth-first (within a depth: parents in placement
order, faces Top < Left < Right) and prunes any module whose (slightly
shrunk) box overlaps an earlier placement or dips below the ground plane,
together with its whole subtree. Pruned modules stay in the genome.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ctrnn import CtrnnGenome, genome_from_dict, genome_to_dict

MODULE_HEIGHT_M = 0.08    # meters per module-height (the fitness unit)
SHRINK = 0.95             # overlap boxes are shrunk so flush neighbors are legal
DEPTH_CAP = 5             # random-genome recursion depth limit
# Calibrated so the expressed-module count of random genomes averages ~6.
DEFAULT_GROWTH_P = 0.36


class Face(str, Enum):
    TOP = "Top"
    LEFT = "Left"
    RIGHT = "Right"


FACE_ORDER = (Face.TOP, Face.LEFT, Face.RIGHT)

_FACE_NORMAL = {
    Face.TOP: np.array([0.0, 0.0, 1.0]),
    Face.LEFT: np.array([1.0, 0.0, 0.0]),
    Face.RIGHT: np.array([-1.0, 0.0, 0.0]),
}

# Child frame: base (-Z) flush against the parent face, before the spin gene.
_R_FACE = {
    Face.TOP: np.eye(3),
    Face.LEFT: np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
    Face.RIGHT: np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
}

_RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
_R_SPIN = [np.linalg.matrix_power(_RZ90, k) for k in range(4)]

HINGE_AXIS_LOCAL = np.array([0.0, 1.0, 0.0])


@dataclass
class ModuleGene:
    orientation: int = 0            # quarter turns about the attachment normal
    controller_slot: int = 0        # {0, 1}; used only by the copy controller
    local_control: object = None    # SineParams or CtrnnGenome, or None
    children: dict = field(default_factory=dict)  # Face -> ModuleGene


@dataclass
class MorphGenome:
    root: ModuleGene

    @property
    def module_count_total(self) -> int:
        return count_total(self)

    def clone(self) -> "MorphGenome":
        return MorphGenome(copy.deepcopy(self.root))


@dataclass
class Placement:
    path: tuple            # faces from the root
    gene: ModuleGene
    position: np.ndarray   # module units, box center
    rotation: np.ndarray   # 3x3, a signed permutation
    parent_index: int | None
    depth: int

    @property
    def joint_axis(self) -> np.ndarray:
        return self.rotation @ HINGE_AXIS_LOCAL


@dataclass
class BodyPlan:
    placements: list       # expressed modules, depth-first pre-order
    expressed: dict        # path -> bool, for every genome module
    genome: MorphGenome


def count_total(genome: MorphGenome) -> int:
    def walk(g):
        return 1 + sum(walk(c) for c in g.children.values())
    return walk(genome.root)


def count_expressed(plan: BodyPlan) -> int:
    return len(plan.placements)


def iter_modules(genome: MorphGenome):
    """(path, gene) pairs in depth-first pre-order, faces Top < Left < Right."""
    def walk(g, path):
        yield path, g
        for face in FACE_ORDER:
            if face in g.children:
                yield from walk(g.children[face], path + (face,))
    yield from walk(genome.root, ())


def random_genome(rng: np.random.Generator, growth_p: float = DEFAULT_GROWTH_P,
                  depth_cap: int = DEPTH_CAP) -> MorphGenome:
    """Recursively fill each female face with probability growth_p."""
    if not 0.0 <= growth_p < 1.0:
        raise ValueError("growth_p must be in [0, 1)")

    def gen(depth):
        g = ModuleGene(orientation=int(rng.integers(4)))
        if depth < depth_cap:
            for face in FACE_ORDER:
                if rng.random() < growth_p:
                    g.children[face] = gen(depth + 1)
        return g

    return MorphGenome(gen(0))


def decode(genome: MorphGenome) -> BodyPlan:
    """Place modules breadth-first and prune colliding branches. Never
    modifies the genome; the root is always expressed."""
    expressed = {path: False for path, _ in iter_modules(genome)}
    root = genome.root
    info = {}   # path -> (position, rotation)
    placed_centers = []

    root_rot = _R_SPIN[root.orientation % 4]
    root_pos = np.array([0.0, 0.0, 0.5])
    queue = [((), root, root_pos, root_rot)]
    expressed[()] = True
    info[()] = (root_pos, root_rot)
    placed_centers.append(root_pos)

    while queue:
        next_queue = []
        for path, gene, pos, rot in queue:
            for face in FACE_ORDER:
                if face not in gene.children:
                    continue
                child = gene.children[face]
                cpos = pos + rot @ _FACE_NORMAL[face]
                crot = rot @ _R_FACE[face] @ _R_SPIN[child.orientation % 4]
                cpath = path + (face,)
                if _collides(cpos, placed_centers):
                    continue  # child and its whole subtree stay unexpressed
                expressed[cpath] = True
                info[cpath] = (cpos, crot)
                placed_centers.append(cpos)
                next_queue.append((cpath, child, cpos, crot))
        queue = next_queue

    placements = []
    index_of = {}

    def walk(path, gene):
        if not expressed[path]:
            return
        pos, rot = info[path]
        parent = index_of[path[:-1]] if path else None
        index_of[path] = len(placements)
        placements.append(Placement(path, gene, pos, rot, parent, len(path)))
        for face in FACE_ORDER:
            if face in gene.children:
                walk(path + (face,), gene.children[face])

    walk((), root)
    return BodyPlan(placements, expressed, genome)


def _collides(pos, placed_centers):
    # shrunk boxes: overlap iff every center delta is below the shrunk edge
    for c in placed_centers:
        d = np.abs(pos - c)
        if d[0] < SHRINK and d[1] < SHRINK and d[2] < SHRINK:
            return True
    # ground: shrunk box bottom below the plane
    if pos[2] - 0.5 * SHRINK < -1e-9:
        return True
    return False


def depth_first_order(plan: BodyPlan) -> list:
    """Expressed modules in pre-order (root first, children Top/Left/Right)."""
    return list(plan.placements)


# Morphology mutation: per module, each event kind fires with probability
# (morph_rate / module_count_total) * factor. Factors sum to 1 and bias adds.
MORPH_EVENT_MIX = (
    ("add", 0.35),
    ("remove", 0.25),
    ("angle", 0.25),
    ("duplicate", 0.15),
)


def inherit_child_gene(parent: ModuleGene) -> ModuleGene:
    """Fresh child module initialized with the parent's control record."""
    return ModuleGene(orientation=0,
                      controller_slot=parent.controller_slot,
                      local_control=copy.deepcopy(parent.local_control))


def mutate_morphology(genome: MorphGenome, morph_rate: float,
                      rng: np.random.Generator,
                      counter: dict | None = None) -> MorphGenome:
    """Return a mutated copy of the genome. morph_rate 0 is an exact copy."""
    if morph_rate < 0:
        raise ValueError("morph_rate must be >= 0")
    out = genome.clone()
    if morph_rate == 0:
        return out
    n_total = count_total(out)
    p_module = min(1.0, morph_rate / n_total)
    modules = [(path, g) for path, g in iter_modules(out)]
    for path, g in modules:
        for kind, factor in MORPH_EVENT_MIX:
            if rng.random() >= p_module * factor:
                continue
            if counter is not None:
                counter[kind] = counter.get(kind, 0) + 1
            if kind == "add":
                free = [f for f in FACE_ORDER if f not in g.children]
                if free:
                    face = free[rng.integers(len(free))]
                    child = inherit_child_gene(g)
                    child.orientation = int(rng.integers(4))
                    g.children[face] = child
            elif kind == "remove":
                occupied = [f for f in FACE_ORDER if f in g.children]
                if occupied:
                    del g.children[occupied[rng.integers(len(occupied))]]
            elif kind == "angle":
                g.orientation = int(rng.integers(4))
            elif kind == "duplicate":
                occupied = [f for f in FACE_ORDER if f in g.children]
                free = [f for f in FACE_ORDER if f not in g.children]
                if occupied and free:
                    src = occupied[rng.integers(len(occupied))]
                    dst = free[rng.integers(len(free))]
                    g.children[dst] = copy.deepcopy(g.children[src])
    return out


def _gene_to_dict(g: ModuleGene) -> dict:
    d = {"orientation": g.orientation, "controller_slot": g.controller_slot}
    if g.local_control is not None:
        lc = g.local_control
        if isinstance(lc, CtrnnGenome):
            d["local_control"] = {"type": "ctrnn", **genome_to_dict(lc)}
        else:  # SineParams-like record
            d["local_control"] = {"type": "sine", "amplitude": lc.amplitude,
                                  "phase": lc.phase, "offset": lc.offset}
    children = {}
    for face in FACE_ORDER:
        if face in g.children:
            children[face.value] = _gene_to_dict(g.children[face])
    if children:
        d["children"] = children
    return d


def _gene_from_dict(d: dict) -> ModuleGene:
    lc = None
    if "local_control" in d:
        ld = dict(d["local_control"])
        kind = ld.pop("type")
        if kind == "ctrnn":
            lc = genome_from_dict(ld)
        else:
            from .controllers import SineParams
            lc = SineParams(ld["amplitude"], ld["phase"], ld["offset"])
    g = ModuleGene(orientation=d["orientation"],
                   controller_slot=d.get("controller_slot", 0),
                   local_control=lc)
    for face_name, cd in d.get("children", {}).items():
        g.children[Face(face_name)] = _gene_from_dict(cd)
    return g


def morph_to_dict(genome: MorphGenome) -> dict:
    return _gene_to_dict(genome.root)


def morph_from_dict(d: dict) -> MorphGenome:
    return MorphGenome(_gene_from_dict(d))


def morph_to_json(genome: MorphGenome) -> str:
    return json.dumps(morph_to_dict(genome), sort_keys=True)


def morph_from_json(text: str) -> MorphGenome:
    return morph_from_dict(json.loads(text))
