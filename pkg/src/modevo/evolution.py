"""Evolutionary loop: tournament-4 selection, generational replacement,
mutation-only variation, plus the mutation-rate sweep harness and
progression metric collection.

Reproducibility contract: every random stream is derived from the run seed
by hashing (seed, generation, index) through numpy SeedSequence, and
evaluation results are merged in individual-index order, so the number of
parallel workers never changes the outcome.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import controllers, morphology
from .controllers import ControllerGenome, ControllerKind
from .errors import ConfigError, ContractError
from .evaluation import EvalConfig, evaluate
from .morphology import MorphGenome, count_total

# Mutation rates chosen per controller kind after the original sweep.
DEFAULT_RATES = {
    ControllerKind.SINE: (0.32, 0.64),
    ControllerKind.CENTRALIZED: (0.24, 0.16),
    ControllerKind.DECENTRALIZED: (0.24, 0.48),
    ControllerKind.COPY: (0.32, 0.08),
}


@dataclass
class Individual:
    morph: MorphGenome
    controller: ControllerGenome
    fitness: float | None = None
    expressed_count: int | None = None
    parent_fitness: float | None = None
    parent_expressed_count: int | None = None


@dataclass
class EvoConfig:
    controller: ControllerKind = ControllerKind.SINE
    population_size: int = 50
    generations: int = 50
    tournament_size: int = 4
    morph_rate: float | None = None     # None -> kind default
    control_rate: float | None = None
    growth_p: float = morphology.DEFAULT_GROWTH_P
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.controller = ControllerKind(self.controller)
        if self.tournament_size > self.population_size:
            raise ConfigError("tournament_size must be <= population_size")
        if self.tournament_size < 1 or self.population_size < 1:
            raise ConfigError("population and tournament sizes must be >= 1")
        defaults = DEFAULT_RATES[self.controller]
        if self.morph_rate is None:
            self.morph_rate = defaults[0]
        if self.control_rate is None:
            self.control_rate = defaults[1]
        if self.morph_rate < 0 or self.control_rate < 0:
            raise ConfigError("mutation rates must be >= 0")


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_so_far: float
    best_expressed: int
    best_so_far_expressed: int
    beneficial_morph_changes: int
    evaluations: int


@dataclass
class RunStats:
    generations: list = field(default_factory=list)  # GenerationStats rows
    best_individual: Individual | None = None

    @property
    def total_evaluations(self) -> int:
        return self.generations[-1].evaluations if self.generations else 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "best_fitness", "mean_fitness",
                             "best_so_far", "best_expressed",
                             "best_so_far_expressed",
                             "beneficial_morph_changes", "evaluations"])
            for g in self.generations:
                writer.writerow([g.generation, repr(g.best_fitness),
                                 repr(g.mean_fitness), repr(g.best_so_far),
                                 g.best_expressed, g.best_so_far_expressed,
                                 g.beneficial_morph_changes, g.evaluations])

    @staticmethod
    def read_csv(path) -> list:
        """Rows as dicts with numeric fields parsed."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append({
                    "generation": int(row["generation"]),
                    "best_fitness": float(row["best_fitness"]),
                    "mean_fitness": float(row["mean_fitness"]),
                    "best_so_far": float(row["best_so_far"]),
                    "best_expressed": int(row["best_expressed"]),
                    "best_so_far_expressed": int(row["best_so_far_expressed"]),
                    "beneficial_morph_changes": int(row["beneficial_morph_changes"]),
                    "evaluations": int(row["evaluations"]),
                })
        return rows


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


def init_population(cfg: EvoConfig, rng: np.random.Generator | None = None) -> list:
    """population_size unevaluated individuals with random morphologies and
    freshly initialized controllers sized to each morphology."""
    rng = rng or _rng(cfg.seed, 0xA11CE)
    pop = []
    for _ in range(cfg.population_size):
        morph = morphology.random_genome(rng, cfg.growth_p)
        ctrl = controllers.new_controller(cfg.controller, morph, rng)
        pop.append(Individual(morph, ctrl))
    return pop


def tournament_select(pop: list, k: int, rng: np.random.Generator) -> Individual:
    """Draw k individuals uniformly with replacement; return the fittest,
    ties broken by lowest population index."""
    n = len(pop)
    best_idx = None
    for _ in range(k):
        i = int(rng.integers(n))
        ind = pop[i]
        if ind.fitness is None:
            raise ContractError("tournament over an unevaluated individual")
        if (best_idx is None or ind.fitness > pop[best_idx].fitness
                or (ind.fitness == pop[best_idx].fitness and i < best_idx)):
            best_idx = i
    return pop[best_idx]


def make_child(parent: Individual, cfg: EvoConfig,
               rng: np.random.Generator) -> Individual:
    """Mutation-only variation: morphology first (new modules inherit their
    parent module's control record), then the controller."""
    morph = morphology.mutate_morphology(parent.morph, cfg.morph_rate, rng)
    ctrl, morph = controllers.mutate_controller(parent.controller,
                                                cfg.control_rate, morph, rng)
    return Individual(morph, ctrl,
                      parent_fitness=parent.fitness,
                      parent_expressed_count=parent.expressed_count)


def next_generation(pop: list, cfg: EvoConfig, generation: int) -> list:
    """Full generational replacement: exactly population_size children of
    tournament-selected parents; no elites survive."""
    sel_rng = _rng(cfg.seed, generation, 0x5E1EC7)
    children = []
    for i in range(cfg.population_size):
        parent = tournament_select(pop, cfg.tournament_size, sel_rng)
        child_rng = _rng(cfg.seed, generation, i)
        children.append(make_child(parent, cfg, child_rng))
    return children


def _evaluate_one(payload):
    morph_d, ctrl_d, cfg = payload
    morph = morphology.morph_from_dict(morph_d)
    ctrl = controllers.controller_from_dict(ctrl_d)
    return evaluate(morph, ctrl, cfg)


def evaluate_population(pop: list, eval_cfg: EvalConfig, jobs: int = 1) -> None:
    """Fill in fitness/expressed_count for every individual, preserving
    index order regardless of worker count."""
    if jobs <= 1:
        results = [evaluate(ind.morph, ind.controller, eval_cfg) for ind in pop]
    else:
        payloads = [(morphology.morph_to_dict(ind.morph),
                     controllers.controller_to_dict(ind.controller), eval_cfg)
                    for ind in pop]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_one, payloads))
    for ind, res in zip(pop, results):
        ind.fitness = res.fitness
        ind.expressed_count = res.expressed_count


def run_evolution(cfg: EvoConfig, eval_cfg: EvalConfig | None = None,
                  progress=None) -> RunStats:
    """Init -> evaluate -> (select/mutate -> evaluate -> record) loop.
    Deterministic given cfg.seed; cfg.jobs only parallelizes evaluation."""
    eval_cfg = eval_cfg or EvalConfig()
    stats = RunStats()
    pop = init_population(cfg)
    evaluate_population(pop, eval_cfg, cfg.jobs)
    evaluations = cfg.population_size
    best_so_far = None
    for generation in range(cfg.generations + 1):
        if generation > 0:
            pop = next_generation(pop, cfg, generation)
            evaluate_population(pop, eval_cfg, cfg.jobs)
            evaluations += cfg.population_size
        fits = [ind.fitness for ind in pop]
        best_idx = max(range(len(pop)), key=lambda i: (fits[i], -i))
        best = pop[best_idx]
        if best_so_far is None or best.fitness > best_so_far.fitness:
            best_so_far = best
        beneficial = sum(
            1 for ind in pop
            if ind.parent_fitness is not None
            and ind.expressed_count != ind.parent_expressed_count
            and ind.fitness > ind.parent_fitness)
        stats.generations.append(GenerationStats(
            generation=generation,
            best_fitness=best.fitness,
            mean_fitness=float(np.mean(fits)),
            best_so_far=best_so_far.fitness,
            best_expressed=best.expressed_count,
            best_so_far_expressed=best_so_far.expressed_count,
            beneficial_morph_changes=beneficial,
            evaluations=evaluations,
        ))
        if progress is not None:
            progress(stats.generations[-1])
    stats.best_individual = best_so_far
    return stats


# Divided-rate sweeps default to 8 geometric values ending at 0.82.
def default_sweep_values(n: int = 8, top: float = 0.82, ratio: float = 0.5) -> list:
    return [top * ratio ** (n - 1 - i) for i in range(n)]


@dataclass
class SweepCell:
    morph_rate: float
    control_rate: float
    final_bests: list
    final_means: list

    @property
    def mean_final_best(self) -> float:
        return float(np.mean(self.final_bests))

    @property
    def mean_final_population(self) -> float:
        return float(np.mean(self.final_means))


def grid_sweep(base: EvoConfig, morph_values, control_values,
               repeats: int = 4, eval_cfg: EvalConfig | None = None,
               progress=None) -> list:
    """Run every (morph_rate, control_rate) pair `repeats` times and collect
    final best-of-run and final population-mean fitness per cell."""
    cells = []
    for mi, mr in enumerate(morph_values):
        for ci, cr in enumerate(control_values):
            bests, means = [], []
            for rep in range(repeats):
                cfg = EvoConfig(controller=base.controller,
                                population_size=base.population_size,
                                generations=base.generations,
                                tournament_size=base.tournament_size,
                                morph_rate=mr, control_rate=cr,
                                growth_p=base.growth_p,
                                seed=int(np.random.SeedSequence(
                                    (base.seed, mi, ci, rep)).generate_state(1)[0]),
                                jobs=base.jobs)
                stats = run_evolution(cfg, eval_cfg)
                last = stats.generations[-1]
                bests.append(last.best_so_far)
                means.append(last.mean_fitness)
                if progress is not None:
                    progress(mr, cr, rep, last.best_so_far)
            cells.append(SweepCell(mr, cr, bests, means))
    return cells


def write_sweep_csvs(cells: list, out_dir) -> None:
    import os
    with open(os.path.join(out_dir, "sweep_table.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["morph_rate", "control_rate", "mean_final_best",
                         "mean_final_population", "repeats"])
        for c in cells:
            writer.writerow([repr(c.morph_rate), repr(c.control_rate),
                             repr(c.mean_final_best),
                             repr(c.mean_final_population), len(c.final_bests)])
    by_morph, by_control = {}, {}
    for c in cells:
        by_morph.setdefault(c.morph_rate, []).extend(c.final_bests)
        by_control.setdefault(c.control_rate, []).extend(c.final_bests)
    with open(os.path.join(out_dir, "collapsed_rows.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["morph_rate", "mean_final_best"])
        for mr in sorted(by_morph):
            writer.writerow([repr(mr), repr(float(np.mean(by_morph[mr])))])
    with open(os.path.join(out_dir, "collapsed_cols.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["control_rate", "mean_final_best"])
        for cr in sorted(by_control):
            writer.writerow([repr(cr), repr(float(np.mean(by_control[cr])))])
