"""Command-line front door.

Subcommands: run, sweep, eval, compare, figures, replay.
Exit codes: 0 success, 2 config error, 3 contract violation,
4 simulation divergence (eval/replay only).
"""
from __future__ import annotations

import json
import os
import sys

import click

from . import controllers, evolution, morphology, stats
from .config import load_config_file, parse_run_config, write_manifest
from .errors import ConfigError, ContractError, SimulationDiverged
from .evaluation import evaluate

EXIT_CONFIG = 2
EXIT_CONTRACT = 3
EXIT_DIVERGED = 4


def _fail(exc):
    if isinstance(exc, ConfigError):
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if isinstance(exc, ContractError):
        click.echo(f"contract violation: {exc}", err=True)
        sys.exit(EXIT_CONTRACT)
    if isinstance(exc, SimulationDiverged):
        click.echo(f"simulation diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    raise exc


@click.group()
def main():
    """Co-evolution of morphology and control for chain-type modular robots."""


def _load_run(config_path, seed, jobs, allow_sweep=False):
    doc = load_config_file(config_path) if config_path else {}
    if seed is not None:
        doc["seed"] = seed
    if jobs is not None:
        doc["jobs"] = jobs
    parsed = parse_run_config(doc, allow_sweep=allow_sweep)
    return doc, parsed


def _save_individual(path, ind):
    payload = {"morph": morphology.morph_to_dict(ind.morph),
               "controller": controllers.controller_to_dict(ind.controller),
               "fitness": ind.fitness}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def _load_individual(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
        return (morphology.morph_from_dict(doc["morph"]),
                controllers.controller_from_dict(doc["controller"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read individual {path}: {exc}") from exc


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--quiet", is_flag=True)
def run(config_path, out_dir, seed, jobs, quiet):
    """Run one evolutionary optimization and persist its results."""
    try:
        doc, (evo_cfg, eval_cfg) = _load_run(config_path, seed, jobs)
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "individuals"), exist_ok=True)

        def progress(g):
            if not quiet:
                click.echo(f"gen {g.generation:4d}  best {g.best_fitness:8.3f}"
                           f"  best-so-far {g.best_so_far:8.3f}")

        result = evolution.run_evolution(evo_cfg, eval_cfg, progress=progress)
        result.write_csv(os.path.join(out_dir, "run.csv"))
        _save_individual(os.path.join(out_dir, "individuals", "best.json"),
                         result.best_individual)
        write_manifest(out_dir, doc, evo_cfg.seed)
    except (ConfigError, ContractError) as exc:
        _fail(exc)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--quiet", is_flag=True)
def sweep(config_path, out_dir, seed, jobs, quiet):
    """Mutation-rate grid sweep with repeats; writes the grid and collapses."""
    try:
        doc, (evo_cfg, eval_cfg, sw) = _load_run(config_path, seed, jobs,
                                                 allow_sweep=True)
        os.makedirs(out_dir, exist_ok=True)

        def progress(mr, cr, rep, best):
            if not quiet:
                click.echo(f"morph {mr:.3f} control {cr:.3f} rep {rep}"
                           f" -> best {best:.3f}")

        cells = evolution.grid_sweep(evo_cfg, sw["morph_values"],
                                     sw["control_values"], sw["repeats"],
                                     eval_cfg, progress=progress)
        evolution.write_sweep_csvs(cells, out_dir)
        write_manifest(out_dir, doc, evo_cfg.seed)
    except (ConfigError, ContractError) as exc:
        _fail(exc)


@main.command("eval")
@click.option("--individual", "individual_path", type=click.Path(exists=True),
              required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--trace", "trace_path", type=click.Path(), default=None)
def eval_cmd(individual_path, config_path, trace_path):
    """Evaluate one individual file; prints the result as JSON."""
    try:
        doc = load_config_file(config_path) if config_path else {}
        _, eval_cfg = parse_run_config(doc)
        morph, ctrl = _load_individual(individual_path)
        result = evaluate(morph, ctrl, eval_cfg, trace_path=trace_path)
        click.echo(json.dumps(result.to_dict(), sort_keys=True))
        if result.diverged:
            sys.exit(EXIT_DIVERGED)
    except (ConfigError, ContractError, SimulationDiverged) as exc:
        _fail(exc)


@main.command()
@click.option("--individual", "individual_path", type=click.Path(exists=True),
              required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--trace", "trace_path", type=click.Path(), required=True)
@click.pass_context
def replay(ctx, individual_path, config_path, trace_path):
    """Re-evaluate an individual and dump its trajectory CSV."""
    ctx.invoke(eval_cmd, individual_path=individual_path,
               config_path=config_path, trace_path=trace_path)


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True),
              required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def compare(input_path, out_path):
    """Pairwise Mann-Whitney comparisons with Bonferroni correction.

    Input JSON: {"alpha": 0.05, "checkpoints": [50, 500],
                 "series": {name: {"50": [...], "500": [...]}}}
    """
    try:
        try:
            with open(input_path) as fh:
                doc = json.load(fh)
            alpha = doc.get("alpha", 0.05)
            checkpoints = doc["checkpoints"]
            series = {name: {cp: vals[str(cp)] for cp in checkpoints}
                      for name, vals in doc["series"].items()}
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad comparison input: {exc}") from exc
        rows = stats.compare_controllers(series, checkpoints, alpha)
        stats.write_comparison_csv(rows, out_path)
        for r in rows:
            verdict = "significant" if r.significant else "n.s."
            click.echo(f"gen {r.checkpoint}: {r.controller_a} vs "
                       f"{r.controller_b}  U={r.u_statistic:.1f} "
                       f"p={r.p_value:.5g} ({verdict})")
    except (ConfigError, ContractError) as exc:
        _fail(exc)


@main.command()
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True),
                required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def figures(run_dirs, out_dir):
    """Aggregate run.csv files into the figure-data CSVs."""
    try:
        runs = []
        for d in run_dirs:
            path = os.path.join(d, "run.csv")
            if not os.path.exists(path):
                raise ConfigError(f"no run.csv in {d}")
            runs.append(evolution.RunStats.read_csv(path))
        stats.emit_figures(runs, out_dir)
    except (ConfigError, ContractError) as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
