"""Nonparametric comparison harness: two-sided Mann-Whitney U with
tie-corrected normal approximation or exact enumeration, Bonferroni
correction, and CSV emission for progression/figure data.

The exact path is used whenever the smaller sample has fewer than 8
observations; it enumerates the null distribution of the rank sum by
dynamic programming over doubled ranks (exact under ties as well).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

EXACT_MIN_SAMPLE = 8  # below this, exact enumeration replaces the normal approx


def _average_ranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks, n1: int, u_obs: float) -> float:
    """P(|U - mu| >= |u_obs - mu|) under the permutation null, via DP over
    the doubled (hence integral) pooled ranks."""
    total = len(doubled_ranks)
    n2 = total - n1
    max_sum = int(sum(sorted(doubled_ranks)[-n1:]))
    # ways[j][s]: subsets of size j with doubled-rank sum s
    ways = np.zeros((n1 + 1, max_sum + 1), dtype=float)
    ways[0, 0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        for j in range(min(n1, total), 0, -1):
            ways[j, r:] += ways[j - 1, :max_sum + 1 - r]
    counts = ways[n1]
    denom = counts.sum()
    mu2 = n1 * n2  # doubled U mean: 2 * n1*n2/2
    u2_obs = 2.0 * u_obs
    dev = abs(u2_obs - mu2)
    p = 0.0
    for s2 in range(max_sum + 1):
        if counts[s2] == 0:
            continue
        u2 = s2 - n1 * (n1 + 1)  # doubled U from doubled rank sum
        if abs(u2 - mu2) >= dev - 1e-9:
            p += counts[s2]
    return min(1.0, p / denom)


def mann_whitney_u_two_sided(a, b):
    """Returns (U, p) where U is the statistic of the first sample. Average
    ranks for ties; exact enumeration when min(|a|, |b|) < 8, otherwise a
    tie-corrected normal approximation with continuity correction."""
    a = list(a)
    b = list(b)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise ContractError("both samples must be non-empty")
    pooled = np.asarray(a + b, dtype=float)
    ranks = _average_ranks(pooled)
    r1 = float(ranks[:n1].sum())
    u = r1 - n1 * (n1 + 1) / 2.0
    if min(n1, n2) < EXACT_MIN_SAMPLE:
        doubled = np.rint(2.0 * ranks).astype(int)
        return u, _exact_two_sided_p(doubled, n1, u)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts ** 3) - tie_counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    p = math.erfc(z / math.sqrt(2.0))
    return u, min(1.0, p)


def bonferroni_alpha(alpha: float, m: int) -> float:
    if m < 1:
        raise ContractError("number of tests must be >= 1")
    return alpha / m


@dataclass
class ComparisonRow:
    checkpoint: int
    controller_a: str
    controller_b: str
    u_statistic: float
    p_value: float
    adjusted_alpha: float
    significant: bool


def compare_controllers(results: dict, checkpoints, alpha: float = 0.05) -> list:
    """All pairwise two-sided tests at every checkpoint, Bonferroni-corrected
    over pairs x checkpoints.

    `results` maps controller name -> {checkpoint: list of per-run fitness}.
    """
    names = sorted(results)
    if len(names) < 2:
        raise ContractError("need at least two controllers to compare")
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    m = len(pairs) * len(checkpoints)
    adj = bonferroni_alpha(alpha, m)
    rows = []
    for cp in checkpoints:
        for a, b in pairs:
            u, p = mann_whitney_u_two_sided(results[a][cp], results[b][cp])
            rows.append(ComparisonRow(cp, a, b, u, p, adj, p < adj))
    return rows


def write_comparison_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint", "controller_a", "controller_b",
                         "u_statistic", "p_value", "adjusted_alpha",
                         "significant"])
        for r in rows:
            writer.writerow([r.checkpoint, r.controller_a, r.controller_b,
                             repr(r.u_statistic), repr(r.p_value),
                             repr(r.adjusted_alpha), int(r.significant)])


MORPH_CHANGE_INTERVAL = 100  # generations per reporting bucket


def morph_change_intervals(runs: list) -> list:
    """Per-run beneficial-event sums over consecutive 100-generation
    intervals. `runs` is a list of per-run row lists (RunStats.read_csv)."""
    n_gens = max(row["generation"] for rows in runs for row in rows) + 1
    n_intervals = max(1, math.ceil(n_gens / MORPH_CHANGE_INTERVAL))
    table = []
    for rows in runs:
        sums = [0] * n_intervals
        for row in rows:
            sums[row["generation"] // MORPH_CHANGE_INTERVAL] += \
                row["beneficial_morph_changes"]
        table.append(sums)
    return table


def emit_figures(runs: list, out_dir) -> None:
    """Write the progression CSVs consumed by external plotting tools.

    runs: list of per-run generation rows (as from RunStats.read_csv); all
    runs must cover the same generation range.
    """
    if not runs:
        raise ContractError("need at least one run")
    os.makedirs(out_dir, exist_ok=True)
    n_runs = len(runs)
    n_gens = len(runs[0])

    with open(os.path.join(out_dir, "fitness_progression.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "mean_best", "stderr"])
        for g in range(n_gens):
            vals = np.array([rows[g]["best_fitness"] for rows in runs])
            stderr = float(vals.std(ddof=1) / math.sqrt(n_runs)) if n_runs > 1 else 0.0
            writer.writerow([runs[0][g]["generation"], repr(float(vals.mean())),
                             repr(stderr)])

    with open(os.path.join(out_dir, "module_progression.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "mean_modules", "p25", "p50", "p75"])
        for g in range(n_gens):
            vals = np.array([rows[g]["best_so_far_expressed"] for rows in runs],
                            dtype=float)
            p25, p50, p75 = np.percentile(vals, [25, 50, 75])
            writer.writerow([runs[0][g]["generation"], repr(float(vals.mean())),
                             repr(float(p25)), repr(float(p50)), repr(float(p75))])

    table = morph_change_intervals(runs)
    with open(os.path.join(out_dir, "morph_changes.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["interval_start", "interval_end", "p25", "p50", "p75"])
        for k in range(len(table[0])):
            vals = np.array([sums[k] for sums in table], dtype=float)
            p25, p50, p75 = np.percentile(vals, [25, 50, 75])
            writer.writerow([k * MORPH_CHANGE_INTERVAL,
                             (k + 1) * MORPH_CHANGE_INTERVAL - 1,
                             repr(float(p25)), repr(float(p50)),
                             repr(float(p75))])

    with open(os.path.join(out_dir, "final_distribution.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "final_best"])
        for i, rows in enumerate(runs):
            writer.writerow([i, repr(rows[-1]["best_so_far"])])
