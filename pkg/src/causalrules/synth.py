"""Synthetic recovery benchmark.

Generates datasets with a planted rule-set subgroup where treatment is the
only thing that helps, runs the full mining + search pipeline on a train
split, and measures how closely (and how quickly) the best-so-far model's
subgroup matches the planted one on held-out rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from time import perf_counter
from typing import Iterable

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset, RawTable, binarize, split_indices
from .errors import DataError, EmptyPoolError
from .logistic import sigmoid
from .mining import CandidatePool, Rule, Screen, build_pool, fp_growth, rule_coverage_mask
from .model import Hyperparams
from .search import SearchParams, search
from .vtwins import ForestConfig, estimate_z, fit_forest


@dataclass
class SyntheticSpec:
    n: int = 2000
    J: int = 50
    n_true_rules: int = 5
    pool_size_m: int = 5000
    seed: int = 0
    bins_per_numeric: int = 3
    min_support: float = 0.05
    max_rule_length: int = 3
    coverage_range: tuple[float, float] = (0.05, 0.50)

    def __post_init__(self):
        if self.n < 1 or self.J < 1:
            raise ValueError("n and J must be >= 1")
        if self.n_true_rules > self.pool_size_m:
            raise ValueError("n_true_rules cannot exceed pool_size_m")


@dataclass
class SyntheticTruth:
    """The planted subgroup: its rules, full-population coverage, and both
    potential outcomes."""

    rules: list[Rule]
    coverage: np.ndarray
    y0: np.ndarray
    y1: np.ndarray


@dataclass
class PriorSettings:
    """Per-experiment prior template; beta scales with each length pool's size."""

    alpha: float = 1.0
    beta_scale: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0


def rule_set_coverage(rules: Iterable[Rule], X: np.ndarray) -> np.ndarray:
    masks = [rule_coverage_mask(r.condition_column_ids, X) for r in rules]
    if not masks:
        return np.zeros(X.shape[0], dtype=bool)
    return np.any(masks, axis=0)


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SyntheticTruth]:
    """Plant a rule-set subgroup in random data.

    Features are standard normals (then quantile-binarized), treatment is a
    fair coin, and the control outcome thresholds a random linear score.
    The true rules are drawn from the itemsets mined over the binarized
    features; treatment flips the outcome to 1 inside the planted subgroup
    and does nothing elsewhere.
    """
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((spec.n, spec.J))
    T = rng.integers(0, 2, size=spec.n).astype(np.int8)
    v = rng.standard_normal(spec.J + 1)
    y0 = (sigmoid(v[0] + raw @ v[1:]) >= 0.5).astype(np.int8)

    names = [f"x{j}" for j in range(spec.J)]
    table = RawTable(
        column_names=names + ["T", "y"],
        columns={**{names[j]: raw[:, j] for j in range(spec.J)},
                 "T": T, "y": np.zeros(spec.n, dtype=np.int8)},
        n_rows=spec.n,
        treatment="T",
        outcome="y",
        numeric=tuple(names),
        categorical=(),
    )
    shell = binarize(table, spec.bins_per_numeric)

    itemsets = fp_growth(shell.features() != 0, spec.min_support, spec.max_rule_length)
    candidates = sorted(itemsets)
    if len(candidates) < spec.n_true_rules:
        raise DataError(
            f"mined only {len(candidates)} rules; need {spec.n_true_rules} "
            "(raise n or lower min_support)"
        )

    lo, hi = spec.coverage_range
    for _ in range(1000):
        pick = rng.choice(len(candidates), size=spec.n_true_rules, replace=False)
        rules = [Rule(candidates[i]) for i in sorted(pick)]
        cov = rule_set_coverage(rules, shell.X)
        if lo <= cov.mean() <= hi:
            break
    else:
        raise DataError("could not draw a true rule set inside the coverage range")

    y1 = np.where(cov, 1, y0).astype(np.int8)
    y = np.where(T == 1, y1, y0).astype(np.int8)
    ds = Dataset(
        X=shell.X,
        T=T,
        y=y,
        conditions=shell.conditions,
        attribute_names=shell.attribute_names,
    )
    return ds, SyntheticTruth(rules=rules, coverage=cov, y0=y0, y1=y1)


def recovery_error(found: Iterable[Rule], true: Iterable[Rule], X: np.ndarray) -> float:
    """Fraction of rows where the two rule sets disagree on membership."""
    return float(np.mean(rule_set_coverage(found, X) != rule_set_coverage(true, X)))


def mine_pool_for(
    train: Dataset,
    seed: int,
    min_support: float,
    max_rule_length: int,
    top_m: int | None,
    validity_alpha: float | None,
    forest: ForestConfig | None = None,
) -> CandidatePool:
    """Virtual-twins labeling plus mining and screening on a training split."""
    fc = forest if forest is not None else ForestConfig(seed=seed)
    est_treated = fit_forest(train, train.T == 1, fc)
    est_control = fit_forest(train, train.T == 0, fc)
    zl = estimate_z(train, est_treated, est_control)
    z_rows = np.flatnonzero(zl.z == 1)
    if z_rows.size == 0:
        raise EmptyPoolError("no rows with positive estimated effect to mine")
    itemsets = fp_growth(train.features()[z_rows] != 0, min_support, max_rule_length)
    return build_pool(
        itemsets, train, zl, Screen(alpha=validity_alpha, top_m=top_m), L=max_rule_length
    )


def _one_repeat(
    spec: SyntheticSpec, prior: PriorSettings, params: SearchParams, seed: int
) -> tuple[np.ndarray, float]:
    start = perf_counter()
    ds, truth = generate_synthetic(replace(spec, seed=seed))
    train_idx, test_idx = split_indices(ds.n, (0.7, 0.3), seed=seed)
    train = ds.subset(train_idx)

    pool = mine_pool_for(
        train,
        seed=seed,
        min_support=spec.min_support,
        max_rule_length=spec.max_rule_length,
        top_m=spec.pool_size_m,
        validity_alpha=None,  # the synthetic protocol screens by support and effect only
    )
    H = Hyperparams.for_pool(
        pool.sizes, alpha=prior.alpha, beta_scale=prior.beta_scale, mu=prior.mu, sigma=prior.sigma
    )
    _, trace = search(pool, train, H, replace(params, seed=seed))

    X_test = ds.X[test_idx]
    true_test = truth.coverage[test_idx]
    errors = np.empty(params.n_iter, dtype=np.float64)
    snapshot_err = []
    for _, ids in trace.best_history:
        found = [pool.rules[i] for i in ids]
        snapshot_err.append(float(np.mean(rule_set_coverage(found, X_test) != true_test)))
    times = [t for t, _ in trace.best_history]
    ptr = 0
    for t in range(params.n_iter):
        while ptr + 1 < len(times) and times[ptr + 1] <= t:
            ptr += 1
        errors[t] = snapshot_err[ptr]
    return errors, perf_counter() - start


@dataclass
class RecoveryResult:
    errors: np.ndarray  # (n_repeats, n_iter) best-so-far error after each iteration
    elapsed: np.ndarray  # wall seconds per repeat
    error_threshold: float = 0.05

    @property
    def n_repeats(self) -> int:
        return self.errors.shape[0]

    @property
    def n_iter(self) -> int:
        return self.errors.shape[1]

    def mean_curve(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    def std_curve(self) -> np.ndarray:
        return self.errors.std(axis=0)

    def summary(self) -> dict:
        final = self.errors[:, -1]
        hits = [
            int(np.argmax(row < self.error_threshold))
            for row in self.errors
            if bool((row < self.error_threshold).any())
        ]
        return {
            "n_repeats": self.n_repeats,
            "n_iterations": self.n_iter,
            "mean_final_error": float(final.mean()),
            "std_final_error": float(final.std()),
            "error_threshold": self.error_threshold,
            "n_repeats_reaching_threshold": len(hits),
            "mean_iterations_to_threshold": float(np.mean(hits)) if hits else None,
        }


def run_recovery_experiment(
    spec: SyntheticSpec,
    prior: PriorSettings | None = None,
    params: SearchParams | None = None,
    n_repeats: int = 20,
    n_jobs: int = 1,
) -> RecoveryResult:
    """Repeat the plant-and-recover experiment; repeat i uses seed base+i.

    Each repeat generates fresh data, holds out 30 percent, mines its own
    pool, searches, and records the held-out membership error of the
    best-so-far model after every iteration.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    prior = prior or PriorSettings()
    params = params or SearchParams()
    seeds = [spec.seed + i for i in range(n_repeats)]
    if n_jobs == 1:
        results = [_one_repeat(spec, prior, params, s) for s in seeds]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_repeat)(spec, prior, params, s) for s in seeds
        )
    errors = np.stack([r[0] for r in results])
    elapsed = np.array([r[1] for r in results])
    return RecoveryResult(errors=errors, elapsed=elapsed)


def write_curves_csv(result: RecoveryResult, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repeat", "iteration", "error", "elapsed_seconds"])
        for r in range(result.n_repeats):
            for t in range(result.n_iter):
                writer.writerow([r, t, repr(float(result.errors[r, t])), repr(float(result.elapsed[r]))])


def write_summary_json(result: RecoveryResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
