"""Command-line front end: mine, fit, sweep, synth.

Configuration is a flat key set read from TOML (or JSON), with the common
CLI flags overriding file values. Every command is a pure function of
(config, input files, seed); outputs are refused when files already exist
unless --force is given.

Exit codes: 0 ok, 2 config error, 3 data error, 4 empty pool, 5 numerical
failure.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np
from joblib import Parallel, delayed

from .data import binarize, load_csv, load_schema, split
from .errors import ConfigError, DataError, EmptyPoolError, NumericalError
from .mining import pool_audit
from .model import Hyperparams, model_to_dict
from .search import SearchParams, search
from .synth import (
    PriorSettings,
    SyntheticSpec,
    mine_pool_for,
    rule_set_coverage,
    run_recovery_experiment,
    write_curves_csv,
    write_summary_json,
)
from .vtwins import ForestConfig, matched_ate

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_CODES = {ConfigError: 2, DataError: 3, EmptyPoolError: 4, NumericalError: 5}


@dataclass
class RunConfig:
    """Flat run settings; every field except the data paths has a default."""

    data: str | None = None
    schema: str | None = None
    out: str = "crs_out"
    seed: int = 0
    force: bool = False
    bins_per_numeric: int = 3
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    features_per_split: str | int = "sqrt"
    min_support: float = 0.05
    max_rule_length: int = 3
    validity_alpha: float = 0.05  # <= 0 disables the balance screen
    top_m: int = 5000
    prior_alpha: float = 1.0
    prior_beta_scale: float = 1.0
    prior_mu: float = 0.0
    prior_sigma: float = 1.0
    n_iter: int = 150
    t0: float = 1.0
    q_explore: float = 0.1
    bound_c: float = 0.0  # <= 0 selects the initial bound sum
    sweep_alpha: list = field(default_factory=lambda: [1.0])
    sweep_beta_scale: list = field(default_factory=lambda: [0.03, 0.1, 0.3, 1.0, 3.0])
    synth_n: int = 2000
    synth_j: int = 50
    synth_true_rules: int = 5
    synth_pool: int = 5000
    n_repeats: int = 20
    n_jobs: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        return cls(**values)


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file is not valid TOML: {e}") from e


def make_config(config_path: str | None, **overrides) -> RunConfig:
    values = load_config_file(config_path) if config_path else {}
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return RunConfig.from_dict(values)


def _prepare_outputs(cfg: RunConfig, names: list[str]) -> dict[str, Path]:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / name for name in names}
    existing = [str(p) for p in paths.values() if p.exists()]
    if existing and not cfg.force:
        raise ConfigError(f"output file(s) already exist (use --force): {existing}")
    return paths


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_splits(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("a data path is required (--data or the 'data' config key)")
    if not cfg.schema:
        raise ConfigError("a schema path is required (--schema or the 'schema' config key)")
    schema = load_schema(cfg.schema)
    table = load_csv(cfg.data, schema)
    ds = binarize(table, cfg.bins_per_numeric)
    train, val, test = split(ds, (cfg.train_frac, cfg.val_frac, cfg.test_frac), cfg.seed)
    return ds, train, val, test


def _mine(cfg: RunConfig, train):
    forest = ForestConfig(
        n_trees=cfg.n_trees,
        max_depth=cfg.max_depth,
        min_leaf=cfg.min_leaf,
        features_per_split=cfg.features_per_split,
        seed=cfg.seed,
    )
    alpha = cfg.validity_alpha if cfg.validity_alpha > 0 else None
    return mine_pool_for(
        train,
        seed=cfg.seed,
        min_support=cfg.min_support,
        max_rule_length=cfg.max_rule_length,
        top_m=cfg.top_m,
        validity_alpha=alpha,
        forest=forest,
    )


def _search_params(cfg: RunConfig) -> SearchParams:
    return SearchParams(
        n_iter=cfg.n_iter,
        T0=cfg.t0,
        q_explore=cfg.q_explore,
        C=cfg.bound_c if cfg.bound_c > 0 else None,
        seed=cfg.seed,
    )


def _fit_one(cfg: RunConfig, pool, train, prior_alpha: float, prior_beta_scale: float):
    H = Hyperparams.for_pool(
        pool.sizes,
        alpha=prior_alpha,
        beta_scale=prior_beta_scale,
        mu=cfg.prior_mu,
        sigma=cfg.prior_sigma,
    )
    best, trace = search(pool, train, H, _search_params(cfg))
    return best, trace, H


def _finite_or_none(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def _subgroup_stats(rules, eval_ds) -> dict:
    cov = rule_set_coverage(rules, eval_ds.X)
    rows = np.flatnonzero(cov)
    ate = None
    if rows.size and (eval_ds.T[rows] == 1).any() and (eval_ds.T[rows] == 0).any():
        ate = _finite_or_none(matched_ate(rows, eval_ds))
    baseline = None
    if (eval_ds.T == 1).any() and (eval_ds.T == 0).any():
        baseline = _finite_or_none(matched_ate(np.arange(eval_ds.n), eval_ds))
    return {
        "subgroup_size_fraction": float(cov.mean()),
        "subgroup_matched_ate": ate,
        "baseline_matched_ate": baseline,
    }


@click.group()
def main():
    """Learn small rule sets that mark subgroups with an elevated treatment effect."""


def _run(fn) -> None:
    try:
        fn()
    except tuple(EXIT_CODES) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CODES[type(e)])


def common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None, help="TOML or JSON config file")(fn)
    fn = click.option("--data", type=str, default=None, help="CSV data file")(fn)
    fn = click.option("--schema", type=str, default=None, help="JSON column-role schema")(fn)
    fn = click.option("--out", type=str, default=None, help="output directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="global seed")(fn)
    fn = click.option("--force", is_flag=True, default=False, help="overwrite existing outputs")(fn)
    return fn


@main.command()
@common_options
def mine(config_path, data, schema, out, seed, force):
    """Mine, screen, and rank candidate rules; write the pool audit."""

    def run():
        cfg = make_config(config_path, data=data, schema=schema, out=out, seed=seed,
                          force=force or None)
        paths = _prepare_outputs(cfg, ["pool.json"])
        _, train, _, _ = _load_splits(cfg)
        pool = _mine(cfg, train)
        _write_json(paths["pool.json"], pool_audit(pool, train))
        click.echo(f"pool of {pool.n_rules} rules -> {paths['pool.json']}")

    _run(run)


@main.command()
@common_options
def fit(config_path, data, schema, out, seed, force):
    """Run the full pipeline and write model.json, trace.csv, report.json."""

    def run():
        cfg = make_config(config_path, data=data, schema=schema, out=out, seed=seed,
                          force=force or None)
        paths = _prepare_outputs(cfg, ["model.json", "trace.csv", "report.json"])
        _, train, _, test = _load_splits(cfg)
        pool = _mine(cfg, train)
        best, trace, _ = _fit_one(cfg, pool, train, cfg.prior_alpha, cfg.prior_beta_scale)

        _write_json(paths["model.json"], model_to_dict(best, pool, train))
        trace.to_csv(paths["trace.csv"])
        rules = [pool.rules[i] for i in best.rule_ids]
        report = {
            "n_rules": len(best.rule_ids),
            "train_log_objective": _finite_or_none(best.logF),
            "test": _subgroup_stats(rules, test),
        }
        _write_json(paths["report.json"], report)
        click.echo(f"model with {len(best.rule_ids)} rules -> {paths['model.json']}")

    _run(run)


@main.command()
@common_options
@click.option("--jobs", type=int, default=None, help="parallel workers for grid points")
def sweep(config_path, data, schema, out, seed, force, jobs):
    """Fit over the prior grid and write the validation Pareto frontier."""

    def run():
        cfg = make_config(config_path, data=data, schema=schema, out=out, seed=seed,
                          force=force or None, n_jobs=jobs)
        if not cfg.sweep_alpha or not cfg.sweep_beta_scale:
            raise ConfigError("sweep grids must be non-empty")
        paths = _prepare_outputs(cfg, ["frontier.csv"])
        _, train, val, test = _load_splits(cfg)
        pool = _mine(cfg, train)
        grid = [(a, b) for a in cfg.sweep_alpha for b in cfg.sweep_beta_scale]

        def fit_point(a, b):
            best, _, _ = _fit_one(cfg, pool, train, a, b)
            return best

        if cfg.n_jobs == 1:
            models = [fit_point(a, b) for a, b in grid]
        else:
            models = Parallel(n_jobs=cfg.n_jobs)(delayed(fit_point)(a, b) for a, b in grid)

        points = []
        for (a, b), best in zip(grid, models):
            rules = [pool.rules[i] for i in best.rule_ids]
            stats = _subgroup_stats(rules, val)
            points.append(
                {
                    "alpha": a,
                    "beta_scale": b,
                    "n_rules": len(best.rule_ids),
                    "val_size": stats["subgroup_size_fraction"],
                    "val_ate": stats["subgroup_matched_ate"],
                    "rules": rules,
                }
            )

        def dominated(i: int) -> bool:
            pi = points[i]
            if pi["val_ate"] is None:
                return True
            for j, pj in enumerate(points):
                if j == i or pj["val_ate"] is None:
                    continue
                ge = pj["val_size"] >= pi["val_size"] and pj["val_ate"] >= pi["val_ate"]
                gt = pj["val_size"] > pi["val_size"] or pj["val_ate"] > pi["val_ate"]
                if ge and gt:
                    return True
            return False

        frontier = [not dominated(i) for i in range(len(points))]
        with paths["frontier.csv"].open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["alpha", "beta_scale", "n_rules", "val_size", "val_ate",
                 "on_frontier", "test_size", "test_ate"]
            )
            for p, on_front in zip(points, frontier):
                test_size, test_ate = "", ""
                if on_front:
                    stats = _subgroup_stats(p["rules"], test)
                    test_size = repr(stats["subgroup_size_fraction"])
                    test_ate = (
                        "undefined"
                        if stats["subgroup_matched_ate"] is None
                        else repr(stats["subgroup_matched_ate"])
                    )
                writer.writerow(
                    [
                        repr(float(p["alpha"])),
                        repr(float(p["beta_scale"])),
                        p["n_rules"],
                        repr(float(p["val_size"])),
                        "undefined" if p["val_ate"] is None else repr(p["val_ate"]),
                        int(on_front),
                        test_size,
                        test_ate,
                    ]
                )
        click.echo(f"{sum(frontier)} of {len(points)} grid points on the frontier -> {paths['frontier.csv']}")

    _run(run)


@main.command()
@common_options
@click.option("--jobs", type=int, default=None, help="parallel workers for repeats")
def synth(config_path, data, schema, out, seed, force, jobs):
    """Run the planted-subgroup recovery benchmark; write curves and summary."""

    def run():
        cfg = make_config(config_path, data=data, schema=schema, out=out, seed=seed,
                          force=force or None, n_jobs=jobs)
        if cfg.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        paths = _prepare_outputs(cfg, ["curves.csv", "summary.json"])
        spec = SyntheticSpec(
            n=cfg.synth_n,
            J=cfg.synth_j,
            n_true_rules=cfg.synth_true_rules,
            pool_size_m=cfg.synth_pool,
            seed=cfg.seed,
            bins_per_numeric=cfg.bins_per_numeric,
            min_support=cfg.min_support,
            max_rule_length=cfg.max_rule_length,
        )
        prior = PriorSettings(
            alpha=cfg.prior_alpha, beta_scale=cfg.prior_beta_scale,
            mu=cfg.prior_mu, sigma=cfg.prior_sigma,
        )
        result = run_recovery_experiment(
            spec, prior, _search_params(cfg), n_repeats=cfg.n_repeats, n_jobs=cfg.n_jobs
        )
        write_curves_csv(result, paths["curves.csv"])
        write_summary_json(result, paths["summary.json"])
        click.echo(
            f"mean final error {result.summary()['mean_final_error']:.4f} "
            f"over {cfg.n_repeats} repeats -> {paths['summary.json']}"
        )

    _run(run)


if __name__ == "__main__":
    main()
