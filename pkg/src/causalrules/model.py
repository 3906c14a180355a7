"""Bayesian objective for rule-set subgroup models.

A rule set A marks a subgroup; its fit to data is scored by a logistic
model of the outcome

    p(y=1 | x, T) = s( v.x + g0 T + g1 A(x) + g2 T A(x) )

with a diagonal Gaussian prior on the coefficients w = (v, g0, g1, g2),
and a per-length Beta-Bernoulli prior over which rules enter the set. The
partial posterior Theta is likelihood + weight prior; the search objective
F adds the rule-set prior. Both priors are used in unnormalized log form
throughout, so only differences of F are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from . import bitsets, logistic
from .data import Dataset
from .errors import NumericalError
from .logistic import FitInfo


@dataclass
class Hyperparams:
    """Prior settings: per-length Beta parameters plus weight prior moments.

    alpha and beta have one entry per rule length 1..L. mu and sigma may be
    scalars; they broadcast to the weight dimension at fit time.
    """

    alpha: np.ndarray
    beta: np.ndarray
    L: int
    mu: float | np.ndarray = 0.0
    sigma: float | np.ndarray = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.shape != (self.L,) or self.beta.shape != (self.L,):
            raise ValueError("alpha and beta must have one entry per length 1..L")
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ValueError("alpha and beta must be positive")

    @classmethod
    def for_pool(cls, pool_sizes: np.ndarray, alpha: float = 1.0, beta_scale: float = 1.0,
                 mu: float | np.ndarray = 0.0, sigma: float | np.ndarray = 1.0) -> "Hyperparams":
        """Length-uniform alpha with beta proportional to each length pool's size."""
        sizes = np.asarray(pool_sizes, dtype=np.float64)
        beta = beta_scale * sizes
        beta[beta <= 0] = 1.0  # empty length pools contribute a constant term
        return cls(alpha=np.full(sizes.shape, alpha), beta=beta, L=len(sizes), mu=mu, sigma=sigma)

    def weight_moments(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        mu = np.broadcast_to(np.asarray(self.mu, dtype=np.float64), (d,))
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), (d,))
        return mu, sigma

    def prior_key(self, d: int) -> tuple:
        mu, sigma = self.weight_moments(d)
        return (d, mu.tobytes(), sigma.tobytes())


@dataclass
class Weights:
    """Logistic coefficients: v over the design columns plus the three
    treatment/subgroup terms."""

    v: np.ndarray
    gamma0: float
    gamma1: float
    gamma2: float

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        if not (np.all(np.isfinite(self.v)) and np.isfinite([self.gamma0, self.gamma1, self.gamma2]).all()):
            raise NumericalError("weights must be finite")

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v, [self.gamma0, self.gamma1, self.gamma2]])

    @classmethod
    def from_stacked(cls, w: np.ndarray) -> "Weights":
        w = np.asarray(w, dtype=np.float64)
        return cls(v=w[:-3], gamma0=float(w[-3]), gamma1=float(w[-2]), gamma2=float(w[-1]))

    @classmethod
    def zeros(cls, n_design_columns: int) -> "Weights":
        return cls(v=np.zeros(n_design_columns), gamma0=0.0, gamma1=0.0, gamma2=0.0)


@dataclass
class RuleSetModel:
    """A fitted rule set: members, per-length counts, union coverage, weights,
    and the objective value reached."""

    rule_ids: tuple[int, ...]
    length_counts: np.ndarray
    coverage_bits: np.ndarray
    weights: Weights
    logF: float
    fit_info: FitInfo | None = None

    def coverage_mask(self, n: int) -> np.ndarray:
        return bitsets.unpack(self.coverage_bits, n)


def coverage(rule_ids, pool) -> np.ndarray:
    """Packed union coverage of the given pool rules; empty set covers nothing."""
    ids = sorted(rule_ids)
    if any(i < 0 or i >= pool.n_rules for i in ids):
        raise KeyError(f"unknown rule id in {ids}")
    if not ids:
        return bitsets.zeros(pool.n_rows)
    return bitsets.union(pool.coverage_bits[ids])


def coverage_mask(rule_ids, pool) -> np.ndarray:
    return bitsets.unpack(coverage(rule_ids, pool), pool.n_rows)


def length_counts(rule_ids, pool, L: int) -> np.ndarray:
    counts = np.zeros(L, dtype=np.int64)
    for i in rule_ids:
        counts[pool.rules[i].length - 1] += 1
    return counts


def log_prior(M: np.ndarray, H: Hyperparams, pool_sizes: np.ndarray) -> float:
    """Unnormalized log prior of a rule set with M_l rules of each length l.

    Sum over lengths of log B(M_l + alpha_l, |pool_l| - M_l + beta_l).
    """
    M = np.asarray(M, dtype=np.float64)
    sizes = np.asarray(pool_sizes, dtype=np.float64)
    if M.shape != (H.L,) or sizes.shape != (H.L,):
        raise ValueError("per-length counts must match L")
    if np.any(M < 0) or np.any(M > sizes):
        raise ValueError("length counts must satisfy 0 <= M_l <= pool size")
    return float(betaln(M + H.alpha, sizes - M + H.beta).sum())


def design_matrix(cov: np.ndarray, ds: Dataset) -> np.ndarray:
    """Stack [X | T | A(x) | T*A(x)] for the logistic exponent."""
    a = np.asarray(cov, dtype=np.float64)
    t = ds.T.astype(np.float64)
    return np.column_stack([ds.X, t, a, t * a])


def log_theta(cov: np.ndarray, w: Weights, ds: Dataset, H: Hyperparams) -> float:
    """Partial posterior: Bernoulli log-likelihood plus the weight log-prior."""
    D = design_matrix(cov, ds)
    ws = w.stacked
    mu, sigma = H.weight_moments(D.shape[1])
    eta = D @ ws
    dev = ws - mu
    return logistic.bernoulli_loglik(eta, ds.y.astype(np.float64)) - 0.5 * float(
        (dev * dev / sigma).sum()
    )


def log_theta_gradient(cov: np.ndarray, w: Weights, ds: Dataset, H: Hyperparams) -> np.ndarray:
    """Gradient of log_theta in the stacked weight vector."""
    D = design_matrix(cov, ds)
    ws = w.stacked
    mu, sigma = H.weight_moments(D.shape[1])
    p = logistic.sigmoid(D @ ws)
    return D.T @ (ds.y.astype(np.float64) - p) - (ws - mu) / sigma


def fit_weights(
    cov: np.ndarray,
    ds: Dataset,
    H: Hyperparams,
    w0: Weights | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[Weights, FitInfo]:
    """Maximize log_theta over the weights for a fixed coverage.

    Damped Newton from zeros (or a warm start); the returned FitInfo says
    whether the gradient-norm target was reached or the iteration cap hit.
    """
    D = design_matrix(cov, ds)
    mu, sigma = H.weight_moments(D.shape[1])
    start = None if w0 is None else w0.stacked
    w, info = logistic.fit(
        D, ds.y.astype(np.float64), mu=mu, sigma=sigma, w0=start, tol=tol, max_iter=max_iter
    )
    return Weights.from_stacked(w), info


def objective_F(rule_ids, w: Weights, ds: Dataset, H: Hyperparams, pool) -> float:
    """Search objective: log_theta plus the rule-set log prior."""
    cov = coverage_mask(rule_ids, pool)
    M = length_counts(rule_ids, pool, H.L)
    return log_theta(cov, w, ds, H) + log_prior(M, H, pool.sizes)


def ideal_coverage(ds: Dataset) -> np.ndarray:
    """The coverage indicator that maximizes the partial posterior: rows whose
    observed outcome matches their treatment assignment."""
    return ds.T == ds.y


def ideal_theta(ds: Dataset, H: Hyperparams) -> float:
    """Best achievable partial posterior, from fitting the ideal coverage.

    Memoized on the dataset per weight-prior setting.
    """
    key = ("ideal_theta", H.prior_key(ds.X.shape[1] + 3))
    if key not in ds._memo:
        cov = ideal_coverage(ds)
        w, _ = fit_weights(cov, ds, H)
        ds._memo[key] = log_theta(cov, w, ds, H)
    return ds._memo[key]


def bound_conditions_hold(w: Weights, tol: float = 0.0) -> bool:
    """Whether the fitted subgroup effect signs make the coverage and
    rule-count bounds valid: main subgroup effect nonpositive and net
    treated-subgroup effect nonnegative."""
    return w.gamma1 <= tol and w.gamma1 + w.gamma2 >= -tol


def evaluate_rule_set(
    rule_ids, pool, ds: Dataset, H: Hyperparams, w0: Weights | None = None
) -> RuleSetModel:
    """Fit weights for a rule set and assemble the scored model."""
    ids = tuple(sorted(rule_ids))
    bits = coverage(ids, pool)
    cov = bitsets.unpack(bits, ds.n)
    w, info = fit_weights(cov, ds, H, w0=w0)
    M = length_counts(ids, pool, H.L)
    logF = log_theta(cov, w, ds, H) + log_prior(M, H, pool.sizes)
    return RuleSetModel(
        rule_ids=ids,
        length_counts=M,
        coverage_bits=bits,
        weights=w,
        logF=logF,
        fit_info=info,
    )


def model_to_dict(model: RuleSetModel, pool, ds: Dataset) -> dict:
    """JSON-ready model summary: readable rules, weights, objective, coverage
    support, and the effect-sign flags the bounds rely on."""
    strings = ds.condition_strings()
    rules = [
        [strings[c] for c in pool.rules[i].condition_column_ids] for i in model.rule_ids
    ]
    n_covered = bitsets.popcount(model.coverage_bits)
    return {
        "rules": rules,
        "rule_ids": list(model.rule_ids),
        "weights": {
            "v": [float(x) for x in model.weights.v],
            "gamma0": model.weights.gamma0,
            "gamma1": model.weights.gamma1,
            "gamma2": model.weights.gamma2,
        },
        "log_objective": model.logF,
        "coverage_fraction": n_covered / ds.n if ds.n else 0.0,
        "sign_conditions": {
            "gamma1_nonpositive": bool(model.weights.gamma1 <= 0),
            "gamma1_plus_gamma2_nonnegative": bool(
                model.weights.gamma1 + model.weights.gamma2 >= 0
            ),
        },
    }
