"""Per-instance effect-sign estimation and statistical screens.

Two random forests fit separately on treated and control rows estimate
p(y=1|x) under each arm; the sign of their gap labels the rows worth
mining. Candidate rules are then screened for covariate balance between
the arms they cover (vectorized Welch tests) and ranked by a
propensity-matched effect estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr
from sklearn.ensemble import RandomForestClassifier

from . import logistic
from .data import Dataset
from .errors import DataError


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    features_per_split: int | str = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth, and min_leaf must be >= 1")


@dataclass
class ZLabels:
    """Effect-sign labels: z_i = 1 exactly when p1_i - p0_i > 0 (strict)."""

    z: np.ndarray
    p_hat_1: np.ndarray
    p_hat_0: np.ndarray


class ForestEstimator:
    """Probability-of-positive-outcome estimator backed by a random forest.

    Predictions are means of per-tree leaf class frequencies, always in
    [0, 1]; a training set with a single outcome class yields that class's
    constant frequency.
    """

    def __init__(self, clf: RandomForestClassifier | None, constant: float | None = None):
        self._clf = clf
        self._constant = constant

    def predict_p1(self, features: np.ndarray) -> np.ndarray:
        n = features.shape[0]
        if self._constant is not None:
            return np.full(n, self._constant)
        proba = self._clf.predict_proba(features)
        classes = list(self._clf.classes_)
        if 1 not in classes:
            return np.zeros(n)
        return proba[:, classes.index(1)]


def fit_forest(ds: Dataset, rows: np.ndarray, config: ForestConfig) -> ForestEstimator:
    """Fit an outcome-probability forest on the given rows of the dataset."""
    rows = np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size == 0:
        raise DataError("cannot fit a forest on an empty row set")
    features = ds.features()[rows]
    target = ds.y[rows]
    if features.shape[1] == 0:
        return ForestEstimator(None, constant=float(target.mean()))
    clf = RandomForestClassifier(
        n_estimators=config.n_trees,
        max_depth=config.max_depth,
        min_samples_leaf=config.min_leaf,
        max_features=config.features_per_split,
        criterion="gini",
        bootstrap=True,
        random_state=config.seed,
        n_jobs=1,
    )
    clf.fit(features, target)
    return ForestEstimator(clf)


def estimate_z(ds: Dataset, est_treated, est_control) -> ZLabels:
    """Label every row by the sign of the estimated arm-probability gap."""
    features = ds.features()
    p1 = np.clip(est_treated.predict_p1(features), 0.0, 1.0)
    p0 = np.clip(est_control.predict_p1(features), 0.0, 1.0)
    return ZLabels(z=(p1 - p0 > 0).astype(np.int8), p_hat_1=p1, p_hat_0=p0)


def welch_ttest(a, b) -> tuple[float, float]:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite df.

    Returns (t, two-sided p). Samples smaller than 2, or with zero variance
    in both samples, are inconclusive and yield (nan, nan); callers treat
    inconclusive as failing whatever check they are running.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        return (float("nan"), float("nan"))
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        return (float("nan"), float("nan"))
    sa, sb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    p = 2.0 * stdtr(df, -abs(t))
    return (float(t), float(p))


def covariate_balance_pvalues(cov_rows: np.ndarray, ds: Dataset) -> np.ndarray | None:
    """Welch p-value per non-intercept column between covered-treated and
    covered-control rows.

    Returns None when either arm has fewer than 2 rows. Columns constant at
    the same value in both arms carry no imbalance evidence and get nan
    (skipped by the validity check); columns constant at different values
    are maximally imbalanced and get 0.
    """
    rows = np.asarray(cov_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    t_mask = ds.T[rows] == 1
    xt = ds.features()[rows][t_mask]
    xc = ds.features()[rows][~t_mask]
    n1, n0 = xt.shape[0], xc.shape[0]
    if n1 < 2 or n0 < 2:
        return None
    m1, m0 = xt.mean(axis=0), xc.mean(axis=0)
    v1 = xt.var(axis=0, ddof=1)
    v0 = xc.var(axis=0, ddof=1)
    s1, s0 = v1 / n1, v0 / n0
    se2 = s1 + s0
    out = np.empty(m1.shape)
    degenerate = se2 == 0.0
    out[degenerate & (m1 == m0)] = np.nan
    out[degenerate & (m1 != m0)] = 0.0
    ok = ~degenerate
    if ok.any():
        t = (m1[ok] - m0[ok]) / np.sqrt(se2[ok])
        df = se2[ok] ** 2 / (s1[ok] ** 2 / (n1 - 1) + s0[ok] ** 2 / (n0 - 1))
        out[ok] = 2.0 * stdtr(df, -np.abs(t))
    return out


def validity_check(cov_rows: np.ndarray, ds: Dataset, alpha: float = 0.05) -> bool:
    """Pass when the covered treated and control arms look alike: every
    informative covariate's balance p-value exceeds alpha (equality of means
    is not rejected). Degenerate coverages (an arm below 2 rows, or any
    covariate constant at different values across arms) fail.
    """
    pvalues = covariate_balance_pvalues(cov_rows, ds)
    if pvalues is None:
        return False
    informative = ~np.isnan(pvalues)
    return bool(np.all(pvalues[informative] > alpha))


def matched_ate(cov_rows: np.ndarray, ds: Dataset, l2: float = 1.0) -> float:
    """Propensity-matched treatment-effect estimate on the covered rows.

    Fits p(T=1|x) by L2-regularized logistic regression, matches each
    treated row to its nearest control by propensity (1-NN, with
    replacement), and averages the outcome differences over treated rows.
    """
    rows = np.asarray(cov_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size == 0:
        raise DataError("matched_ate needs a non-empty coverage")
    T = ds.T[rows]
    y = ds.y[rows].astype(np.float64)
    treated = np.flatnonzero(T == 1)
    control = np.flatnonzero(T == 0)
    if treated.size == 0 or control.size == 0:
        raise DataError("matched_ate needs at least one treated and one control row")
    X = ds.X[rows]
    w, _ = logistic.fit(X, T.astype(np.float64), mu=0.0, sigma=1.0 / l2, tol=1e-6)
    scores = logistic.sigmoid(X @ w)

    order = np.argsort(scores[control], kind="stable")
    cs = scores[control][order]
    cy = y[control][order]
    ts = scores[treated]
    pos = np.searchsorted(cs, ts)
    left = np.clip(pos - 1, 0, cs.size - 1)
    right = np.clip(pos, 0, cs.size - 1)
    take_left = np.abs(ts - cs[left]) <= np.abs(cs[right] - ts)
    matched = np.where(take_left, left, right)
    return float(np.mean(y[treated] - cy[matched]))
