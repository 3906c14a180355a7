"""Logistic regression with a diagonal Gaussian prior, fit by damped Newton.

The maximized objective is

    sum_i [ y_i log s(eta_i) + (1 - y_i) log(1 - s(eta_i)) ]
    - 0.5 * sum_j (w_j - mu_j)^2 / sigma_j

with eta = X w and s the sigmoid; the Gaussian normalizing constant is
dropped. With mu = 0 and sigma = 1/lambda this is plain L2-regularized
logistic regression. The prior keeps the Hessian positive definite, so the
Newton system is always solvable up to extreme conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


def log_sigmoid(eta: np.ndarray) -> np.ndarray:
    """log s(eta), safe for |eta| up to ~1e3 and beyond."""
    return -np.logaddexp(0.0, -eta)


def sigmoid(eta: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def bernoulli_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # y log s(eta) + (1-y) log(1 - s(eta)) == -logaddexp(0, (1-2y) eta)
    return float(-np.logaddexp(0.0, (1.0 - 2.0 * y) * eta).sum())


@dataclass
class FitInfo:
    converged: bool
    n_iter: int
    grad_norm: float
    objective: float
    objective_path: list[float]


def penalized_loglik(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, mu: np.ndarray, sigma: np.ndarray
) -> float:
    dev = w - mu
    return bernoulli_loglik(X @ w, y) - 0.5 * float((dev * dev / sigma).sum())


def fit(
    X: np.ndarray,
    y: np.ndarray,
    mu: np.ndarray | float = 0.0,
    sigma: np.ndarray | float = 1.0,
    w0: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[np.ndarray, FitInfo]:
    """Maximize the penalized log-likelihood by Newton steps with step halving.

    Starts from w0 (zeros by default), accepts only non-decreasing steps, and
    falls back to a scaled gradient step if the Newton system fails. Stops
    when the gradient norm drops below tol or after max_iter iterations;
    FitInfo records which.
    """
    n, d = X.shape
    y = np.asarray(y, dtype=np.float64)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (d,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (d,))
    if np.any(sigma <= 0):
        raise NumericalError("prior variances must be positive")
    prec = 1.0 / sigma

    w = np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64)
    obj = penalized_loglik(X, y, w, mu, sigma)
    if not np.isfinite(obj):
        raise NumericalError("non-finite objective at the starting point")
    path = [obj]
    grad_norm = np.inf

    for it in range(1, max_iter + 1):
        p = sigmoid(X @ w)
        grad = X.T @ (y - p) - prec * (w - mu)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return w, FitInfo(True, it - 1, grad_norm, obj, path)

        weights = p * (1.0 - p)
        hess = (X * weights[:, None]).T @ X
        hess[np.diag_indices_from(hess)] += prec
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad * (1.0 / max(1.0, grad_norm))

        scale = 1.0
        new_obj = penalized_loglik(X, y, w + step, mu, sigma)
        while (not np.isfinite(new_obj) or new_obj < obj) and scale > 1e-12:
            scale *= 0.5
            new_obj = penalized_loglik(X, y, w + scale * step, mu, sigma)
        if not np.isfinite(new_obj):
            raise NumericalError("objective became non-finite during the fit")
        if new_obj < obj:
            # No ascent direction left at line-search resolution: we are at
            # a numerical stationary point.
            return w, FitInfo(grad_norm < tol, it, grad_norm, obj, path)
        w = w + scale * step
        obj = new_obj
        path.append(obj)

    p = sigmoid(X @ w)
    grad = X.T @ (y - p) - prec * (w - mu)
    grad_norm = float(np.linalg.norm(grad))
    return w, FitInfo(grad_norm < tol, max_iter, grad_norm, obj, path)
