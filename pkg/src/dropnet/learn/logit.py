"""L2-regularised logistic regression fitted by preconditioned gradient descent with backtracking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(eq=False)
class LogitModel:
    coef: np.ndarray
    intercept: float
    l2: float
    mean: np.ndarray
    scale: np.ndarray
    converged: bool
    n_iter: int

    def decision_function(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.mean) / self.scale
        return Xs @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def logit_objective(beta, intercept, X, y, w, l2):
    """Weighted mean NLL + (l2/2)||beta||^2 and its gradient (beta, intercept).

    ``w`` is normalised to mean one, so the data term is an average.
    """
    z = X @ beta + intercept
    f = float(np.sum(w * (np.logaddexp(0.0, z) - y * z)) / len(y) + 0.5 * l2 * beta @ beta)
    r = w * (expit(z) - y) / len(y)
    return f, X.T @ r + l2 * beta, float(r.sum())


def fit_logit(X, y, l2: float = 1.0, max_iter: int = 2000, tol: float = 1e-6,
              sample_weight=None, standardize: bool = True) -> LogitModel:
    """Minimise the penalised objective; the intercept is not penalised.

    Stops when the gradient's infinity norm drops to ``tol`` or after
    ``max_iter`` steps; ``converged`` records which.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be 2-D with one label per row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs")
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample weights must be finite and non-negative")
    w = w / w.mean()

    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xs = (X - mean) / scale

    # diagonal preconditioner from a curvature bound per coordinate, so a strong
    # penalty on beta does not stall the unpenalised intercept
    wn = w / len(y)
    pb = 1.0 / (0.25 * (wn @ Xs**2) + l2 + 1e-12)
    pi = 1.0 / (0.25 * wn.sum())

    beta = np.zeros(X.shape[1])
    b = 0.0
    f, gb, gi = logit_objective(beta, b, Xs, y, w, l2)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = max(np.max(np.abs(gb), initial=0.0), abs(gi))
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        db, di = pb * gb, pi * gi
        sq = gb @ db + gi * di
        while True:
            nb, ni = beta - step * db, b - step * di
            nf, ngb, ngi = logit_objective(nb, ni, Xs, y, w, l2)
            if nf <= f - 0.5 * step * sq or step < 1e-12:
                break
            step *= 0.5
        beta, b, f, gb, gi = nb, ni, nf, ngb, ngi
        step = min(step * 2.0, 1e3)
    else:
        converged = max(np.max(np.abs(gb), initial=0.0), abs(gi)) <= tol
    return LogitModel(beta, float(b), float(l2), mean, scale, converged, it)
