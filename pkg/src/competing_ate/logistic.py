"""Logistic propensity model fitted by Newton-Raphson."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError

TOL = 1e-8
MAX_ITER = 25
MAX_COEF = 30.0


def expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(eta, dtype=float)))


def _with_intercept(X, n=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if n is None or X.size == n else X.reshape(1, -1)
    return np.column_stack([np.ones(X.shape[0]), X])


@dataclass(frozen=True, eq=False)
class LogisticFit:
    coefficients: np.ndarray  # intercept first
    fisher_information: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    loglik_trace: tuple = ()

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])


def _loglik(eta, A, w):
    # log(1 + exp(eta)) computed stably
    return float(np.sum(w * (A * eta - np.logaddexp(0.0, eta))))


def fit_logistic(X, A, weights=None, tol: float = TOL, max_iter: int = MAX_ITER) -> LogisticFit:
    """Maximum likelihood fit of ``P(A=1|x) = expit(b0 + x'b)``.

    Starts at zero and takes Newton steps, halving any step that lowers the
    log-likelihood. Converged once the score max-norm drops below ``tol``.
    Diverging coefficients (``|b| > 30``) are reported as separation.
    """
    A = np.asarray(A, dtype=float).ravel()
    Z = _with_intercept(X, A.size)
    if Z.shape[0] != A.size:
        raise ValidationError("design matrix rows must match the length of A")
    if not np.all(np.isin(A, (0.0, 1.0))):
        raise ValidationError("A must be binary")
    if A.min() == A.max():
        raise ValidationError("A must contain both zeros and ones")
    w = np.ones_like(A) if weights is None else np.asarray(weights, dtype=float)

    beta = np.zeros(Z.shape[1])
    eta = Z @ beta
    ll = _loglik(eta, A, w)
    trace = [ll]
    converged = False
    it = 0
    while True:
        p = expit(eta)
        score = Z.T @ (w * (A - p))
        info = (Z * (w * p * (1 - p))[:, None]).T @ Z
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        if it >= max_iter:
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Fisher information", "treatment") from None
        it += 1
        for _ in range(30):
            cand = beta + step
            eta_c = Z @ cand
            ll_c = _loglik(eta_c, A, w)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta, eta, ll = cand, eta_c, max(ll_c, ll)
        trace.append(ll_c)
        if np.max(np.abs(beta)) > MAX_COEF:
            raise ConvergenceError("coefficients diverge (separation detected)", "treatment")

    if np.linalg.matrix_rank(info) < info.shape[0]:
        raise ConvergenceError("singular Fisher information", "treatment")
    return LogisticFit(beta, info, converged, it, ll, tuple(trace))


def predict_propensity(fit: LogisticFit, X, truncation=None) -> np.ndarray:
    """``expit(b0 + x'b)`` for each row of ``X``, optionally clipped to ``[lo, hi]``."""
    k = fit.coefficients.size - 1
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, k) if k else X.reshape(-1, 1)[:, :0]
    elif k == 0:
        X = X[:, :0]
    p = expit(_with_intercept(X) @ fit.coefficients)
    if truncation is not None:
        lo, hi = truncation
        p = np.clip(p, lo, hi)
    return p


def logistic_influence(fit: LogisticFit, X, A) -> np.ndarray:
    """Per-subject contributions ``I^{-1} x_i (A_i - p_i)`` to the coefficient estimate.

    ``I`` is the total Fisher information, so rows are on the sum scale:
    ``beta_hat - beta ~ sum_i row_i`` and duplicating every subject halves them.
    """
    A = np.asarray(A, dtype=float).ravel()
    Z = _with_intercept(X, A.size)
    p = expit(Z @ fit.coefficients)
    try:
        inv = np.linalg.inv(fit.fisher_information)
    except np.linalg.LinAlgError:
        raise ConvergenceError("singular Fisher information", "treatment") from None
    return (Z * (A - p)[:, None]) @ inv
