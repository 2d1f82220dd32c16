"""Cox proportional hazards working models with Breslow baseline and influence functions.

Ties follow the convention that events precede censorings at the same clock
time. For a cause-specific fit every subject with ``T >= t`` is at risk at
``t``. For the censoring fit (``cause=0``) subjects whose event happens at
``t`` have already failed and leave the risk set before the censorings at
``t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConvergenceError, ValidationError
from .stepfunction import StepFunction

TOL = 1e-8
MAX_ITER = 25
MAX_COEF = 30.0

_MODEL_NAMES = {0: "censoring", 1: "outcome1", 2: "outcome2"}


def _rcumsum(v):
    return np.cumsum(v[::-1], axis=0)[::-1]


@dataclass(frozen=True, eq=False)
class RiskSets:
    """Risk-set bookkeeping for one target event type, independent of coefficients."""

    times: np.ndarray  # unique target event times, K
    n_events: np.ndarray  # d_k
    order: np.ndarray  # subjects sorted by (time, early exit first)
    start: np.ndarray  # risk set at times[k] is order[start[k]:]
    event_index: np.ndarray  # per subject: grid index of own target event, -1 if none
    n_at_risk_points: np.ndarray  # per subject: number of leading grid times at which it is at risk

    @classmethod
    def build(cls, time, is_event, early_exit):
        time = np.asarray(time, dtype=float)
        is_event = np.asarray(is_event, dtype=bool)
        early_exit = np.asarray(early_exit, dtype=bool)
        times, n_events = np.unique(time[is_event], return_counts=True)
        order = np.lexsort((~early_exit, time))
        early_times = np.sort(time[early_exit])
        start = (np.searchsorted(time[order], times, side="left")
                 + np.searchsorted(early_times, times, side="right")
                 - np.searchsorted(early_times, times, side="left"))
        event_index = np.full(time.size, -1)
        event_index[is_event] = np.searchsorted(times, time[is_event])
        n_at_risk = np.where(early_exit, np.searchsorted(times, time, side="left"),
                             np.searchsorted(times, time, side="right"))
        return cls(times, n_events.astype(float), order, start, event_index, n_at_risk)

    def at_risk(self, k: int) -> np.ndarray:
        """Boolean risk-set membership at grid index ``k``."""
        return self.n_at_risk_points > k

    def sums(self, weights):
        """sum over the risk set of ``weights`` (leading axis = subjects) at each grid time."""
        return _rcumsum(np.asarray(weights)[self.order])[self.start]


def _target(event, cause):
    event = np.asarray(event)
    is_event = event == cause
    early = (event != 0) if cause == 0 else np.zeros(event.size, dtype=bool)
    return is_event, early


@dataclass(frozen=True, eq=False)
class CoxFit:
    """Fitted Cox model. ``baseline`` is the Breslow cumulative hazard at covariates 0."""

    coefficients: np.ndarray
    baseline: StepFunction
    converged: bool
    iterations: int
    information: np.ndarray
    loglik: float
    cause: int
    loglik_trace: tuple
    # fitting-sample quantities at the estimate, used by the influence functions
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    risk_sets: RiskSets
    risk: np.ndarray  # exp(x_i'beta)
    s0: np.ndarray  # sum of risk over the risk set, per grid time
    xbar: np.ndarray  # risk-weighted covariate mean over the risk set, K x p

    @property
    def name(self) -> str:
        return _MODEL_NAMES.get(self.cause, f"cause{self.cause}")

    @property
    def event_times(self) -> np.ndarray:
        return self.baseline.jump_times

    @property
    def baseline_increments(self) -> np.ndarray:
        return self.baseline.increments

    @property
    def n(self) -> int:
        return self.time.size

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.coefficients.size == 0:
            return np.zeros(X.shape[0] if X.ndim == 2 else 1)
        return np.atleast_2d(X) @ self.coefficients

    def score_residuals(self) -> np.ndarray:
        """Per-subject score contributions ``int (x_i - xbar) dM_i``."""
        rs = self.risk_sets
        X, p = self.X, self.X.shape[1]
        if p == 0:
            return np.zeros((self.n, 0))
        dlam = self.baseline.increments
        c0 = np.concatenate([[0.0], np.cumsum(dlam)])
        c1 = np.vstack([np.zeros((1, p)), np.cumsum(self.xbar * dlam[:, None], axis=0)])
        m = rs.n_at_risk_points
        U = -self.risk[:, None] * (X * c0[m][:, None] - c1[m])
        ev = rs.event_index >= 0
        U[ev] += X[ev] - self.xbar[rs.event_index[ev]]
        return U


def _partial_likelihood(X, rs: RiskSets, events_X_sum, beta, need_hessian=True):
    # trial Newton steps can overflow; the -inf likelihood makes step-halving reject them
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        eta = X @ beta if X.shape[1] else np.zeros(X.shape[0])
        shift = eta.max()
        r = np.exp(eta - shift)
        s0 = rs.sums(r)
        loglik = float(eta[rs.event_index >= 0].sum() - np.sum(rs.n_events * (np.log(s0) + shift)))
        if not need_hessian or X.shape[1] == 0:
            return loglik, None, None, s0 * np.exp(shift), None
        s1 = rs.sums(r[:, None] * X)
        xbar = s1 / s0[:, None]
        score = events_X_sum - rs.n_events @ xbar
        s2 = rs.sums(r[:, None, None] * X[:, :, None] * X[:, None, :])
        info = np.einsum("k,kij->ij", rs.n_events, s2 / s0[:, None, None]) \
            - np.einsum("k,ki,kj->ij", rs.n_events, xbar, xbar)
        return loglik, score, info, s0 * np.exp(shift), xbar


def fit_cox_arrays(time, event, X, cause: int, tol: float = TOL, max_iter: int = MAX_ITER) -> CoxFit:
    """Newton-Raphson maximiser of the Breslow partial likelihood for events of ``cause``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    X = np.asarray(X, dtype=float).reshape(time.size, -1)
    name = _MODEL_NAMES.get(cause, f"cause{cause}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name}: design matrix has non-finite entries")
    is_event, early = _target(event, cause)
    if not is_event.any():
        raise ConvergenceError(f"no events of code {cause} to fit", name)
    rs = RiskSets.build(time, is_event, early)
    p = X.shape[1]
    ev_sum = X[is_event].sum(axis=0)

    beta = np.zeros(p)
    ll, score, info, s0, xbar = _partial_likelihood(X, rs, ev_sum, beta)
    trace = [ll]
    it = 0
    converged = p == 0
    while not converged:
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        if it >= max_iter:
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular information matrix", name) from None
        it += 1
        for _ in range(30):
            cand = beta + step
            ll_c = _partial_likelihood(X, rs, ev_sum, cand, need_hessian=False)[0]
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta = cand
        if np.max(np.abs(beta)) > MAX_COEF:
            raise ConvergenceError("coefficients diverge (monotone likelihood)", name)
        ll, score, info, s0, xbar = _partial_likelihood(X, rs, ev_sum, beta)
        trace.append(ll)

    if p:
        if np.linalg.matrix_rank(info) < p:
            raise ConvergenceError("singular information matrix", name)
    else:
        info = np.zeros((0, 0))
        xbar = np.zeros((rs.times.size, 0))
    dlam0 = rs.n_events / s0
    risk = np.exp(X @ beta) if p else np.ones(time.size)
    return CoxFit(beta, StepFunction(rs.times, dlam0), converged, it, info, ll, cause, tuple(trace),
                  X, time, event, rs, risk, s0, xbar)


def fit_cox(data: Dataset, X, cause: int, tol: float = TOL, max_iter: int = MAX_ITER) -> CoxFit:
    """Fit a Cox model treating event code ``cause`` as the event and all else as censored.

    ``cause=0`` fits the censoring hazard.
    """
    return fit_cox_arrays(data.time, data.event, X, cause, tol, max_iter)


def predict_cumhazard(fit: CoxFit, x) -> StepFunction:
    """Cumulative hazard ``Lambda0(t) exp(x'beta)`` on the baseline's jump times."""
    x = np.asarray(x, dtype=float).ravel()
    lp = float(x @ fit.coefficients) if fit.coefficients.size else 0.0
    return fit.baseline.scale(np.exp(lp))


@dataclass(frozen=True, eq=False)
class BaselineInfluence:
    """Per-subject influence of the Breslow baseline, as a subjects x jump-times matrix.

    Values are on the sum scale: ``Lambda0_hat(t) - Lambda0(t) ~ sum_i values[i, k]``.
    """

    jump_times: np.ndarray
    values: np.ndarray

    def at(self, t) -> np.ndarray:
        k = np.searchsorted(self.jump_times, t, side="right")
        if k == 0:
            return np.zeros(self.values.shape[0])
        return self.values[:, k - 1]

    def subject(self, i: int) -> StepFunction:
        return StepFunction.from_values(self.jump_times, self.values[i])


def beta_influence(fit: CoxFit) -> np.ndarray:
    """Sum-scale influence rows ``I^{-1} U_i`` of the coefficients."""
    if fit.coefficients.size == 0:
        return np.zeros((fit.n, 0))
    try:
        inv = np.linalg.inv(fit.information)
    except np.linalg.LinAlgError:
        raise ConvergenceError("singular information matrix", fit.name) from None
    return fit.score_residuals() @ inv


def cox_influence(fit: CoxFit, data: Dataset | None = None, X=None):
    """Influence functions of the coefficients and of the Breslow baseline.

    Returns ``(beta_IF, lambda0_IF)``; both on the sum scale and both with
    subject-wise mean zero. ``data``/``X`` are accepted for symmetry with the
    fitting call; the fit already carries its sample.
    """
    if X is not None and np.asarray(X).shape[0] != fit.n:
        raise ValidationError("X does not match the fitting sample")
    psi = beta_influence(fit)
    rs = fit.risk_sets
    K = rs.times.size
    dlam = fit.baseline.increments
    dM = np.where(rs.n_at_risk_points[:, None] > np.arange(K), -fit.risk[:, None] * dlam, 0.0)
    ev = np.flatnonzero(rs.event_index >= 0)
    dM[ev, rs.event_index[ev]] += 1.0
    values = np.cumsum(dM / fit.s0, axis=1)
    if psi.shape[1]:
        H = np.cumsum(fit.xbar * dlam[:, None], axis=0)
        values -= psi @ H.T
    return psi, BaselineInfluence(rs.times, values)


def nelson_aalen(data: Dataset, cause: int, mask=None) -> StepFunction:
    """Nelson-Aalen cumulative hazard of ``cause`` (``#events / #at risk`` at each event time)."""
    time, event = data.time, data.event
    if mask is not None:
        time, event = time[mask], event[mask]
    return nelson_aalen_arrays(time, event, cause)


def nelson_aalen_arrays(time, event, cause: int) -> StepFunction:
    is_event, early = _target(event, cause)
    if not is_event.any():
        return StepFunction.zero()
    rs = RiskSets.build(time, is_event, early)
    return StepFunction(rs.times, rs.n_events / rs.sums(np.ones(len(time))))
