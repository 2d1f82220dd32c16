"""Absolute risks from cause-specific hazards, their influence functions, Aalen-Johansen."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .coxph import CoxFit, beta_influence, fit_cox_arrays, nelson_aalen_arrays
from .dataset import CAUSE1, CAUSE2, Dataset, FormulaSpec, design_rows
from .errors import PositivityError, ValidationError
from .stepfunction import StepFunction

MODES = ("product-limit", "exponential")
_CELLS = 2_000_000  # matrix entries per chunk


def compose(dl1, dl2, mode="product-limit"):
    """Event-free survival and both cumulative incidences from hazard increments.

    Arrays are (points, grid). Returns ``(S, F1, F2)`` evaluated right-continuously
    at each grid time.
    """
    dl1 = np.asarray(dl1, dtype=float)
    dl2 = np.asarray(dl2, dtype=float)
    if mode == "product-limit":
        factor = 1.0 - dl1 - dl2
        if np.any(factor < -1e-12):
            raise PositivityError("hazard increments sum above 1; use mode='exponential' "
                                  "or check for an extreme linear predictor")
        S = np.cumprod(np.maximum(factor, 0.0), axis=-1)
    elif mode == "exponential":
        S = np.exp(-np.cumsum(dl1 + dl2, axis=-1))
    else:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    S_prev = _shift_right(S, 1.0)
    return S, np.cumsum(S_prev * dl1, axis=-1), np.cumsum(S_prev * dl2, axis=-1)


def _shift_right(a, fill):
    out = np.empty_like(a)
    if a.shape[-1] == 0:
        return out
    out[..., 0] = fill
    out[..., 1:] = a[..., :-1]
    return out


@dataclass(frozen=True, eq=False)
class RiskCurve:
    """Absolute risks of both causes and event-free survival on a time grid."""

    times: np.ndarray
    cif1: np.ndarray
    cif2: np.ndarray
    survival: np.ndarray

    @property
    def F1(self) -> StepFunction:
        return StepFunction.from_values(self.times, self.cif1)

    @property
    def F2(self) -> StepFunction:
        return StepFunction.from_values(self.times, self.cif2)

    @property
    def any_event(self) -> StepFunction:
        """Probability of an event of either cause, ``1 - S``, as a step function."""
        return StepFunction.from_values(self.times, 1.0 - self.survival)

    def at(self, t):
        """``(F1(t), F2(t), S(t))`` by right-continuous lookup."""
        k = np.searchsorted(self.times, t, side="right") - 1
        if np.ndim(k) == 0:
            if k < 0:
                return 0.0, 0.0, 1.0
            return float(self.cif1[k]), float(self.cif2[k]), float(self.survival[k])
        pad = lambda a, v: np.concatenate([[v], a])[k + 1]
        return pad(self.cif1, 0.0), pad(self.cif2, 0.0), pad(self.survival, 1.0)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "F1", "F2", "S"])
            w.writerow(["0", "0", "0", "1"])
            for row in zip(self.times, self.cif1, self.cif2, self.survival):
                w.writerow([format(v, ".17g") for v in row])


@dataclass(frozen=True, eq=False)
class HazardPrediction:
    """Subject-level hazard increments ``baseline[a, k] * exp(lp[i, a])`` on a shared grid.

    ``a`` is the (possibly counterfactual) treatment arm. This is the form in
    which fitted outcome and censoring models enter the estimators.
    """

    times: np.ndarray
    baseline: np.ndarray  # (2, K)
    lp: np.ndarray  # (n, 2)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        base = np.broadcast_to(np.asarray(self.baseline, dtype=float), (2, times.size))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "baseline", base)
        object.__setattr__(self, "lp", np.asarray(self.lp, dtype=float).reshape(-1, 2))

    @classmethod
    def zero(cls, n, times=None):
        times = np.empty(0) if times is None else np.asarray(times, dtype=float)
        return cls(times, np.zeros((2, times.size)), np.zeros((n, 2)))

    @property
    def n(self) -> int:
        return self.lp.shape[0]

    def increments(self, rows, arms, upto=None) -> np.ndarray:
        rows = np.asarray(rows)
        arms = np.broadcast_to(np.asarray(arms), rows.shape)
        K = self.times.size if upto is None else upto
        return np.exp(self.lp[rows, arms])[:, None] * self.baseline[arms, :K]

    def on_grid(self, grid) -> "HazardPrediction":
        """Same hazards re-expressed on a finer grid containing all jump times."""
        grid = np.asarray(grid, dtype=float)
        pos = np.searchsorted(grid, self.times)
        if pos.size and (np.any(pos >= grid.size) or np.any(grid[np.minimum(pos, grid.size - 1)] != self.times)):
            raise ValidationError("grid must contain every jump time")
        base = np.zeros((2, grid.size))
        base[:, pos] = self.baseline
        return HazardPrediction(grid, base, self.lp)


class _Component:
    """One Cox fit inside a cause-specific model, with the arms it applies to."""

    def __init__(self, cause, arms, fit: CoxFit, rows):
        self.cause = cause
        self.arms = tuple(arms)
        self.fit = fit
        self.rows = np.asarray(rows)

    @cached_property
    def psi(self):
        return beta_influence(self.fit)


@dataclass(eq=False)
class CauseSpecificModel:
    """Pair of cause-specific Cox working models for the outcome.

    With ``by_arm`` the corresponding cause is fitted separately in each
    treatment arm. A cause with no observed events has zero hazard.
    """

    spec: FormulaSpec
    covariate_names: tuple
    components: list
    n: int
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        grids = [c.fit.event_times for c in self.components]
        self.times = np.unique(np.concatenate(grids)) if grids else np.empty(0)

    @property
    def fit1(self):
        return self._fits(CAUSE1)

    @property
    def fit2(self):
        return self._fits(CAUSE2)

    def _fits(self, cause):
        fits = [c.fit for c in self.components if c.cause == cause]
        if not fits:
            return None
        return fits[0] if len(fits) == 1 and len(self.components_for(cause)[0].arms) == 2 else fits

    def components_for(self, cause):
        return [c for c in self.components if c.cause == cause]

    @property
    def converged(self) -> bool:
        return all(c.fit.converged for c in self.components)

    @property
    def iterations(self) -> dict:
        out = {}
        for c in self.components:
            key = f"outcome{c.cause}" + ("" if len(c.arms) == 2 else f"[arm={c.arms[0]}]")
            out[key] = c.fit.iterations
        return out

    def _design(self, cause, W, arm):
        return design_rows(W, self.covariate_names, self.spec, f"outcome{cause}", arm)

    def _lp(self, comp: _Component, W, arm):
        Z = self._design(comp.cause, W, arm)
        return comp.fit.linear_predictor(Z) if Z.shape[1] else np.zeros(Z.shape[0])

    def hazard_prediction(self, cause, W) -> HazardPrediction:
        """Per-subject hazards of ``cause`` for both counterfactual arms on the merged grid."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        base = np.zeros((2, self.times.size))
        lp = np.zeros((W.shape[0], 2))
        for comp in self.components_for(cause):
            pos = np.searchsorted(self.times, comp.fit.event_times)
            for a in comp.arms:
                base[a, pos] = comp.fit.baseline_increments
                lp[:, a] = self._lp(comp, W, a)
        return HazardPrediction(self.times, base, lp)


def fit_cause_specific(data: Dataset, spec: FormulaSpec) -> CauseSpecificModel:
    """Fit Cox models for cause 1 and cause 2 with the outcome formulas of ``spec``."""
    spec.validate(data.covariate_names)
    comps = []
    for cause in (CAUSE1, CAUSE2):
        model = f"outcome{cause}"
        groups = [((0,), data.treatment == 0), ((1,), data.treatment == 1)] if model in spec.by_arm \
            else [((0, 1), np.ones(data.n, dtype=bool))]
        for arms, mask in groups:
            rows = np.flatnonzero(mask)
            if not np.any(data.event[rows] == cause):
                if cause == CAUSE1:
                    raise ValidationError(f"{model}: no cause-1 events in arm(s) {arms}")
                continue
            Z = design_rows(data.covariates[rows], data.covariate_names, spec, model, data.treatment[rows])
            comps.append(_Component(cause, arms, fit_cox_arrays(data.time[rows], data.event[rows], Z, cause), rows))
    return CauseSpecificModel(spec, data.covariate_names, comps, data.n)


def _upto(times, t):
    return int(np.searchsorted(times, t, side="right"))


def absolute_risk(model: CauseSpecificModel, a: int, x, mode: str = "product-limit",
                  horizon: float | None = None) -> RiskCurve:
    """Risk curves ``F1, F2, S`` for covariates ``x`` (raw, unexpanded) under arm ``a``.

    ``horizon`` truncates the grid; late Breslow increments beyond it are
    then never composed (they can exceed 1 in small risk sets).
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    K = model.times.size if horizon is None else _upto(model.times, horizon)
    h1 = model.hazard_prediction(CAUSE1, x)
    h2 = model.hazard_prediction(CAUSE2, x)
    S, F1, F2 = compose(h1.increments([0], a, K), h2.increments([0], a, K), mode)
    return RiskCurve(model.times[:K], F1[0], F2[0], S[0])


def absolute_risk_from_hazards(times, dl1, dl2, mode="product-limit") -> RiskCurve:
    """Risk curve from explicit cause-specific hazard increments on ``times``."""
    S, F1, F2 = compose(np.atleast_2d(dl1), np.atleast_2d(dl2), mode)
    return RiskCurve(np.asarray(times, dtype=float), F1[0], F2[0], S[0])


def influence_weights(dl1, dl2, t_index, mode="product-limit"):
    """Derivatives of ``F1`` at grid index ``t_index - 1`` w.r.t. each hazard increment.

    Returns ``(w1, w2)`` so that a perturbation ``(h1, h2)`` of the increments
    moves ``F1(t)`` by ``sum_k w1[k] h1[k] + w2[k] h2[k]``.
    """
    dl1 = np.atleast_2d(dl1)[:, :t_index]
    dl2 = np.atleast_2d(dl2)[:, :t_index]
    S, F1, _ = compose(dl1, dl2, mode)
    if t_index == 0:
        return np.zeros_like(dl1), np.zeros_like(dl2)
    S_prev = _shift_right(S, 1.0)
    remaining = F1[:, -1:] - F1
    if mode == "product-limit":
        ratio = np.divide(S_prev, S, out=np.zeros_like(S), where=S > 0)
        remaining = remaining * ratio
    return S_prev - remaining, -remaining


def cif_influence(model: CauseSpecificModel, W, arms, coef, t, mode: str = "product-limit") -> np.ndarray:
    """Sum-scale influence of ``sum_l coef[l] * F1_hat(t | arms[l], W[l])``, per fitting subject.

    The chain rule runs through the influence functions of each Cox fit's
    coefficients and Breslow baseline.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    m = W.shape[0]
    arms = np.broadcast_to(np.asarray(arms, dtype=int), (m,))
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (m,))
    K = _upto(model.times, t)
    out = np.zeros(model.n)
    if K == 0 or m == 0:
        return out

    h = {c: model.hazard_prediction(c, W) for c in (CAUSE1, CAUSE2)}
    acc = {}
    for comp in model.components:
        pos = np.searchsorted(model.times, comp.fit.event_times)
        kc = int(np.searchsorted(pos, K))  # fit grid points at or before t
        acc[id(comp)] = (pos[:kc], np.zeros(kc), np.zeros((kc, comp.fit.coefficients.size)))

    step = max(1, _CELLS // K)
    for lo in range(0, m, step):
        sl = slice(lo, min(m, lo + step))
        rows = np.arange(sl.start, sl.stop)
        dl = {c: h[c].increments(rows, arms[sl], K) for c in h}
        w = dict(zip((CAUSE1, CAUSE2), influence_weights(dl[CAUSE1], dl[CAUSE2], K, mode)))
        for comp in model.components:
            pos, Wk, Vk = acc[id(comp)]
            if pos.size == 0:
                continue
            sel = np.isin(arms[sl], comp.arms)
            if not sel.any():
                continue
            # d Lambda(u | z) / d(perturbation) scales with exp(z'beta)
            wr = w[comp.cause][sel][:, pos] * (coef[sl][sel] * np.exp(h[comp.cause].lp[rows[sel], arms[sl][sel]]))[:, None]
            Wk += wr.sum(axis=0)
            if Vk.shape[1]:
                Z = np.vstack([model._design(comp.cause, W[rows[sel]][arms[sl][sel] == a], a)
                               for a in comp.arms])
                order = np.concatenate([np.flatnonzero(arms[sl][sel] == a) for a in comp.arms])
                Vk += wr[order].T @ Z

    for comp in model.components:
        pos, Wk, Vk = acc[id(comp)]
        kc = pos.size
        if kc == 0:
            continue
        fit, rs = comp.fit, comp.fit.risk_sets
        dlam = fit.baseline_increments[:kc]
        g = Wk / fit.s0[:kc]
        contrib = np.zeros(fit.n)
        ev = (rs.event_index >= 0) & (rs.event_index < kc)
        contrib[ev] += g[rs.event_index[ev]]
        cum = np.concatenate([[0.0], np.cumsum(g * dlam)])
        contrib -= fit.risk * cum[np.minimum(rs.n_at_risk_points, kc)]
        if Vk.shape[1]:
            contrib += comp.psi @ (dlam[:, None] * (Vk - Wk[:, None] * fit.xbar[:kc])).sum(axis=0)
        out[comp.rows] += contrib
    return out


def risk_influence(model: CauseSpecificModel, a: int, x, t: float, mode: str = "product-limit") -> np.ndarray:
    """Sum-scale influence function of ``F1_hat(t | a, x)`` for each subject of the fitting sample."""
    return cif_influence(model, np.asarray(x, dtype=float).reshape(1, -1), [a], [1.0], t, mode)


def aalen_johansen(data: Dataset, arm: int | None = None) -> RiskCurve:
    """Nonparametric cumulative incidences of both causes, optionally within one arm."""
    mask = np.ones(data.n, dtype=bool) if arm is None else data.treatment == arm
    return aalen_johansen_arrays(data.time[mask], data.event[mask])


def aalen_johansen_arrays(time, event) -> RiskCurve:
    na1 = nelson_aalen_arrays(time, event, CAUSE1)
    na2 = nelson_aalen_arrays(time, event, CAUSE2)
    grid = np.union1d(na1.jump_times, na2.jump_times)
    dl1 = np.zeros(grid.size)
    dl2 = np.zeros(grid.size)
    dl1[np.searchsorted(grid, na1.jump_times)] = na1.increments
    dl2[np.searchsorted(grid, na2.jump_times)] = na2.increments
    S, F1, F2 = compose(dl1[None], dl2[None])
    return RiskCurve(grid, F1[0], F2[0], S[0])
