"""Fitting the nuisance working models and evaluating them per subject at the horizon."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .coxph import fit_cox_arrays
from .dataset import CENSORED, Dataset, FormulaSpec, design_matrix, design_rows
from .errors import ConvergenceError, PositivityError, ValidationError
from .logistic import LogisticFit, fit_logistic, logistic_influence, predict_propensity
from .risk import CauseSpecificModel, HazardPrediction, _Component, compose, fit_cause_specific

EPS_G = 1e-6
EPS_S = 1e-6
_CELLS = 1_000_000


@dataclass(eq=False)
class CensoringModel:
    """Cox working model(s) for the censoring hazard."""

    spec: FormulaSpec
    covariate_names: tuple
    components: list

    @property
    def times(self):
        return np.unique(np.concatenate([c.fit.event_times for c in self.components]))

    @property
    def converged(self):
        return all(c.fit.converged for c in self.components)

    @property
    def iterations(self):
        return {"censoring" + ("" if len(c.arms) == 2 else f"[arm={c.arms[0]}]"): c.fit.iterations
                for c in self.components}

    def hazard_prediction(self, W) -> HazardPrediction:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        times = self.times
        base = np.zeros((2, times.size))
        lp = np.zeros((W.shape[0], 2))
        for comp in self.components:
            pos = np.searchsorted(times, comp.fit.event_times)
            for a in comp.arms:
                base[a, pos] = comp.fit.baseline_increments
                Z = design_rows(W, self.covariate_names, self.spec, "censoring", a)
                lp[:, a] = comp.fit.linear_predictor(Z) if Z.shape[1] else 0.0
        return HazardPrediction(times, base, lp)


def fit_censoring(data: Dataset, spec: FormulaSpec) -> CensoringModel | None:
    """Cox model for the censoring hazard; ``None`` when nobody is censored (G = 1)."""
    if not np.any(data.event == CENSORED):
        return None
    groups = [((0,), data.treatment == 0), ((1,), data.treatment == 1)] if "censoring" in spec.by_arm \
        else [((0, 1), np.ones(data.n, dtype=bool))]
    comps = []
    for arms, mask in groups:
        rows = np.flatnonzero(mask)
        if not np.any(data.event[rows] == CENSORED):
            continue
        Z = design_rows(data.covariates[rows], data.covariate_names, spec, "censoring", data.treatment[rows])
        comps.append(_Component(CENSORED, arms, fit_cox_arrays(data.time[rows], data.event[rows], Z, CENSORED), rows))
    return CensoringModel(spec, data.covariate_names, comps)


@dataclass(eq=False)
class NuisanceModels:
    """Fitted working models; any of them may be absent when not needed."""

    outcome: CauseSpecificModel | None = None
    censoring: CensoringModel | None = None
    propensity: LogisticFit | None = None
    treatment_design: np.ndarray | None = None

    def check_converged(self):
        for name, model in (("outcome", self.outcome), ("censoring", self.censoring),
                            ("treatment", self.propensity)):
            if model is not None and not model.converged:
                raise ConvergenceError("Newton-Raphson did not converge", name)

    @property
    def iterations(self) -> dict:
        out = {}
        if self.outcome is not None:
            out.update(self.outcome.iterations)
        if self.censoring is not None:
            out.update(self.censoring.iterations)
        if self.propensity is not None:
            out["treatment"] = self.propensity.iterations
        return out

    def propensity_influence(self, data: Dataset) -> np.ndarray | None:
        """Sum-scale influence rows of the logistic coefficients (intercept first)."""
        if self.propensity is None:
            return None
        return logistic_influence(self.propensity, self.treatment_design, data.treatment)


def fit_nuisance_models(data: Dataset, spec: FormulaSpec, outcome=True, censoring=True,
                        treatment=True) -> NuisanceModels:
    spec.validate(data.covariate_names)
    models = NuisanceModels()
    if outcome:
        models.outcome = fit_cause_specific(data, spec)
    if censoring:
        models.censoring = fit_censoring(data, spec)
    if treatment:
        models.treatment_design = design_matrix(data, spec, "treatment").matrix
        models.propensity = fit_logistic(models.treatment_design, data.treatment)
    models.check_converged()
    return models


@dataclass(eq=False)
class NuisanceBundle:
    """Working-model predictions per subject, evaluated for the estimators at horizon ``tau``.

    ``outcome`` holds the cause-1 and cause-2 hazard predictions (both arms),
    ``censoring`` the censoring hazard prediction (``None`` means no
    censoring, G = 1) and ``pi`` the propensity ``P(A=1|W)``.
    Per-subject quantities are computed lazily and cached.
    """

    tau: float
    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    outcome: tuple | None = None
    censoring: HazardPrediction | None = None
    pi: np.ndarray | None = None
    mode: str = "product-limit"
    eps_G: float = EPS_G
    eps_S: float = EPS_S

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.event = np.asarray(self.event)
        self.treatment = np.asarray(self.treatment)
        if self.pi is not None:
            self.pi = np.asarray(self.pi, dtype=float)
            if np.any(self.pi <= 0) or np.any(self.pi >= 1):
                bad = int(np.flatnonzero((self.pi <= 0) | (self.pi >= 1))[0])
                raise PositivityError(f"propensity outside (0, 1) for subject {bad}", bad)
        if self.outcome is not None:
            h1, h2 = self.outcome
            if h1.times.shape != h2.times.shape or np.any(h1.times != h2.times):
                grid = np.union1d(h1.times, h2.times)
                self.outcome = (h1.on_grid(grid), h2.on_grid(grid))

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def y(self) -> np.ndarray:
        return ((self.time <= self.tau) & (self.event == 1)).astype(float)

    @property
    def observed(self) -> np.ndarray:
        """1[T <= tau, event != 0]: the outcome status by tau is known and the subject failed."""
        return (self.time <= self.tau) & (self.event != CENSORED)

    def _require(self, what):
        if what == "outcome" and self.outcome is None:
            raise ValidationError("bundle has no outcome model")
        if what == "pi" and self.pi is None:
            raise ValidationError("bundle has no propensity model")

    # ---- outcome ------------------------------------------------------

    @property
    def _outcome_upto(self):
        return int(np.searchsorted(self.outcome[0].times, self.tau, side="right"))

    def outcome_curves(self, rows, arms, upto=None):
        """``(S, F1)`` on the outcome grid for the given subjects and arms."""
        self._require("outcome")
        K = self._outcome_upto if upto is None else upto
        h1, h2 = self.outcome
        S, F1, _ = compose(h1.increments(rows, arms, K), h2.increments(rows, arms, K), self.mode)
        return S, F1

    @cached_property
    def risk_tau(self) -> np.ndarray:
        """F1_hat(tau | a, X_i) as an (n, 2) array, columns a = 0, 1."""
        self._require("outcome")
        out = np.zeros((self.n, 2))
        K = self._outcome_upto
        if K == 0:
            return out
        step = max(1, _CELLS // K)
        for lo in range(0, self.n, step):
            rows = np.arange(lo, min(self.n, lo + step))
            for a in (0, 1):
                out[rows, a] = self.outcome_curves(rows, a, K)[1][:, -1]
        return out

    @property
    def risk_tau_observed(self) -> np.ndarray:
        return self.risk_tau[np.arange(self.n), self.treatment]

    # ---- censoring ----------------------------------------------------

    @property
    def censoring_times(self) -> np.ndarray:
        return np.empty(0) if self.censoring is None else self.censoring.times

    def censoring_increments(self, rows, upto=None) -> np.ndarray:
        """dLambda^C(c_k | A_i, X_i) on the censoring grid."""
        rows = np.asarray(rows)
        if self.censoring is None:
            return np.zeros((rows.size, 0))
        return self.censoring.increments(rows, self.treatment[rows], upto)

    def censoring_survival(self, rows, upto=None) -> np.ndarray:
        """Product-limit G_hat(c_k | A_i, X_i), right-continuous, on the censoring grid."""
        dl = self.censoring_increments(rows, upto)
        factor = 1.0 - dl
        if np.any(factor < -1e-12):
            r, _ = np.argwhere(factor < -1e-12)[0]
            subject = int(np.asarray(rows)[r])
            raise PositivityError(f"censoring hazard increment above 1 for subject {subject}", subject)
        return np.cumprod(np.maximum(factor, 0.0), axis=1)

    def at_risk_censoring(self, rows, times) -> np.ndarray:
        """Censoring risk-set membership: events at the same clock time leave first."""
        rows = np.asarray(rows)
        T = self.time[rows][:, None]
        cens = (self.event[rows] == CENSORED)[:, None]
        return (times[None, :] < T) | ((times[None, :] == T) & cens)

    def censoring_jumps(self, rows, times) -> np.ndarray:
        rows = np.asarray(rows)
        return ((times[None, :] == self.time[rows][:, None])
                & (self.event[rows] == CENSORED)[:, None]).astype(float)

    @cached_property
    def _censoring_terms(self):
        """(G(T-), augmentation I, smallest G met) per subject, computed in one pass."""
        n = self.n
        G_minus = np.ones(n)
        aug = np.zeros(n)
        min_G = np.ones(n)
        if self.censoring is None:
            return G_minus, aug, min_G
        c = self.censoring_times
        Kc = int(np.searchsorted(c, self.tau, side="right"))
        if Kc == 0:
            return G_minus, aug, min_G
        cg = c[:Kc]
        need_aug = self.outcome is not None
        if need_aug:
            Ko = self._outcome_upto
            og = self.outcome[0].times[:Ko]
            j = np.searchsorted(og, cg, side="right") - 1
            F_tau = self.risk_tau_observed
        step = max(1, _CELLS // max(Kc, 1))
        for lo in range(0, n, step):
            rows = np.arange(lo, min(n, lo + step))
            G = self.censoring_survival(rows, Kc)
            n_before = np.searchsorted(cg, self.time[rows], side="left")
            G_minus[rows] = np.concatenate([np.ones((rows.size, 1)), G], axis=1)[np.arange(rows.size), n_before]
            R = self.at_risk_censoring(rows, cg)
            dN = self.censoring_jumps(rows, cg)
            active = (R | (dN > 0))
            min_G[rows] = np.where(active, G, 1.0).min(axis=1)
            if not need_aug:
                continue
            dM = dN - R * self.censoring_increments(rows, Kc)
            S_o, F_o = self.outcome_curves(rows, self.treatment[rows], Ko)
            pad = lambda a, v: np.concatenate([np.full((rows.size, 1), v), a], axis=1)[:, j + 1]
            Sc, Fc = pad(S_o, 1.0), pad(F_o, 0.0)
            bad = active & ((Sc <= self.eps_S) | (G <= self.eps_G))
            if bad.any():
                r = int(rows[np.argwhere(bad)[0, 0]])
                raise PositivityError(f"survival or censoring survival below guard for subject {r}", r)
            integrand = (F_tau[rows, None] - Fc) / np.where(active, Sc * G, 1.0)
            aug[rows] = np.sum(np.where(active, integrand * dM, 0.0), axis=1)
        return G_minus, aug, min_G

    @property
    def G_minus(self) -> np.ndarray:
        """G_hat(T_i- | A_i, X_i), the left limit at the observed time."""
        return self._censoring_terms[0]

    @property
    def augmentation(self) -> np.ndarray:
        self._require("outcome")
        return self._censoring_terms[1]

    @cached_property
    def ipcw(self) -> np.ndarray:
        """1[T_i <= tau, event_i != 0] / G_hat(T_i- | A_i, X_i)."""
        obs = self.observed
        G = self.G_minus
        bad = obs & (G <= self.eps_G)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise PositivityError(f"censoring survival {G[i]:.3g} at the event time of subject {i} "
                                  f"is below the guard {self.eps_G:g}", i)
        return np.where(obs, 1.0 / np.where(obs, G, 1.0), 0.0)

    def positivity_min_G(self) -> float:
        G = self._censoring_terms[2]
        return float(min(G.min(), self.G_minus[self.observed].min(initial=1.0)))


def build_bundle(data: Dataset, models: NuisanceModels, tau: float, mode: str = "product-limit",
                 truncation=None, pi=None) -> NuisanceBundle:
    """Evaluate fitted working models for every subject. ``pi`` overrides the propensity model."""
    outcome = None
    if models.outcome is not None:
        outcome = (models.outcome.hazard_prediction(1, data.covariates),
                   models.outcome.hazard_prediction(2, data.covariates))
    censoring = None
    if models.censoring is not None:
        censoring = models.censoring.hazard_prediction(data.covariates)
    if pi is None and models.propensity is not None:
        pi = predict_propensity(models.propensity, models.treatment_design, truncation)
    return NuisanceBundle(tau, data.time, data.event, data.treatment, outcome, censoring, pi, mode)
