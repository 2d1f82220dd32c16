"""Influence-function variance estimates and Wald intervals.

All vectors here are on the mean scale: an estimator ``psi_hat`` satisfies
``psi_hat - psi ~ mean(IF)`` and its standard error is ``sqrt(sum(IF**2)) / n``.
The nuisance parts (``phi``) are built from the sum-scale influence functions
of the working models, which already carry the ``1/n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ValidationError
from .risk import cif_influence

VARIANTS = ("tilde", "partial-phi", "full")


@dataclass(frozen=True, eq=False)
class InfluenceVector:
    """Per-subject influence values of an ATE estimate.

    ``variant`` says which nuisance terms are included: ``tilde`` (none),
    ``partial-phi`` (some, see the producing function) or ``full``.
    """

    values: np.ndarray
    variant: str
    estimator: str
    arm1: np.ndarray | None = None
    arm0: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variance variant {self.variant!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("influence values must be finite")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def se(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)) / self.n)


def wald_ci(estimate: float, if_values, level: float = 0.95):
    """``(se, lower, upper)`` with ``se = sqrt(sum IF^2) / n`` and a normal quantile."""
    if_values = np.asarray(if_values, dtype=float)
    if if_values.size < 2:
        raise ValidationError("at least two influence values are needed")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    se = float(np.sqrt(np.sum(if_values ** 2)) / if_values.size)
    z = NormalDist().inv_cdf(0.5 + level / 2)
    return se, estimate - z * se, estimate + z * se


def _with_phi(estimate, phi1, phi0, variant):
    tilde1, tilde0 = estimate.tilde_arms
    arm1 = tilde1 + phi1
    arm0 = tilde0 + phi0
    return InfluenceVector(arm1 - arm0, variant, estimate.estimator, arm1, arm0)


def tilde_influence(estimate) -> InfluenceVector:
    """Influence values treating every nuisance estimate as known."""
    tilde1, tilde0 = estimate.tilde_arms
    return InfluenceVector(tilde1 - tilde0, "tilde", estimate.estimator, tilde1, tilde0)


def if_tilde_aiptw(bundle, data, estimate) -> InfluenceVector:
    """Tilde influence of the doubly augmented estimator.

    ``F(tau|1,X) - F(tau|0,X) - ATE + (A/pi - (1-A)/(1-pi)) (w Y - F(tau|A,X) + I)``.
    """
    pi = bundle.pi
    F = bundle.risk_tau
    weight = bundle.treatment / pi - (1 - bundle.treatment) / (1.0 - pi)
    resid = bundle.ipcw * bundle.y - bundle.risk_tau_observed + bundle.augmentation
    values = F[:, 1] - F[:, 0] - estimate.ate + weight * resid
    return InfluenceVector(values, "tilde", estimate.estimator)


def outcome_phi(model, covariates, coefficients, tau, mode="product-limit"):
    """Mean-scale influence of ``mean_l coef_a[l] F(tau | a, X_l)`` through the outcome models.

    ``coefficients`` holds one weight vector per arm. Returns ``(phi1, phi0)``.
    """
    return tuple(cif_influence(model, covariates, a, coefficients[a], tau, mode) for a in (1, 0))


def propensity_phi(bundle, omegas, residuals, logistic_if, design):
    """Mean-scale influence through the propensity coefficients.

    The weight ``omega_a = 1[A=a]/P(A=a|X)`` moves with the logistic
    coefficients as ``omega_a (pi - a) x~``, so the arm-``a`` term is
    ``logistic_if @ sum_l omega_a,l (pi_l - a) R_l x~_l`` where ``R`` is what
    the weight multiplies. Truncated propensities are treated as smooth.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design.reshape(bundle.n, -1)
    Z = np.column_stack([np.ones(bundle.n), design])
    out = []
    for a in (1, 0):
        g = Z.T @ (omegas[a] * (bundle.pi - a) * residuals[a])
        out.append(logistic_if @ g)
    return out[0], out[1]


def if_gformula(bundle, data, model, estimate, mode="product-limit") -> InfluenceVector:
    """Plug-in deviation plus the outcome-model term averaged over the sample covariates."""
    phi1, phi0 = outcome_phi(model, data.covariates, [np.ones(data.n)] * 2, bundle.tau, mode)
    return _with_phi(estimate, phi1, phi0, "full")


def if_iptw_ipcw(bundle, data, logistic_if=None, design=None, stabilized=False) -> InfluenceVector:
    """Tilde term plus the propensity term of the inverse-weighted estimator.

    The censoring-model term is omitted, hence the ``partial-phi`` tag. With
    ``logistic_if=None`` the propensity is treated as known and the result is
    the tilde vector.
    """
    from .ate import _estimate
    estimate = _estimate("iptw-ipcw", bundle, stabilized)
    return treatment_adjusted(estimate, bundle, logistic_if, design, stabilized)


def treatment_adjusted(estimate, bundle, logistic_if=None, design=None, stabilized=False) -> InfluenceVector:
    """Add the propensity term to any weighted estimator's tilde influence."""
    if logistic_if is None:
        return tilde_influence(estimate)
    from .ate import arm_terms
    _, _, omegas, resid = arm_terms(estimate.estimator, bundle, stabilized)
    phi1, phi0 = propensity_phi(bundle, omegas, resid, logistic_if, design)
    return _with_phi(estimate, phi1, phi0, "partial-phi")


def if_partial_phi_aiptw(estimate, bundle, data, model, logistic_if=None, design=None,
                         stabilized=False, mode="product-limit") -> InfluenceVector:
    """Tilde term plus the outcome-model and propensity terms of an augmented estimator.

    The outcome term differentiates ``F(tau|a,X_l) (1 - omega_a,l)``; the
    dependence of the censoring augmentation on the outcome model and the
    censoring-model term are left out.
    """
    from .ate import arm_terms
    _, _, omegas, resid = arm_terms(estimate.estimator, bundle, stabilized)
    phi1, phi0 = outcome_phi(model, data.covariates, {a: 1.0 - omegas[a] for a in (0, 1)}, bundle.tau, mode)
    if logistic_if is not None:
        t1, t0 = propensity_phi(bundle, omegas, resid, logistic_if, design)
        phi1, phi0 = phi1 + t1, phi0 + t0
    return _with_phi(estimate, phi1, phi0, "partial-phi")
