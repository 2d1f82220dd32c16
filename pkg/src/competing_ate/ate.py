"""The five average-treatment-effect estimators of the tau-horizon cause-1 risk difference.

Each estimator is an average of arm-wise per-subject terms ``h_a``; the
risk in arm ``a`` is ``mean(h_a)`` and the ATE is ``risk1 - risk0``.
With ``w_i = 1[T_i <= tau, event_i != 0] / G(T_i- | A_i, X_i)``,
``omega_a = 1[A = a] / P(A = a | X)`` and ``I_i`` the censoring augmentation:

===============  =================================================
g-formula        ``F(tau | a, X)``
iptw-ipcw        ``omega_a w Y``
aiptw-ipcw       ``F(tau | a, X) + omega_a (w Y - F(tau | a, X))``
iptw-aipcw       ``omega_a (w Y + I)``
aiptw-aipcw      ``F(tau | a, X) + omega_a (w Y - F(tau | A, X) + I)``
===============  =================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, FormulaSpec, tau_feasibility
from .errors import ValidationError
from .inference import (InfluenceVector, if_gformula, if_partial_phi_aiptw, treatment_adjusted, wald_ci)
from .nuisance import NuisanceBundle, NuisanceModels, build_bundle, fit_nuisance_models

ESTIMATORS = ("g-formula", "iptw-ipcw", "aiptw-ipcw", "iptw-aipcw", "aiptw-aipcw")
VARIANCES = ("tilde", "partial-phi")

_USES_OUTCOME = {"g-formula", "aiptw-ipcw", "iptw-aipcw", "aiptw-aipcw"}
_USES_TREATMENT = set(ESTIMATORS) - {"g-formula"}
_USES_CENSORING = set(ESTIMATORS) - {"g-formula"}


@dataclass(frozen=True, eq=False)
class AteEstimate:
    """Point estimate, per-subject influence values and Wald interval for one estimator.

    ``if_values`` are on the mean scale: ``se = sqrt(sum(if_values**2)) / n``.
    ``if1``/``if0`` are the arm-wise influence values (``if_values = if1 - if0``)
    of the reported variant; ``tilde1``/``tilde0`` keep the tilde ones once a
    nuisance term has been added.
    ``standard_errors`` maps every variance variant computed to its SE.
    """

    estimator: str
    tau: float
    n: int
    risk1: float
    risk0: float
    ate: float
    if_values: np.ndarray
    se: float
    ci_lower: float
    ci_upper: float
    if1: np.ndarray
    if0: np.ndarray
    variance: str = "tilde"
    level: float = 0.95
    standard_errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    tilde1: np.ndarray | None = None
    tilde0: np.ndarray | None = None

    @property
    def tilde_arms(self):
        """Arm-wise influence values with every nuisance treated as known."""
        return (self.if1, self.if0) if self.tilde1 is None else (self.tilde1, self.tilde0)

    @property
    def se1(self) -> float:
        return float(np.sqrt(np.sum(self.if1 ** 2)) / self.n)

    @property
    def se0(self) -> float:
        return float(np.sqrt(np.sum(self.if0 ** 2)) / self.n)

    def covers(self, value: float) -> bool:
        return bool(self.ci_lower <= value <= self.ci_upper)

    def with_influence(self, influence: InfluenceVector, if1=None, if0=None) -> "AteEstimate":
        """Copy with the variance recomputed from ``influence``, arm-wise values included."""
        if1 = influence.arm1 if if1 is None else if1
        if0 = influence.arm0 if if0 is None else if0
        se, lo, hi = wald_ci(self.ate, influence.values, self.level)
        ses = dict(self.standard_errors)
        ses[influence.variant] = se
        tilde1, tilde0 = self.tilde_arms
        return replace(self, if_values=influence.values, se=se, ci_lower=lo, ci_upper=hi,
                       if1=self.if1 if if1 is None else if1, if0=self.if0 if if0 is None else if0,
                       variance=influence.variant, standard_errors=ses, tilde1=tilde1, tilde0=tilde0)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator, "tau": float(self.tau), "n": int(self.n),
            "risk1": float(self.risk1), "risk0": float(self.risk0), "ate": float(self.ate),
            "se": float(self.se), "lower": float(self.ci_lower), "upper": float(self.ci_upper),
            "diagnostics": {k: self.diagnostics.get(k) for k in
                            ("iterations", "positivity_min_G", "min_pi", "max_weight")},
        }


def _check_estimator(name):
    if name not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")


# ---- per-subject building blocks --------------------------------------

def ipcw_weight(i: int, bundle: NuisanceBundle) -> float:
    """``1[T_i <= tau, event_i != 0] / G(T_i- | A_i, X_i)``."""
    return float(bundle.ipcw[i])


def censoring_martingale(i: int, bundle: NuisanceBundle, t: float) -> float:
    """``N_i^C(t) - Lambda^C(t ^ T_i | A_i, X_i)``.

    The compensator follows the censoring fit's risk set, so a subject whose
    event falls on a censoring-hazard jump does not pick up that jump.
    """
    c = bundle.censoring_times
    K = int(np.searchsorted(c, t, side="right"))
    rows = np.array([i])
    if K == 0:
        return 0.0
    cg = c[:K]
    dl = bundle.censoring_increments(rows, K)
    at_risk = bundle.at_risk_censoring(rows, cg)
    jumps = bundle.censoring_jumps(rows, cg)
    return float(np.sum(jumps) - np.sum(at_risk * dl))


def augmentation_term(i: int, bundle: NuisanceBundle) -> float:
    """Censoring augmentation ``I_i``: integral of ``(F(tau) - F(s)) / (S(s) G(s))`` against ``dM_i^C``."""
    return float(bundle.augmentation[i])


def inverse_weighted_martingale(bundle: NuisanceBundle, horizon: float | None = None) -> np.ndarray:
    """Per subject ``sum_{s <= T_i ^ horizon} dM_i^C(s) / G(s | A_i, X_i)``.

    For a product-limit ``G`` this telescopes to ``1 - 1[uncensored at T_i ^ horizon] / G(...)``
    with the left limit ``G(T_i-)`` for subjects whose event sits on a censoring jump.
    """
    horizon = bundle.tau if horizon is None else horizon
    c = bundle.censoring_times
    K = int(np.searchsorted(c, horizon, side="right"))
    if K == 0:
        return np.zeros(bundle.n)
    rows = np.arange(bundle.n)
    cg = c[:K]
    G = bundle.censoring_survival(rows, K)
    dM = bundle.censoring_jumps(rows, cg) - bundle.at_risk_censoring(rows, cg) * bundle.censoring_increments(rows, K)
    return np.sum(dM / G, axis=1)


# ---- estimators -------------------------------------------------------

def arm_terms(estimator: str, bundle: NuisanceBundle, stabilized: bool = False):
    """Arm-wise per-subject terms and their tilde influence values.

    Returns ``(h, tilde, omega, residual)``, each a list indexed by arm. ``h[a]``
    averages to the arm-``a`` risk and ``tilde[a]`` is its mean-zero
    influence. ``omega[a]`` is the treatment weight (``None`` for the
    g-formula) and ``residual[a]`` the quantity it multiplies, centred at its
    weighted mean when weights are stabilized.
    """
    _check_estimator(estimator)
    n = bundle.n
    plug_in = estimator == "g-formula" or estimator.startswith("aiptw")
    h, tilde, omegas, resid = [], [], [], []
    for a in (0, 1):
        F_a = bundle.risk_tau[:, a] if plug_in else np.zeros(n)
        if estimator == "g-formula":
            h.append(F_a)
            tilde.append(F_a - F_a.mean())
            omegas.append(None)
            resid.append(None)
            continue
        bundle._require("pi")
        R = bundle.ipcw * bundle.y
        if estimator.endswith("aipcw"):
            R = R + bundle.augmentation
        if estimator.startswith("aiptw"):
            R = R - bundle.risk_tau_observed
        p_a = bundle.pi if a == 1 else 1.0 - bundle.pi
        omega = (bundle.treatment == a) / p_a
        if stabilized:
            # weights rescaled to average 1, so mean(h) is the Hajek risk
            omega = omega * (n / omega.sum())
        h_a = F_a + omega * R
        if stabilized:
            R = R - np.sum(omega * R) / n
            tilde.append(F_a - F_a.mean() + omega * R)
        else:
            tilde.append(h_a - h_a.mean())
        h.append(h_a)
        omegas.append(omega)
        resid.append(R)
    return h, tilde, omegas, resid


def _estimate(estimator, bundle, stabilized=False, level=0.95) -> AteEstimate:
    h, tilde, _, _ = arm_terms(estimator, bundle, stabilized)
    risk = [float(np.mean(h[a])) for a in (0, 1)]
    influence = tilde[1] - tilde[0]
    se, lo, hi = wald_ci(risk[1] - risk[0], influence, level)
    return AteEstimate(estimator, float(bundle.tau), bundle.n, risk[1], risk[0], risk[1] - risk[0],
                       influence, se, lo, hi, tilde[1], tilde[0], "tilde", level, {"tilde": se},
                       _diagnostics(estimator, bundle, stabilized))


def _diagnostics(estimator, bundle, stabilized):
    diag = {"iterations": None, "positivity_min_G": None, "min_pi": None, "max_weight": None}
    if estimator == "g-formula":
        return diag
    diag["positivity_min_G"] = bundle.positivity_min_G()
    pi = bundle.pi
    diag["min_pi"] = float(np.minimum(pi, 1.0 - pi).min())
    treat_w = np.where(bundle.treatment == 1, 1.0 / pi, 1.0 / (1.0 - pi))
    diag["max_weight"] = float(np.max(treat_w * np.where(bundle.observed, bundle.ipcw, 1.0)))
    return diag


def gformula(bundle: NuisanceBundle, data: Dataset | None = None, level: float = 0.95) -> AteEstimate:
    """Standardised difference of predicted tau-risks over the sample covariates."""
    return _estimate("g-formula", bundle, level=level)


def iptw_ipcw(bundle: NuisanceBundle, data: Dataset | None = None, stabilized: bool = False,
              level: float = 0.95) -> AteEstimate:
    return _estimate("iptw-ipcw", bundle, stabilized, level)


def aiptw_ipcw(bundle: NuisanceBundle, data: Dataset | None = None, stabilized: bool = False,
               level: float = 0.95) -> AteEstimate:
    return _estimate("aiptw-ipcw", bundle, stabilized, level)


def iptw_aipcw(bundle: NuisanceBundle, data: Dataset | None = None, stabilized: bool = False,
               level: float = 0.95) -> AteEstimate:
    return _estimate("iptw-aipcw", bundle, stabilized, level)


def aiptw_aipcw(bundle: NuisanceBundle, data: Dataset | None = None, stabilized: bool = False,
                level: float = 0.95) -> AteEstimate:
    return _estimate("aiptw-aipcw", bundle, stabilized, level)


ESTIMATOR_FUNCTIONS = {
    "g-formula": gformula, "iptw-ipcw": iptw_ipcw, "aiptw-ipcw": aiptw_ipcw,
    "iptw-aipcw": iptw_aipcw, "aiptw-aipcw": aiptw_aipcw,
}


def parse_estimators(estimators) -> tuple:
    """Normalise ``"all"``, a single name or an iterable of names to a tuple in canonical order."""
    if estimators is None or estimators == "all":
        return ESTIMATORS
    if isinstance(estimators, str):
        estimators = [e.strip() for e in estimators.split(",")]
    names = set()
    for e in estimators:
        if e == "all":
            return ESTIMATORS
        _check_estimator(e)
        names.add(e)
    if not names:
        raise ValidationError("no estimator requested")
    return tuple(e for e in ESTIMATORS if e in names)


@dataclass(eq=False)
class AteAnalysis:
    """Everything one pipeline run produced: the estimates, fitted models and bundle."""

    estimates: list
    models: NuisanceModels
    bundle: NuisanceBundle

    def __getitem__(self, name) -> AteEstimate:
        for e in self.estimates:
            if e.estimator == name:
                return e
        raise KeyError(name)


def analyze(data: Dataset, formulas: FormulaSpec, tau: float, estimators="all", *,
            variance: str = "tilde", truncation=None, stabilized: bool = False,
            mode: str = "product-limit", level: float = 0.95, propensity=None,
            models: NuisanceModels | None = None) -> AteAnalysis:
    """Fit the nuisance models the requested estimators need, then estimate.

    ``variance`` picks the reported variant for the augmented-treatment
    estimators (``tilde`` or ``partial-phi``); ``partial-phi`` also fills in
    ``standard_errors["partial-phi"]`` next to the tilde SE. The g-formula
    always includes its outcome-model term. The inverse-weighted estimators
    include the propensity term unless ``propensity`` supplies known
    probabilities.
    """
    names = parse_estimators(estimators)
    if variance not in VARIANCES:
        raise ValidationError(f"unknown variance variant {variance!r}; expected one of {VARIANCES}")
    report = tau_feasibility(data, tau)
    if not report.feasible:
        raise ValidationError("; ".join(report.messages))
    if models is None:
        models = fit_nuisance_models(
            data, formulas,
            outcome=bool(_USES_OUTCOME & set(names)),
            censoring=bool(_USES_CENSORING & set(names)),
            treatment=bool(_USES_TREATMENT & set(names)) and propensity is None)
    bundle = build_bundle(data, models, tau, mode, truncation, propensity)
    logistic_if = models.propensity_influence(data) if propensity is None else None
    design = models.treatment_design
    out = []
    for name in names:
        est = _estimate(name, bundle, stabilized if name != "g-formula" else False, level)
        if name == "g-formula":
            est = est.with_influence(if_gformula(bundle, data, models.outcome, est, mode))
        elif name.startswith("iptw"):
            est = est.with_influence(treatment_adjusted(est, bundle, logistic_if, design, stabilized))
        elif variance == "partial-phi":
            est = est.with_influence(if_partial_phi_aiptw(est, bundle, data, models.outcome, logistic_if,
                                                          design, stabilized, mode))
        est.diagnostics["iterations"] = models.iterations
        out.append(est)
    return AteAnalysis(out, models, bundle)


def estimate_ate(data: Dataset, formulas: FormulaSpec, tau: float, estimators="all", **options) -> list:
    """Estimates for each requested estimator on one shared set of nuisance fits.

    Keyword options are those of :func:`analyze`.
    """
    return analyze(data, formulas, tau, estimators, **options).estimates
