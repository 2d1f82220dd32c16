"""Average treatment effects on tau-horizon absolute risks in competing-risks data.

Five estimators of ``P(T <= tau, cause 1 | do(A=1)) - P(T <= tau, cause 1 | do(A=0))``
with influence-function standard errors: g-formula, IPTW-IPCW and their
treatment- and censoring-augmented versions.
"""
from .ate import (ESTIMATORS, AteAnalysis, AteEstimate, aiptw_aipcw, aiptw_ipcw, analyze, augmentation_term,
                  censoring_martingale, estimate_ate, gformula, ipcw_weight, iptw_aipcw, iptw_ipcw)
from .coxph import CoxFit, cox_influence, fit_cox, nelson_aalen, predict_cumhazard
from .dataset import Dataset, FormulaSpec, load_csv, tau_feasibility
from .errors import CompetingAteError, ConvergenceError, PositivityError, ValidationError
from .inference import InfluenceVector, wald_ci
from .logistic import fit_logistic, logistic_influence, predict_propensity
from .nuisance import NuisanceBundle, build_bundle, fit_nuisance_models
from .risk import RiskCurve, aalen_johansen, absolute_risk, fit_cause_specific, risk_influence
from .stepfunction import StepFunction

__version__ = "0.1.0"

__all__ = [
    "ESTIMATORS", "AteAnalysis", "AteEstimate", "CompetingAteError", "ConvergenceError", "CoxFit", "Dataset",
    "FormulaSpec", "InfluenceVector", "NuisanceBundle", "PositivityError", "RiskCurve", "StepFunction",
    "ValidationError", "aalen_johansen", "absolute_risk", "aiptw_aipcw", "aiptw_ipcw", "analyze",
    "augmentation_term", "build_bundle", "censoring_martingale", "cox_influence", "estimate_ate",
    "fit_cause_specific", "fit_cox", "fit_logistic", "fit_nuisance_models", "gformula", "ipcw_weight",
    "iptw_aipcw", "iptw_ipcw", "load_csv", "logistic_influence", "nelson_aalen", "predict_cumhazard",
    "predict_propensity", "risk_influence", "tau_feasibility", "wald_ci",
]
