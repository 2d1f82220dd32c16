"""Simulation lab: Cox-Weibull data-generating mechanism, truth oracle, bias and coverage runs.

Coefficient vectors have 19 entries in the order
``[intercept, X7..X12 (binary), X1..X6 (linear), X1^2..X6^2]``.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import multiprocessing
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ate import ESTIMATORS, analyze, parse_estimators
from .dataset import MODELS, Dataset, FormulaSpec
from .errors import CompetingAteError, ValidationError

log = logging.getLogger(__name__)

COVARIATES = tuple(f"X{j}" for j in range(1, 13))
CONTINUOUS = COVARIATES[:6]
BINARY = COVARIATES[6:]
N_COEF = 19
DROPPED_COVARIATES = ("X4", "X5", "X6", "X10", "X11", "X12")
DEGRADE_MODES = ("drop-covariates", "drop-squares", "both")
MISSPECIFICATIONS = {
    "none": {},
    "treatment": {"treatment": "both"},
    "outcome": {"outcome1": "both", "outcome2": "both"},
    "censoring": {"censoring": "drop-squares"},
}
MISSPECIFICATION_SCENARIOS = ("none", "treatment", "outcome", "censoring")


def coefficients(intercept=0.0, binary=None, linear=None, squares=None) -> tuple:
    """Assemble a 19-vector from dicts keyed by covariate name, e.g. ``linear={"X1": 0.5}``."""
    out = np.zeros(N_COEF)
    out[0] = intercept
    for offset, names, values in ((1, BINARY, binary), (7, CONTINUOUS, linear), (13, CONTINUOUS, squares)):
        for name, v in (values or {}).items():
            if name not in names:
                raise ValidationError(f"{name} is not a valid covariate for this block")
            out[offset + names.index(name)] = v
    return tuple(float(v) for v in out)


def _default_treatment():
    # confounders: X1, X2 are kept by every misspecified model, X4, X5, X10, X11 are not
    return coefficients(-0.6, {"X10": 0.5, "X11": 0.5},
                        {"X1": 0.5, "X2": -0.5, "X4": 0.5, "X5": 0.5}, {"X4": 0.1})


def _default_cause1():
    return coefficients(0.0, {"X10": 0.3, "X11": 0.3, "X7": -0.3},
                        {"X1": 0.3, "X2": -0.3, "X4": 0.3, "X5": 0.3}, {"X4": 0.15})


def _default_cause2():
    return coefficients(0.0, {"X8": 0.3, "X10": -0.3}, {"X1": -0.3, "X3": 0.3, "X6": 0.3})


def _default_censoring():
    return coefficients(0.0, {"X9": 0.3}, {"X1": 0.3, "X3": -0.3}, {"X1": 0.15, "X2": 0.15})


@dataclass(frozen=True)
class DgmSpec:
    """Parameters of the Cox-Weibull data-generating mechanism.

    Latent times have cumulative hazard ``scale * t**shape * exp(LP)``, where
    ``LP`` is the covariate linear predictor plus ``effect * A``. The
    default has no treatment effect on either cause, moderate confounding
    and roughly 30% cause-1 risk and 30% censoring by ``t = 10``.
    """

    treatment: tuple = field(default_factory=_default_treatment)
    cause1: tuple = field(default_factory=_default_cause1)
    cause2: tuple = field(default_factory=_default_cause2)
    censoring: tuple = field(default_factory=_default_censoring)
    effect_cause1: float = 0.0
    effect_cause2: float = 0.0
    effect_censoring: float = 0.2
    shape: tuple = (2.0, 2.0, 2.0)  # cause 1, cause 2, censoring
    scale: tuple = (0.003, 0.001, 0.0035)
    seed: int = 1

    def __post_init__(self):
        for name in ("treatment", "cause1", "cause2", "censoring"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != N_COEF:
                raise ValidationError(f"{name}: expected {N_COEF} coefficients, got {len(v)}")
            object.__setattr__(self, name, v)
        shape = tuple(float(x) for x in self.shape)
        scale = tuple(float(x) for x in self.scale)
        if len(shape) != 3 or len(scale) != 3:
            raise ValidationError("shape and scale need one value per latent time")
        if min(shape) <= 0 or scale[0] <= 0 or scale[1] <= 0 or scale[2] < 0:
            raise ValidationError("Weibull shapes and event scales must be positive (censoring scale >= 0)")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "scale", scale)

    def randomized(self) -> "DgmSpec":
        """Same mechanism with treatment independent of the covariates."""
        return replace(self, treatment=(self.treatment[0],) + (0.0,) * (N_COEF - 1))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _features(X):
    """Columns matching the coefficient order (without the intercept)."""
    return np.column_stack([X[:, 6:], X[:, :6], X[:, :6] ** 2])


def _linear(coef, F):
    coef = np.asarray(coef)
    return coef[0] + F @ coef[1:]


def _weibull(U, shape, scale, lp):
    if scale == 0:
        return np.full(U.shape, np.inf)
    return (-np.log(U) / (scale * np.exp(lp))) ** (1.0 / shape)


def simulate_covariates(n: int, rng) -> np.ndarray:
    return np.column_stack([rng.standard_normal((n, 6)), rng.binomial(1, 0.5, (n, 6)).astype(float)])


def simulate_dataset(spec: DgmSpec, n: int, rng=None, latent: bool = False):
    """Draw ``n`` subjects. With ``latent=True`` also return the latent times and potential outcomes' inputs.

    Event codes follow the minimum latent time; a censoring time equal to an
    event time counts as the event.
    """
    if n < 2:
        raise ValidationError("n must be at least 2")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    X = simulate_covariates(n, rng)
    F = _features(X)
    p = 1.0 / (1.0 + np.exp(-_linear(spec.treatment, F)))
    A = (rng.random(n) < p).astype(int)
    U = rng.random((n, 3))
    lps = [_linear(spec.cause1, F) + spec.effect_cause1 * A,
           _linear(spec.cause2, F) + spec.effect_cause2 * A,
           _linear(spec.censoring, F) + spec.effect_censoring * A]
    T1, T2, C = (_weibull(U[:, j], spec.shape[j], spec.scale[j], lps[j]) for j in range(3))
    T = np.minimum(np.minimum(T1, T2), C)
    event = np.where(T1 <= T2, 1, 2)
    event = np.where(C < np.minimum(T1, T2), 0, event)
    data = Dataset(T, event, A, X, COVARIATES)
    if latent:
        return data, {"T1": T1, "T2": T2, "C": C, "propensity": p}
    return data


def potential_outcomes(spec: DgmSpec, m: int, tau: float, rng):
    """``(Y0, Y1)``: cause-1 status by ``tau`` with both arms forced, sharing covariates and uniforms."""
    X = simulate_covariates(m, rng)
    F = _features(X)
    U = rng.random((m, 2))
    base1, base2 = _linear(spec.cause1, F), _linear(spec.cause2, F)
    out = []
    for a in (0, 1):
        T1 = _weibull(U[:, 0], spec.shape[0], spec.scale[0], base1 + spec.effect_cause1 * a)
        T2 = _weibull(U[:, 1], spec.shape[1], spec.scale[1], base2 + spec.effect_cause2 * a)
        out.append(((T1 <= tau) & (T1 <= T2)).astype(float))
    return out[0], out[1]


_ORACLE_CACHE = {}


def true_ate_oracle(spec: DgmSpec, tau: float, m: int = 1_000_000, seed: int | None = None,
                    return_se: bool = False, chunk: int = 250_000):
    """Monte Carlo value of ``E[Y1(tau) - Y0(tau)]`` from uncensored potential outcomes.

    Both arms reuse each subject's uniforms, so the estimate is exactly 0
    when treatment has no effect on either cause.
    """
    if m < 100_000:
        raise ValidationError("oracle sample size must be at least 1e5")
    key = (spec, float(tau), int(m), seed)
    if key not in _ORACLE_CACHE:
        rng = np.random.default_rng([spec.seed if seed is None else seed, 0x7A11])
        total, total_sq, done = 0.0, 0.0, 0
        while done < m:
            k = min(chunk, m - done)
            y0, y1 = potential_outcomes(spec, k, tau, rng)
            d = y1 - y0
            total += float(d.sum())
            total_sq += float((d * d).sum())
            done += k
        mean = total / m
        sd = np.sqrt(max(total_sq / m - mean * mean, 0.0))
        _ORACLE_CACHE[key] = (mean, float(sd / np.sqrt(m)))
    mean, se = _ORACLE_CACHE[key]
    return (mean, se) if return_se else mean


def correct_formula(by_arm=()) -> FormulaSpec:
    """The working models that match the mechanism: all 12 covariates and the 6 squares."""
    return FormulaSpec.uniform(COVARIATES, CONTINUOUS, by_arm)


def degrade_formula(spec: FormulaSpec, mode: str | None, models=MODELS) -> FormulaSpec:
    """Remove squares (always) and, for ``drop-covariates``/``both``, X4-X6 and X10-X12.

    ``mode=None`` returns ``spec`` unchanged. Only the listed models are touched.
    """
    if mode is None:
        return spec
    if mode not in DEGRADE_MODES:
        raise ValidationError(f"unknown degrade mode {mode!r}; expected one of {DEGRADE_MODES}")
    out = spec
    for m in models:
        cov = spec.covariates[m]
        if mode in ("drop-covariates", "both"):
            cov = tuple(c for c in cov if c not in DROPPED_COVARIATES)
        out = out.with_model(m, cov, ())
    return out


def misspecified_formula(kind: str, base: FormulaSpec | None = None) -> FormulaSpec:
    """Working models of one of the four bias scenarios: ``none``, ``treatment``, ``outcome``, ``censoring``."""
    if kind not in MISSPECIFICATIONS:
        raise ValidationError(f"unknown misspecification {kind!r}; expected one of {tuple(MISSPECIFICATIONS)}")
    spec = correct_formula() if base is None else base
    for model, mode in MISSPECIFICATIONS[kind].items():
        spec = degrade_formula(spec, mode, (model,))
    return spec


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation experiment."""

    name: str = "scenario"
    dgm: DgmSpec = field(default_factory=DgmSpec)
    misspecify: str = "none"
    n: int = 500
    replicates: int = 300
    tau: float = 10.0
    seed: int = 1
    estimators: tuple = ESTIMATORS
    variance: str = "partial-phi"
    oracle_size: int = 1_000_000
    truth: float | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if self.n < 2:
            raise ValidationError("n must be at least 2")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")
        misspecified_formula(self.misspecify)
        object.__setattr__(self, "estimators", parse_estimators(self.estimators))

    @property
    def formulas(self) -> FormulaSpec:
        return misspecified_formula(self.misspecify)

    def true_value(self) -> float:
        if self.truth is not None:
            return float(self.truth)
        return true_ate_oracle(self.dgm, self.tau, self.oracle_size)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "dgm"}
        out["estimators"] = list(self.estimators)
        out["dgm"] = self.dgm.to_dict()
        return out


def result_columns(spec: ScenarioSpec) -> list:
    """(estimator, variance) pairs recorded per replicate."""
    cols = []
    for e in spec.estimators:
        if e == "g-formula":
            cols.append((e, "full"))
        elif e.startswith("iptw"):
            cols.append((e, "partial-phi"))
        else:
            cols.append((e, "tilde"))
            if spec.variance == "partial-phi":
                cols.append((e, "partial-phi"))
    return cols


def run_replicate(spec: ScenarioSpec, rep: int):
    """``(estimates, ses, failure)`` for one replicate; arrays follow :func:`result_columns`."""
    cols = result_columns(spec)
    rng = np.random.default_rng([spec.seed, rep])
    try:
        data = simulate_dataset(spec.dgm, spec.n, rng)
        estimates = analyze(data, spec.formulas, spec.tau, spec.estimators, variance=spec.variance).estimates
    except CompetingAteError as exc:
        return np.full(len(cols), np.nan), np.full(len(cols), np.nan), type(exc).__name__
    by_name = {e.estimator: e for e in estimates}
    est = np.array([by_name[e].ate for e, _ in cols])
    se = np.array([by_name[e].standard_errors[v] for e, v in cols])
    return est, se, None


@dataclass(frozen=True, eq=False)
class SimSummary:
    """Aggregated results; ``rows`` has one dict per (estimator, variance) pair."""

    scenario: ScenarioSpec
    truth: float
    rows: list
    estimates: np.ndarray  # replicates x columns
    standard_errors: np.ndarray
    failures: dict

    def row(self, estimator: str, variance: str | None = None) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and (variance is None or r["variance"] == variance):
                return r
        raise KeyError((estimator, variance))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "truth": self.truth, "failures": dict(self.failures),
                "rows": self.rows}

    def to_json(self, path=None) -> str:
        text = json.dumps(_round17(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path):
        write_summary_csv([self], path)


SUMMARY_FIELDS = ("scenario", "n", "estimator", "variance", "truth", "replicates", "ok", "mean_estimate",
                  "bias", "sd", "mc_se", "mean_se", "se_sd_ratio", "coverage", "failures")


def write_summary_csv(summaries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for s in summaries:
            for r in s.rows:
                w.writerow([_fmt(r[k]) for k in SUMMARY_FIELDS])


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _round17(obj):
    if isinstance(obj, float):
        return float(format(obj, ".17g")) if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round17(v) for v in obj]
    return obj


def summarize(spec: ScenarioSpec, truth: float, est: np.ndarray, se: np.ndarray, failures: list) -> SimSummary:
    level_z = 1.959963984540054
    rows = []
    counts = {}
    for f in failures:
        if f is not None:
            counts[f] = counts.get(f, 0) + 1
    n_fail = sum(counts.values())
    for j, (name, variant) in enumerate(result_columns(spec)):
        ok = np.isfinite(est[:, j]) & np.isfinite(se[:, j])
        e, s = est[ok, j], se[ok, j]
        k = e.size
        sd = float(np.std(e, ddof=1)) if k > 1 else 0.0
        mean_se = float(np.mean(s)) if k else float("nan")
        rows.append({
            "scenario": spec.name, "n": spec.n, "estimator": name, "variance": variant,
            "truth": float(truth), "replicates": spec.replicates, "ok": int(k),
            "mean_estimate": float(np.mean(e)) if k else float("nan"),
            "bias": float(np.mean(e) - truth) if k else float("nan"),
            "sd": sd, "mc_se": sd / np.sqrt(k) if k else float("nan"),
            "mean_se": mean_se, "se_sd_ratio": mean_se / sd if sd > 0 else float("nan"),
            "coverage": float(np.mean(np.abs(e - truth) <= level_z * s)) if k else float("nan"),
            "failures": n_fail,
        })
    return SimSummary(spec, float(truth), rows, est, se, counts)


def _worker(args):
    spec, rep = args
    return rep, run_replicate(spec, rep)


def default_workers() -> int:
    value = os.environ.get("COMPETING_ATE_WORKERS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ValidationError("COMPETING_ATE_WORKERS must be an integer") from None
    return 1


def run_scenario(spec: ScenarioSpec, workers: int | None = None, progress_every: int = 50) -> SimSummary:
    """Simulate, estimate and aggregate ``spec.replicates`` replicates.

    Each replicate draws from its own stream seeded by ``(seed, replicate)``,
    so the summary does not depend on the number of worker processes.
    Estimation failures are counted, not raised.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    truth = spec.true_value()
    cols = result_columns(spec)
    est = np.full((spec.replicates, len(cols)), np.nan)
    se = np.full((spec.replicates, len(cols)), np.nan)
    failures = [None] * spec.replicates
    jobs = [(spec, r) for r in range(spec.replicates)]
    if workers == 1:
        results = map(_worker, jobs)
        pool = None
    else:
        pool = multiprocessing.get_context("spawn" if os.name == "nt" else "fork").Pool(workers)
        results = pool.imap_unordered(_worker, jobs, chunksize=max(1, spec.replicates // (8 * workers)))
    try:
        for done, (rep, (e, s, fail)) in enumerate(results, start=1):
            est[rep], se[rep], failures[rep] = e, s, fail
            if progress_every and done % progress_every == 0:
                log.info("%s: %d/%d replicates done", spec.name, done, spec.replicates)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return summarize(spec, truth, est, se, failures)


def misspecification_scenarios(n=500, replicates=300, tau=10.0, seed=1, dgm: DgmSpec | None = None, **kw) -> list:
    """The four bias scenarios: all models correct, then one of treatment, outcome or censoring misspecified."""
    dgm = DgmSpec() if dgm is None else dgm
    return [ScenarioSpec(name=f"misspecified-{k}" if k != "none" else "correct", dgm=dgm, misspecify=k,
                         n=n, replicates=replicates, tau=tau, seed=seed, **kw) for k in MISSPECIFICATION_SCENARIOS]


def coverage_scenarios(sizes=(100, 500, 1000), replicates=1000, tau=10.0, seed=1,
                       dgm: DgmSpec | None = None, **kw) -> list:
    dgm = DgmSpec() if dgm is None else dgm
    return [ScenarioSpec(name=f"coverage-n{n}", dgm=dgm, n=n, replicates=replicates, tau=tau, seed=seed, **kw)
            for n in sizes]


# ---- config files ----------------------------------------------------

_DGM_VECTOR_KEYS = ("treatment", "cause1", "cause2", "censoring", "shape", "scale")
_DGM_SCALAR_KEYS = ("effect_cause1", "effect_cause2", "effect_censoring")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def read_scenarios(path) -> list:
    """Scenarios from an INI file with one ``[scenario:NAME]`` section each.

    Keys: ``n``, ``replicates``, ``tau``, ``seed``, ``misspecify``,
    ``estimators``, ``variance``, ``oracle_size``, ``truth`` and the
    mechanism keys ``treatment``/``cause1``/``cause2``/``censoring``
    (19 numbers), ``shape``/``scale`` (3 numbers) and ``effect_*``.
    A ``[DEFAULT]`` section supplies shared values.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    out = []
    for section in parser.sections():
        if not section.startswith("scenario:"):
            raise ValidationError(f"{path}: unexpected section [{section}]")
        out.append(_scenario_from_section(section.split(":", 1)[1].strip(), parser[section]))
    if not out:
        raise ValidationError(f"{path}: no [scenario:NAME] sections")
    return out


def _scenario_from_section(name, sec) -> ScenarioSpec:
    known = set(_DGM_VECTOR_KEYS) | set(_DGM_SCALAR_KEYS) | {
        "n", "replicates", "tau", "seed", "misspecify", "estimators", "variance", "oracle_size", "truth"}
    unknown = set(sec.keys()) - known
    if unknown:
        raise ValidationError(f"scenario {name}: unknown key(s) {sorted(unknown)}")
    try:
        dgm_kw = {k: _floats(sec[k]) for k in _DGM_VECTOR_KEYS if k in sec}
        dgm_kw.update({k: float(sec[k]) for k in _DGM_SCALAR_KEYS if k in sec})
        seed = int(sec.get("seed", "1"))
        return ScenarioSpec(
            name=name, dgm=DgmSpec(seed=seed, **dgm_kw), misspecify=sec.get("misspecify", "none"),
            n=int(sec.get("n", "500")), replicates=int(sec.get("replicates", "300")),
            tau=float(sec.get("tau", "10")), seed=seed,
            estimators=sec.get("estimators", "all"), variance=sec.get("variance", "partial-phi"),
            oracle_size=int(sec.get("oracle_size", "1000000")),
            truth=float(sec["truth"]) if "truth" in sec else None)
    except ValueError as exc:
        raise ValidationError(f"scenario {name}: {exc}") from None


def write_scenarios(scenarios, path):
    parser = configparser.ConfigParser()
    for s in scenarios:
        d = s.dgm
        parser[f"scenario:{s.name}"] = {
            "n": str(s.n), "replicates": str(s.replicates), "tau": repr(s.tau), "seed": str(s.seed),
            "misspecify": s.misspecify, "estimators": ",".join(s.estimators), "variance": s.variance,
            "oracle_size": str(s.oracle_size),
            **({"truth": repr(s.truth)} if s.truth is not None else {}),
            **{k: " ".join(repr(v) for v in getattr(d, k)) for k in _DGM_VECTOR_KEYS},
            **{k: repr(getattr(d, k)) for k in _DGM_SCALAR_KEYS},
        }
    with open(path, "w") as fh:
        parser.write(fh)
