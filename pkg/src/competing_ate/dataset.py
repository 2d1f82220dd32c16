"""Competing-risks datasets, CSV ingestion and design matrices."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

MODELS = ("outcome1", "outcome2", "censoring", "treatment")
CENSORED, CAUSE1, CAUSE2 = 0, 1, 2


@dataclass(frozen=True)
class ObservedSample:
    """One subject: observed time, event code, binary treatment, covariates."""

    time: float
    event: int
    treatment: int
    covariates: tuple

    def outcome(self, tau: float) -> int:
        """Indicator of a cause-1 event by ``tau``."""
        return int(self.time <= tau and self.event == CAUSE1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented competing-risks sample.

    ``event`` uses 0 for censored, 1 for the cause of interest and 2 for the
    competing cause. Arrays are copied and made read-only on construction.
    """

    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        time = np.array(self.time, dtype=float).ravel()
        event = np.array(self.event).ravel()
        treatment = np.array(self.treatment).ravel()
        n = time.size
        cov = np.array(self.covariates, dtype=float)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        if cov.ndim == 1:
            cov = cov.reshape(n, -1)
        names = tuple(self.covariate_names) or tuple(f"X{j + 1}" for j in range(cov.shape[1]))

        if event.size != n or treatment.size != n or cov.shape[0] != n:
            raise ValidationError("time, event, treatment and covariates must have the same length")
        if len(names) != cov.shape[1]:
            raise ValidationError("covariate_names does not match the number of covariate columns")
        if len(set(names)) != len(names):
            raise ValidationError("duplicate covariate names")
        if n < 2:
            raise ValidationError("at least two subjects are required")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValidationError("times must be finite and nonnegative")
        if not np.all(np.isin(event, (0, 1, 2))):
            raise ValidationError("event codes must be in {0, 1, 2}")
        if not np.all(np.isin(treatment, (0, 1))):
            raise ValidationError("treatment must be in {0, 1}")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariates must be finite")
        event = event.astype(np.int64)
        treatment = treatment.astype(np.int64)
        if treatment.min() == treatment.max():
            raise ValidationError("both treatment arms required")
        if not np.any(event == CAUSE1):
            raise ValidationError("at least one event of cause 1 is required")

        for arr in (time, event, treatment, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def samples(self) -> list:
        return [
            ObservedSample(float(t), int(e), int(a), tuple(float(v) for v in x))
            for t, e, a, x in zip(self.time, self.event, self.treatment, self.covariates)
        ]

    def __len__(self):
        return self.n

    def outcome(self, tau: float) -> np.ndarray:
        """Y(tau) = 1[T <= tau, cause 1], observed wherever the subject is uncensored."""
        return ((self.time <= tau) & (self.event == CAUSE1)).astype(float)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise ValidationError(f"unknown covariate {name!r}") from None

    @property
    def time_order(self) -> np.ndarray:
        """Stable index sorting subjects by observed time."""
        return np.argsort(self.time, kind="stable")

    def subset(self, mask) -> "Dataset":
        return Dataset(self.time[mask], self.event[mask], self.treatment[mask],
                       self.covariates[mask], self.covariate_names)

    def take(self, idx) -> "Dataset":
        return self.subset(np.asarray(idx))

    def with_times(self, time) -> "Dataset":
        return Dataset(time, self.event, self.treatment, self.covariates, self.covariate_names)

    def to_csv(self, path, time="time", event="event", treatment="treatment"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([time, event, treatment, *self.covariate_names])
            for t, e, a, x in zip(self.time, self.event, self.treatment, self.covariates):
                writer.writerow([repr(float(t)), int(e), int(a), *(repr(float(v)) for v in x)])


def load_csv(path, time="time", event="event", treatment="treatment",
             covariates: Sequence[str] | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Columns other than time/event/treatment are used as covariates unless an
    explicit list is given. Errors name the offending (1-based data) row.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    for col in (time, event, treatment):
        if col not in header:
            raise ValidationError(f"missing column {col!r}")
    if covariates is None:
        covariates = [h for h in header if h not in (time, event, treatment)]
    for col in covariates:
        if col not in header:
            raise ValidationError(f"missing column {col!r}")
    pos = {h: j for j, h in enumerate(header)}

    def number(row_no, row, col):
        try:
            value = float(row[pos[col]])
        except (ValueError, IndexError):
            raise ValidationError(f"row {row_no}, column {col!r}: not a number") from None
        if not math.isfinite(value):
            raise ValidationError(f"row {row_no}, column {col!r}: non-finite value")
        return value

    t_out, e_out, a_out, x_out = [], [], [], []
    for row_no, row in enumerate(rows, start=1):
        t = number(row_no, row, time)
        if t < 0:
            raise ValidationError(f"row {row_no}, column {time!r}: negative time")
        e = number(row_no, row, event)
        if e not in (0.0, 1.0, 2.0):
            raise ValidationError(f"row {row_no}, column {event!r}: event code {row[pos[event]]} not in {{0,1,2}}")
        a = number(row_no, row, treatment)
        if a not in (0.0, 1.0):
            raise ValidationError(f"row {row_no}, column {treatment!r}: treatment {row[pos[treatment]]} not in {{0,1}}")
        t_out.append(t)
        e_out.append(int(e))
        a_out.append(int(a))
        x_out.append([number(row_no, row, c) for c in covariates])

    if len(set(a_out)) < 2:
        raise ValidationError("both treatment arms required")
    return Dataset(np.array(t_out), np.array(e_out), np.array(a_out),
                   np.array(x_out, dtype=float).reshape(len(rows), len(covariates)),
                   tuple(covariates))


def _parse_terms(text: str | None):
    """``"X1 + X2 + X1^2"`` -> (("X1", "X2"), {"X1"}). Commas also separate terms."""
    if text is None:
        return None
    names, squares = [], set()
    for token in re.split(r"[+,]", text):
        token = token.replace(" ", "")
        if not token or token == "1":
            continue
        m = re.fullmatch(r"(?:I\()?([A-Za-z_][\w.]*)(?:\^2|\*\*2)\)?", token)
        if m:
            squares.add(m.group(1))
            if m.group(1) not in names:
                names.append(m.group(1))
        elif re.fullmatch(r"[A-Za-z_][\w.]*", token):
            if token not in names:
                names.append(token)
        else:
            raise ValidationError(f"cannot parse formula term {token!r}")
    return tuple(names), frozenset(squares)


@dataclass(frozen=True)
class FormulaSpec:
    """Covariate selection per nuisance model.

    ``covariates[model]`` lists the covariates, ``squares[model]`` the subset
    that also enters squared. Models listed in ``by_arm`` are fitted
    separately within each treatment arm (no treatment column).
    """

    covariates: Mapping[str, tuple] = field(default_factory=dict)
    squares: Mapping[str, frozenset] = field(default_factory=dict)
    by_arm: frozenset = frozenset()

    def __post_init__(self):
        cov = {m: tuple(self.covariates.get(m, ())) for m in MODELS}
        sq = {m: frozenset(self.squares.get(m, ())) for m in MODELS}
        unknown = (set(self.covariates) | set(self.squares) | set(self.by_arm)) - set(MODELS)
        if unknown:
            raise ValidationError(f"unknown nuisance model(s): {sorted(unknown)}")
        for m in MODELS:
            if not sq[m] <= set(cov[m]):
                raise ValidationError(f"{m}: squared terms must also be selected as main terms")
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "squares", sq)
        object.__setattr__(self, "by_arm", frozenset(self.by_arm))

    @classmethod
    def uniform(cls, names: Sequence[str], squares: Sequence[str] = (), by_arm=()) -> "FormulaSpec":
        """Same selection for every nuisance model."""
        return cls({m: tuple(names) for m in MODELS}, {m: frozenset(squares) for m in MODELS}, frozenset(by_arm))

    @classmethod
    def parse(cls, outcome=None, treatment=None, censoring=None, default: str = "") -> "FormulaSpec":
        """Build from ``"X1 + X2 + X1^2"`` strings; the outcome formula serves both causes."""
        parsed = {}
        for models, text in ((("outcome1", "outcome2"), outcome), (("treatment",), treatment),
                             (("censoring",), censoring)):
            terms = _parse_terms(text if text is not None else default)
            for m in models:
                parsed[m] = terms
        return cls({m: t[0] for m, t in parsed.items()}, {m: t[1] for m, t in parsed.items()})

    def with_model(self, model: str, covariates: Sequence[str], squares: Sequence[str] = ()) -> "FormulaSpec":
        cov = dict(self.covariates)
        sq = dict(self.squares)
        cov[model] = tuple(covariates)
        sq[model] = frozenset(squares)
        return FormulaSpec(cov, sq, self.by_arm)

    def validate(self, names: Sequence[str]) -> None:
        for m in MODELS:
            for c in self.covariates[m]:
                if c not in names:
                    raise ValidationError(f"{m}: unknown covariate {c!r}")

    def columns(self, model: str) -> list:
        out = []
        for c in self.covariates[model]:
            out.append(c)
            if c in self.squares[model]:
                out.append(f"{c}^2")
        if model != "treatment" and model not in self.by_arm:
            out.append("treatment")
        return out


class Design(NamedTuple):
    matrix: np.ndarray
    columns: list
    constant_columns: list


def design_rows(covariates: np.ndarray, names: Sequence[str], spec: FormulaSpec, model: str,
                treatment=None) -> np.ndarray:
    """Design rows for raw covariate rows; ``treatment`` (scalar or vector) fills the treatment column."""
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    cols = []
    for c in spec.covariates[model]:
        try:
            x = covariates[:, list(names).index(c)]
        except ValueError:
            raise ValidationError(f"{model}: unknown covariate {c!r}") from None
        cols.append(x)
        if c in spec.squares[model]:
            cols.append(x * x)
    if model != "treatment" and model not in spec.by_arm:
        if treatment is None:
            raise ValidationError(f"{model}: treatment values required")
        cols.append(np.broadcast_to(np.asarray(treatment, dtype=float), covariates.shape[:1]))
    if not cols:
        return np.zeros((covariates.shape[0], 0))
    return np.column_stack(cols)


def design_matrix(data: Dataset, spec: FormulaSpec, model: str, treatment=None) -> Design:
    """Design matrix of ``model`` for every subject, in dataset order.

    The treatment column (outcome and censoring models) holds the observed
    treatment unless ``treatment`` overrides it, e.g. with a counterfactual
    arm. Zero-variance columns are reported, not rejected.
    """
    if model not in MODELS:
        raise ValidationError(f"unknown nuisance model {model!r}")
    spec.validate(data.covariate_names)
    trt = data.treatment if treatment is None else treatment
    mat = design_rows(data.covariates, data.covariate_names, spec, model, trt)
    columns = spec.columns(model)
    constant = [c for c, x in zip(columns, mat.T) if x.size and np.ptp(x) == 0]
    return Design(mat, columns, constant)


@dataclass(frozen=True)
class TauReport:
    tau: float
    at_risk: int
    at_risk_by_arm: dict
    events_by_arm: dict
    feasible: bool
    messages: tuple = ()


def tau_feasibility(data: Dataset, tau: float) -> TauReport:
    """Counts at risk at ``tau`` and events by ``tau`` per arm.

    Infeasible when some arm has nobody still under observation at ``tau``,
    since the censoring survival cannot then be estimated out to ``tau``.
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    at_risk = data.time >= tau
    by_arm, events, messages = {}, {}, []
    for a in (0, 1):
        arm = data.treatment == a
        by_arm[a] = int(np.sum(at_risk & arm))
        events[a] = {cause: int(np.sum(arm & (data.event == cause) & (data.time <= tau)))
                     for cause in (CAUSE1, CAUSE2)}
        if by_arm[a] == 0:
            messages.append(f"no subject in arm {a} is at risk at tau={tau:g}")
    return TauReport(float(tau), int(at_risk.sum()), by_arm, events, not messages, tuple(messages))
