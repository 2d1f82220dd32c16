"""Command-line front end: ``ate``, ``risk``, ``simulate`` and ``coverage``.

Exit codes: 0 success, 2 validation, 3 convergence, 4 positivity, 5 I/O.
Errors are reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from .ate import ESTIMATORS, VARIANCES, analyze, parse_estimators
from .dataset import FormulaSpec, load_csv
from .errors import CompetingAteError, ValidationError
from .simlab import (coverage_scenarios, default_workers, misspecification_scenarios, read_scenarios,
                     run_scenario, write_summary_csv)

EXIT_IO = 5
ATE_FIELDS = ("estimator", "tau", "n", "risk1", "risk0", "ate", "se", "lower", "upper", "diagnostics")
RISK_FIELDS = ("time", "estimator", "risk1", "risk0", "se1", "se0", "lower1", "upper1", "lower0", "upper0")

log = logging.getLogger("competing_ate")


# ---- deterministic output ---------------------------------------------

def _num(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def dumps(obj, indent=2, _level=0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def _write(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if r[k] is None else (format(r[k], ".17g") if isinstance(r[k], float) else r[k])
                    for k in header])
    return buf.getvalue()


# ---- argument handling ------------------------------------------------

def _pair(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"expected 'lo,hi', got {text!r}") from None
    if not 0 < lo < hi < 1:
        raise ValidationError("propensity truncation needs 0 < lo < hi < 1")
    return lo, hi


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _data_options(p):
    p.add_argument("--data", help="CSV file with one row per subject")
    p.add_argument("--time-column", dest="time_column", help="follow-up time column (default: time)")
    p.add_argument("--event-column", dest="event_column", help="event code column, 0/1/2 (default: event)")
    p.add_argument("--treatment-column", dest="treatment_column", help="binary treatment column (default: treatment)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--outcome-formula", dest="outcome_formula", help='e.g. "X1 + X2 + X1^2", or "1" for none (default: all covariates)')
    p.add_argument("--treatment-formula", dest="treatment_formula", help="as --outcome-formula")
    p.add_argument("--censoring-formula", dest="censoring_formula", help="as --outcome-formula")
    p.add_argument("--by-arm", dest="by_arm",
                   help="comma-separated models fitted within each arm (outcome1,outcome2,censoring)")
    p.add_argument("--truncate-propensity", dest="truncate_propensity", help="lo,hi")
    p.add_argument("--mode", choices=("product-limit", "exponential"))
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--config", help="INI file; values fill in flags not given on the command line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="competing-ate",
                                     description="Average treatment effects on absolute risks with competing risks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ate", help="estimate the tau-horizon risk difference")
    _data_options(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--estimator", help=f"one of {', '.join(ESTIMATORS)}, a comma list, or all")
    p.add_argument("--variance", choices=VARIANCES)
    p.add_argument("--stabilized", action="store_true", default=None, help="normalise treatment weights")
    p.add_argument("--level", type=float)

    p = sub.add_parser("risk", help="arm-wise absolute risks on a time grid")
    _data_options(p)
    p.add_argument("--times", help="comma-separated evaluation times")
    p.add_argument("--estimator", help="g-formula and/or aiptw-aipcw (default: both)")
    p.add_argument("--level", type=float)

    for name, text in (("simulate", "run simulation scenarios"), ("coverage", "coverage over sample sizes")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker processes (default: $COMPETING_ATE_WORKERS or 1)")
        p.add_argument("--replicates", type=int)
        p.add_argument("--tau", type=float)
        p.add_argument("--estimator")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("json", "csv"))
        if name == "simulate":
            p.add_argument("--scenario-file", dest="scenario_file", help="INI file with [scenario:NAME] sections")
            p.add_argument("--preset", choices=("misspecification",), help="built-in misspecification scenarios")
            p.add_argument("--n", type=int)
        else:
            p.add_argument("--sizes", help="comma-separated sample sizes (default 100,500,1000)")
    return parser


DEFAULTS = {
    "time_column": "time", "event_column": "event", "treatment_column": "treatment", "estimator": "all",
    "variance": "tilde", "mode": "product-limit", "format": "json", "level": 0.95, "stabilized": False,
    "replicates": None, "tau": None, "sizes": "100,500,1000",
}


def apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill flags left at ``None`` from the ``[command]`` (or ``[DEFAULT]``) section of ``--config``."""
    path = getattr(args, "config", None)
    if path:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc}") from None
        section = parser[args.command] if parser.has_section(args.command) else parser.defaults()
        for key, value in section.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr) or attr in ("command", "config"):
                raise ValidationError(f"{path}: unknown option {key!r} for '{args.command}'")
            if getattr(args, attr) is None:
                setattr(args, attr, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if isinstance(getattr(args, "stabilized", None), str):
        args.stabilized = args.stabilized.strip().lower() in ("1", "true", "yes", "on")
    for key in ("tau", "level"):
        if isinstance(getattr(args, key, None), str):
            args.__dict__[key] = _floats(getattr(args, key))[0]
    for key in ("seed", "workers", "replicates", "n"):
        if isinstance(getattr(args, key, None), str):
            args.__dict__[key] = int(getattr(args, key))
    return args


def _load(args):
    if not args.data:
        raise ValidationError("--data is required")
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    data = load_csv(args.data, time=args.time_column, event=args.event_column,
                    treatment=args.treatment_column, covariates=covs)
    # a model without a formula uses every loaded covariate as a main term
    spec = FormulaSpec.parse(args.outcome_formula, args.treatment_formula, args.censoring_formula,
                             default=" + ".join(data.covariate_names))
    if args.by_arm:
        spec = FormulaSpec(spec.covariates, spec.squares, [m.strip() for m in args.by_arm.split(",")])
    truncation = _pair(args.truncate_propensity) if args.truncate_propensity else None
    return data, spec, truncation


# ---- commands ---------------------------------------------------------

def cmd_ate(args) -> int:
    data, spec, truncation = _load(args)
    if args.tau is None:
        raise ValidationError("--tau is required")
    result = analyze(data, spec, args.tau, args.estimator, variance=args.variance, truncation=truncation,
                     stabilized=args.stabilized, mode=args.mode, level=args.level)
    records = [e.to_dict() for e in result.estimates]
    if args.format == "json":
        _write(dumps(records) + "\n", args.out)
    else:
        flat = []
        for r in records:
            row = {k: r[k] for k in ATE_FIELDS[:-1]}
            d = r["diagnostics"]
            row.update({"positivity_min_G": d["positivity_min_G"], "min_pi": d["min_pi"],
                        "max_weight": d["max_weight"],
                        "iterations": ";".join(f"{k}={v}" for k, v in sorted((d["iterations"] or {}).items()))})
            flat.append(row)
        header = list(ATE_FIELDS[:-1]) + ["iterations", "positivity_min_G", "min_pi", "max_weight"]
        _write(_csv_text(header, flat), args.out)
    return 0


def cmd_risk(args) -> int:
    data, spec, truncation = _load(args)
    if not args.times:
        raise ValidationError("--times is required")
    names = parse_estimators(args.estimator if args.estimator != "all" else "g-formula,aiptw-aipcw")
    if set(names) - {"g-formula", "aiptw-aipcw"}:
        raise ValidationError("risk curves are available for g-formula and aiptw-aipcw")
    z = _z(args.level)
    rows = []
    last = float(np.max(data.time))
    for t in sorted(_floats(args.times)):
        if t <= 0 or t < float(np.min(data.time[data.event == 1])):
            for name in names:
                rows.append(dict(zip(RISK_FIELDS, (t, name) + (0.0,) * 8)))
            continue
        if t > last:
            log.warning("time %g is beyond the last follow-up time %g; skipped", t, last)
            print(f"warning: time {t:g} is beyond the last follow-up time {last:g}; skipped", file=sys.stderr)
            continue
        try:
            result = analyze(data, spec, t, names, truncation=truncation, mode=args.mode, level=args.level)
        except ValidationError as exc:
            print(f"warning: time {t:g}: {exc}; skipped", file=sys.stderr)
            continue
        for e in result.estimates:
            se1, se0 = e.se1, e.se0
            rows.append({"time": t, "estimator": e.estimator, "risk1": e.risk1, "risk0": e.risk0,
                         "se1": se1, "se0": se0, "lower1": e.risk1 - z * se1, "upper1": e.risk1 + z * se1,
                         "lower0": e.risk0 - z * se0, "upper0": e.risk0 + z * se0})
    if args.format == "json":
        _write(dumps(rows) + "\n", args.out)
    else:
        _write(_csv_text(RISK_FIELDS, rows), args.out)
    return 0


def _z(level):
    from statistics import NormalDist
    return NormalDist().inv_cdf(0.5 + level / 2)


def _override(scenarios, args):
    from dataclasses import replace
    out = []
    for s in scenarios:
        kw = {}
        if args.seed is not None:
            kw["seed"] = args.seed
            kw["dgm"] = replace(s.dgm, seed=args.seed)
        if args.replicates is not None:
            kw["replicates"] = args.replicates
        if args.tau is not None:
            kw["tau"] = args.tau
        if args.estimator not in (None, "all"):
            kw["estimators"] = args.estimator
        if getattr(args, "n", None) is not None:
            kw["n"] = args.n
        out.append(replace(s, **kw) if kw else s)
    return out


def _run_and_write(scenarios, args) -> int:
    workers = args.workers if args.workers is not None else default_workers()
    summaries = []
    for s in scenarios:
        log.info("scenario %s: n=%d, %d replicates, %d worker(s)", s.name, s.n, s.replicates, workers)
        summaries.append(run_scenario(s, workers=workers))
    out = args.out or "."
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    if args.format in (None, "csv", "json"):
        write_summary_csv(summaries, os.path.join(out, "summary.csv"))
        with open(os.path.join(out, "summary.json"), "w") as fh:
            fh.write(dumps([s.to_dict() for s in summaries]) + "\n")
    for s in summaries:
        for r in s.rows:
            print(f"{s.scenario.name:24s} {r['estimator']:12s} {r['variance']:11s} "
                  f"bias={r['bias']:+.4f} sd={r['sd']:.4f} se={r['mean_se']:.4f} coverage={r['coverage']:.3f}")
    return 0


def cmd_simulate(args) -> int:
    if args.scenario_file:
        scenarios = read_scenarios(args.scenario_file)
    else:
        scenarios = misspecification_scenarios()
    scenarios = _override(scenarios, args)
    return _run_and_write(scenarios, args)


def cmd_coverage(args) -> int:
    sizes = _ints(args.sizes)
    kw = {"replicates": args.replicates if args.replicates is not None else 1000}
    if args.tau is not None:
        kw["tau"] = args.tau
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.estimator not in (None, "all"):
        kw["estimators"] = args.estimator
    scenarios = coverage_scenarios(sizes, **kw)
    return _run_and_write(scenarios, args)


COMMANDS = {"ate": cmd_ate, "risk": cmd_risk, "simulate": cmd_simulate, "coverage": cmd_coverage}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        apply_config(args)
        return COMMANDS[args.command](args)
    except CompetingAteError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "model", None):
            err["model"] = exc.model
        if getattr(exc, "subject", None) is not None:
            err["subject"] = int(exc.subject)
        print(dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(dumps({"error": "IOError", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
