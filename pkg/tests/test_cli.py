import json

import numpy as np
import pytest

from competing_ate.cli import main
from competing_ate.risk import aalen_johansen
from helpers import make_data


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    make_data(seed=31, n=150).to_csv(path)
    return path


def test_ate_smoke_json(capsys, toy_csv):
    code, out, _ = run(capsys, "ate", "--data", toy_csv, "--estimator", "g-formula", "--tau", 5)
    assert code == 0
    records = json.loads(out)
    assert len(records) == 1 and records[0]["estimator"] == "g-formula"
    assert list(records[0]) == ["estimator", "tau", "n", "risk1", "risk0", "ate", "se", "lower", "upper",
                                "diagnostics"]


def test_ate_csv_and_outfile(capsys, toy_csv, tmp_path):
    out_path = tmp_path / "ate.csv"
    code, out, _ = run(capsys, "ate", "--data", toy_csv, "--tau", 5, "--format", "csv", "--out", out_path,
                       "--outcome-formula", "X1 + X1^2", "--treatment-formula", "X1", "--censoring-formula", "1")
    assert code == 0 and out == ""
    lines = out_path.read_text().splitlines()
    assert lines[0].startswith("estimator,tau,n,risk1,risk0,ate,se,lower,upper")
    assert len(lines) == 6


def test_reduction_visible_in_output(capsys, tmp_path):
    path = tmp_path / "uncensored.csv"
    make_data(seed=32, n=200, censor=False).to_csv(path)
    code, out, _ = run(capsys, "ate", "--data", path, "--tau", 5, "--estimator", "all")
    by = {r["estimator"]: r for r in json.loads(out)}
    assert code == 0
    assert by["aiptw-aipcw"]["ate"] == pytest.approx(by["aiptw-ipcw"]["ate"], abs=1e-12)


def test_malformed_csv_names_row(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,event,treatment,X1\n1.0,1,0,0.5\n2.0,0,1,oops\n")
    code, _, err = run(capsys, "ate", "--data", path, "--tau", 1)
    assert code == 2
    assert "row 2" in json.loads(err)["message"]


def test_exit_codes(capsys, tmp_path, toy_csv):
    code, _, err = run(capsys, "ate", "--data", tmp_path / "missing.csv", "--tau", 5)
    assert code == 5 and json.loads(err)["error"] == "IOError"
    code, _, _ = run(capsys, "ate", "--data", toy_csv, "--tau", 1e6)
    assert code == 2
    code, out, _ = run(capsys, "ate", "--data", toy_csv, "--tau", 5, "--estimator", "iptw-ipcw",
                       "--truncate-propensity", "0.45,0.55")
    assert code == 0 and json.loads(out)[0]["diagnostics"]["min_pi"] >= 0.45 - 1e-12


def test_positivity_exit_code(capsys, tmp_path):
    d = make_data(seed=33, n=120)
    # the treatment indicator perfectly predicted by a covariate -> separation
    X = np.column_stack([d.covariates, d.treatment + 0.0])
    from competing_ate.dataset import Dataset
    path = tmp_path / "sep.csv"
    Dataset(d.time, d.event, d.treatment, X, ("X1", "X2", "Z")).to_csv(path)
    code, _, err = run(capsys, "ate", "--data", path, "--tau", 5, "--estimator", "iptw-ipcw")
    assert code in (3, 4)
    assert json.loads(err)["error"] in ("ConvergenceError", "PositivityError")


def test_risk_grid_zero(capsys, toy_csv):
    code, out, _ = run(capsys, "risk", "--data", toy_csv, "--times", "0")
    rows = json.loads(out)
    assert code == 0 and len(rows) == 2
    for r in rows:
        assert r["risk1"] == r["risk0"] == r["se1"] == r["se0"] == 0.0


def test_risk_matches_aalen_johansen(capsys, tmp_path):
    d = make_data(seed=34, n=200, censor=False)
    path = tmp_path / "np.csv"
    d.to_csv(path)
    code, out, _ = run(capsys, "risk", "--data", path, "--times", "2,4,6", "--estimator", "g-formula",
                       "--outcome-formula", "1", "--treatment-formula", "1", "--censoring-formula", "1",
                       "--by-arm", "outcome1,outcome2")
    assert code == 0
    aj1, aj0 = aalen_johansen(d, 1), aalen_johansen(d, 0)
    for r in json.loads(out):
        assert r["risk1"] == pytest.approx(aj1.at(r["time"])[0], abs=1e-10)
        assert r["risk0"] == pytest.approx(aj0.at(r["time"])[0], abs=1e-10)


def test_risk_arm_swap(capsys, tmp_path):
    d = make_data(seed=35, n=200)
    path = tmp_path / "swap.csv"
    d.to_csv(path)
    text = path.read_text().splitlines()
    header = text[0].split(",")
    j = header.index("treatment")
    rows = [line.split(",") for line in text[1:]]
    for r in rows:
        r.append(str(1 - int(float(r[j]))))
    path.write_text("\n".join([",".join(header + ["control"])] + [",".join(r) for r in rows]) + "\n")
    common = ("risk", "--data", path, "--times", "3,5", "--covariates", "X1,X2")
    _, a, _ = run(capsys, *common)
    _, b, _ = run(capsys, *common, "--treatment-column", "control")
    for ra, rb in zip(json.loads(a), json.loads(b)):
        assert ra["risk1"] == pytest.approx(rb["risk0"], abs=1e-10)
        assert ra["risk0"] == pytest.approx(rb["risk1"], abs=1e-10)


def test_risk_beyond_follow_up_warns(capsys, toy_csv):
    code, out, err = run(capsys, "risk", "--data", toy_csv, "--times", "3,1e6")
    assert code == 0 and "beyond" in err
    assert {r["time"] for r in json.loads(out)} == {3.0}


def test_json_output_is_byte_identical(capsys, toy_csv):
    _, a, _ = run(capsys, "ate", "--data", toy_csv, "--tau", 5, "--variance", "partial-phi")
    _, b, _ = run(capsys, "ate", "--data", toy_csv, "--tau", 5, "--variance", "partial-phi")
    assert a == b


def test_config_fills_missing_flags_only(capsys, toy_csv, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[ate]\ndata = {toy_csv}\ntau = 4\nestimator = g-formula\n")
    _, out, _ = run(capsys, "ate", "--config", cfg)
    assert json.loads(out)[0]["tau"] == 4.0
    _, out, _ = run(capsys, "ate", "--config", cfg, "--tau", 5)
    assert json.loads(out)[0]["tau"] == 5.0
    cfg.write_text("[ate]\nbogus = 1\n")
    code, _, _ = run(capsys, "ate", "--config", cfg)
    assert code == 2


def test_simulate_seed_repeat_identical(capsys, tmp_path):
    ini = tmp_path / "sim.ini"
    ini.write_text("[scenario:small]\nn = 300\nreplicates = 3\nestimators = g-formula,aiptw-aipcw\ntruth = 0\n")
    outs = []
    for k, workers in enumerate((1, 2)):
        out_dir = tmp_path / f"run{k}"
        code, _, _ = run(capsys, "simulate", "--scenario-file", ini, "--seed", 5, "--workers", workers,
                         "--out", out_dir)
        assert code == 0
        outs.append(((out_dir / "summary.csv").read_bytes(), (out_dir / "summary.json").read_bytes()))
    assert outs[0] == outs[1]
    rows = outs[0][0].decode().splitlines()
    assert len(rows) == 1 + 3  # g-formula, aiptw-aipcw tilde and partial-phi


def test_simulate_zero_replicates_is_validation_error(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--replicates", 0, "--out", tmp_path)
    assert code == 2 and json.loads(err)["error"] == "ValidationError"
