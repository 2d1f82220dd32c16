import numpy as np
import pytest

from competing_ate.dataset import Dataset, FormulaSpec, design_matrix, load_csv, tau_feasibility
from competing_ate.errors import ValidationError


def toy():
    return Dataset([1.0, 2.0, 3.0, 4.0], [1, 0, 2, 1], [0, 1, 0, 1], [[0.1], [0.2], [0.3], [0.4]], ("age",))


def test_dataset_is_read_only_and_typed():
    d = toy()
    assert d.n == 4 and d.d == 1
    assert d.event.dtype == np.int64
    with pytest.raises(ValueError):
        d.time[0] = 9.0
    np.testing.assert_array_equal(d.outcome(2.5), [1, 0, 0, 0])
    assert d.samples[0].outcome(1.0) == 1


@pytest.mark.parametrize("kwargs, message", [
    (dict(event=[1, 0, 3, 1]), "event codes"),
    (dict(treatment=[0, 0, 0, 0]), "both treatment arms"),
    (dict(event=[2, 0, 2, 0]), "cause 1"),
    (dict(time=[1.0, -1.0, 3.0, 4.0]), "nonnegative"),
])
def test_validation_errors(kwargs, message):
    base = dict(time=[1.0, 2.0, 3.0, 4.0], event=[1, 0, 2, 1], treatment=[0, 1, 0, 1], covariates=np.zeros((4, 0)))
    base.update(kwargs)
    with pytest.raises(ValidationError, match=message):
        Dataset(**base)


def test_load_csv_roundtrip(tmp_path):
    d = toy()
    path = tmp_path / "d.csv"
    d.to_csv(path)
    e = load_csv(path)
    np.testing.assert_array_equal(e.time, d.time)
    np.testing.assert_array_equal(e.covariates, d.covariates)
    assert e.covariate_names == ("age",)


def test_load_csv_names_bad_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,event,treatment,x\n1,1,0,0.5\n2,1,1,oops\n")
    with pytest.raises(ValidationError, match="row 2, column 'x'"):
        load_csv(path)


def test_load_csv_column_mapping(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("t,status,trt,x\n1,1,0,0.5\n2,1,1,0.1\n3,0,1,0.2\n")
    d = load_csv(path, time="t", event="status", treatment="trt")
    assert d.covariate_names == ("x",)
    with pytest.raises(ValidationError, match="missing column"):
        load_csv(path)


def test_formula_parse_and_design():
    d = Dataset([1, 2, 3, 4], [1, 0, 2, 1], [0, 1, 0, 1], [[1, 5], [2, 6], [3, 7], [4, 8]], ("a", "b"))
    spec = FormulaSpec.parse(outcome="a + b + a^2", treatment="b", censoring="")
    assert spec.columns("outcome1") == ["a", "a^2", "b", "treatment"]
    assert spec.columns("treatment") == ["b"]
    des = design_matrix(d, spec, "outcome1")
    np.testing.assert_array_equal(des.matrix[:, 1], [1, 4, 9, 16])
    np.testing.assert_array_equal(des.matrix[:, -1], d.treatment)
    cf = design_matrix(d, spec, "outcome1", treatment=1)
    assert np.all(cf.matrix[:, -1] == 1)
    with pytest.raises(ValidationError):
        FormulaSpec.parse(outcome="a + c").validate(d.covariate_names)
    with pytest.raises(ValidationError):
        FormulaSpec.parse(outcome="a * b")


def test_by_arm_drops_treatment_column():
    spec = FormulaSpec.uniform(["a"], by_arm=("outcome1",))
    assert spec.columns("outcome1") == ["a"]
    assert spec.columns("outcome2") == ["a", "treatment"]


def test_tau_feasibility():
    d = toy()
    rep = tau_feasibility(d, 2.5)
    assert rep.feasible and rep.at_risk == 2
    assert rep.events_by_arm[0][1] == 1
    assert not tau_feasibility(d, 3.5).feasible
    with pytest.raises(ValidationError):
        tau_feasibility(d, 0.0)
