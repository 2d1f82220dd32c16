import numpy as np
import pytest

from competing_ate.dataset import Dataset, FormulaSpec
from competing_ate.errors import PositivityError, ValidationError
from competing_ate.risk import (aalen_johansen, absolute_risk, absolute_risk_from_hazards, compose,
                                fit_cause_specific, risk_influence)
from helpers import make_data


def test_single_cause_reduction():
    dl1 = np.array([0.1, 0.2, 0.05])
    curve = absolute_risk_from_hazards([1, 2, 3], dl1, np.zeros(3))
    np.testing.assert_allclose(curve.cif1, 1 - np.cumprod(1 - dl1), atol=1e-15)
    np.testing.assert_allclose(curve.survival, 1 - curve.cif1, atol=1e-15)


def test_competing_exponentials_closed_form():
    lam1, lam2, dt = 0.1, 0.05, 1e-4
    grid = np.arange(1, 100_001) * dt
    curve = absolute_risk_from_hazards(grid, np.full(grid.size, lam1 * dt), np.full(grid.size, lam2 * dt))
    for t in (0.5, 3.0, 10.0):
        exact = lam1 / (lam1 + lam2) * (1 - np.exp(-(lam1 + lam2) * t))
        assert abs(curve.at(t)[0] - exact) < 1e-3


def test_boundary_and_mass_conservation():
    curve = absolute_risk_from_hazards([1.0, 2.0], [0.2, 0.3], [0.1, 0.4])
    assert curve.at(0.0) == (0.0, 0.0, 1.0)
    np.testing.assert_allclose(curve.cif1 + curve.cif2 + curve.survival, 1.0, atol=1e-12)


def test_exponential_mode_and_factor_guard():
    S, F1, _ = compose(np.array([[0.2, 0.3]]), np.array([[0.1, 0.1]]), mode="exponential")
    np.testing.assert_allclose(S[0], np.exp(-np.cumsum([0.3, 0.4])))
    with pytest.raises(PositivityError, match="exponential"):
        compose(np.array([[0.8]]), np.array([[0.5]]))
    with pytest.raises(ValidationError):
        compose(np.array([[0.1]]), np.array([[0.1]]), mode="other")


def test_aalen_johansen_worked_example():
    d = Dataset([1.0, 2.0, 1.5, 3.0], [1, 2, 0, 1], [0, 1, 0, 1], np.zeros((4, 0)))
    aj = aalen_johansen(d)
    np.testing.assert_allclose(aj.times, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(aj.cif1, [1 / 4, 1 / 4, 5 / 8])
    np.testing.assert_allclose(aj.cif2, [0, 3 / 8, 3 / 8])
    np.testing.assert_allclose(aj.survival, [3 / 4, 3 / 8, 0])


def test_aalen_johansen_without_censoring_is_ecdf():
    d = make_data(seed=1, n=150, censor=False)
    aj = aalen_johansen(d)
    for t in (2.0, 5.0, 9.0):
        assert aj.at(t)[0] == pytest.approx(np.mean((d.time <= t) & (d.event == 1)), abs=1e-12)


def test_empty_cox_models_reproduce_aalen_johansen_per_arm():
    d = make_data(seed=2, n=200, ties=True)
    model = fit_cause_specific(d, FormulaSpec.uniform([], by_arm=("outcome1", "outcome2")))
    for a in (0, 1):
        aj = aalen_johansen(d, arm=a)
        curve = absolute_risk(model, a, np.zeros(0))
        for t in (1.0, 3.0, 6.0):
            np.testing.assert_allclose(curve.at(t), aj.at(t), atol=1e-12)


def test_cox_risk_curves_are_monotone():
    d = make_data(seed=3, n=200)
    model = fit_cause_specific(d, FormulaSpec.uniform(["X1", "X2"]))
    curve = absolute_risk(model, 1, [0.5, -0.2], horizon=8.0)
    assert np.all(np.diff(curve.cif1) >= 0) and np.all(np.diff(curve.survival) <= 0)
    assert curve.F1.is_nondecreasing()


def test_risk_influence_mean_zero_and_leave_one_out():
    d = make_data(seed=4, n=250)
    spec = FormulaSpec.uniform(["X1", "X2"])
    model = fit_cause_specific(d, spec)
    x, t = np.array([0.2, 0.1]), 5.0
    psi = risk_influence(model, 1, x, t)
    assert abs(psi.sum()) < 1e-10
    full = absolute_risk(model, 1, x, horizon=t).at(t)[0]
    for i in (3, 50, 100):
        keep = np.arange(d.n) != i
        loo = absolute_risk(fit_cause_specific(d.subset(keep), spec), 1, x, horizon=t).at(t)[0]
        assert full - loo == pytest.approx(psi[i], rel=0.2, abs=3e-4)


def km_risk_influence(time, event, t):
    """Influence of 1 - KM(t) when there is a single cause and no covariates."""
    n = time.size
    jumps = np.unique(time[(event == 1) & (time <= t)])
    S_t = np.prod([1 - np.sum((time == s) & (event == 1)) / np.sum(time >= s) for s in jumps])
    out = np.zeros(n)
    for s in jumps:
        Y = np.sum(time >= s)
        dN = np.sum((time == s) & (event == 1))
        for i in range(n):
            dM = float(time[i] == s and event[i] == 1) - float(time[i] >= s) * dN / Y
            out[i] += dM / (Y - dN) if Y > dN else 0.0
    return S_t * out


def test_single_cause_influence_matches_kaplan_meier():
    rng = np.random.default_rng(5)
    n = 60
    time = np.round(rng.exponential(5, n), 1) + 0.1
    event = rng.binomial(1, 0.7, n)
    event[0] = 1
    d = Dataset(time, event, np.arange(n) % 2, np.zeros((n, 0)))
    model = fit_cause_specific(d, FormulaSpec.uniform([], by_arm=("outcome1",)))
    arm = d.treatment == 1
    psi = risk_influence(model, 1, np.zeros(0), 4.0)
    ref = km_risk_influence(time[arm], event[arm], 4.0)
    np.testing.assert_allclose(psi[arm], ref, atol=1e-12)
    np.testing.assert_allclose(psi[~arm], 0.0)
