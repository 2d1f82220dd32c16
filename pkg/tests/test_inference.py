import numpy as np
import pytest

from competing_ate.ate import analyze, estimate_ate
from competing_ate.dataset import FormulaSpec
from competing_ate.errors import ValidationError
from competing_ate.inference import InfluenceVector, if_tilde_aiptw, tilde_influence, wald_ci
from helpers import make_data


def jackknife_influence(data, spec, tau, estimator, **options):
    """Pseudo-value influence ``(n - 1) (psi - psi_(-i))`` on the mean scale."""
    full = estimate_ate(data, spec, tau, estimator, **options)[0].ate
    loo = np.array([estimate_ate(data.take(np.delete(np.arange(data.n), i)), spec, tau, estimator, **options)[0].ate
                    for i in range(data.n)])
    return (data.n - 1) * (full - loo)


def test_wald_interval_example():
    se, lo, hi = wald_ci(0.05, [0.02, -0.02, 0.02, -0.02], 0.95)
    # sqrt(4 * 0.02^2) / 4 = 0.01
    assert se == pytest.approx(0.01)
    assert lo == pytest.approx(0.05 - 1.959963985 * 0.01, abs=1e-9)
    assert hi == pytest.approx(0.0696, abs=1e-4)


def test_zero_influence_gives_zero_se_and_validation():
    assert wald_ci(0.1, np.zeros(10)) == (0.0, 0.1, 0.1)
    with pytest.raises(ValidationError):
        wald_ci(0.1, [1.0])
    with pytest.raises(ValidationError):
        wald_ci(0.1, [1.0, 2.0], level=1.0)
    with pytest.raises(ValidationError):
        InfluenceVector(np.array([np.nan, 1.0]), "tilde", "g-formula")


def test_tilde_vectors_are_centred():
    d = make_data(seed=21, n=200)
    for e in estimate_ate(d, FormulaSpec.uniform(["X1", "X2"]), 5.0):
        tilde = tilde_influence(e)
        assert abs(tilde.values.sum()) < 1e-10
        assert abs(tilde.arm1.sum()) < 1e-10 and abs(tilde.arm0.sum()) < 1e-10


def test_if_tilde_aiptw_matches_estimate():
    d = make_data(seed=22, n=200)
    an = analyze(d, FormulaSpec.uniform(["X1", "X2"]), 5.0, "aiptw-aipcw")
    est = an["aiptw-aipcw"]
    np.testing.assert_allclose(if_tilde_aiptw(an.bundle, d, est).values, est.if_values, atol=1e-12)
    assert est.variance == "tilde"


def test_saturated_binary_aipw_oracle():
    # no covariates and no censoring: every nuisance term cancels exactly
    d = make_data(seed=23, n=300, censor=False)
    spec = FormulaSpec.uniform([])
    est = analyze(d, spec, 5.0, "aiptw-aipcw", variance="partial-phi")["aiptw-aipcw"]
    Y, A = d.outcome(5.0), d.treatment
    p = A.mean()
    m1, m0 = Y[A == 1].mean(), Y[A == 0].mean()
    textbook = m1 - m0 + A * (Y - m1) / p - (1 - A) * (Y - m0) / (1 - p) - (m1 - m0)
    np.testing.assert_allclose(est.if_values, textbook, atol=1e-12)
    assert est.se == pytest.approx(est.standard_errors["tilde"], rel=1e-8)


def test_known_propensity_has_no_treatment_term():
    d = make_data(seed=24, n=200)
    true_pi = 1 / (1 + np.exp(-0.5 * d.covariates[:, 0]))
    est = analyze(d, FormulaSpec.uniform(["X1"]), 5.0, "iptw-ipcw", propensity=true_pi)["iptw-ipcw"]
    assert est.variance == "tilde"
    assert abs(est.if_values.sum()) < 1e-10


def test_gformula_influence_invariant_under_duplication():
    d = make_data(seed=25, n=150)
    spec = FormulaSpec.uniform(["X1", "X2"])
    e1 = estimate_ate(d, spec, 5.0, "g-formula")[0]
    dd = d.take(np.concatenate([np.arange(d.n)] * 2))
    e2 = estimate_ate(dd, spec, 5.0, "g-formula")[0]
    assert e2.ate == pytest.approx(e1.ate, abs=1e-10)
    np.testing.assert_allclose(e2.if_values[:d.n], e1.if_values, atol=1e-8)
    assert e2.se == pytest.approx(e1.se / np.sqrt(2), rel=1e-8)


def test_nonparametric_gformula_influence_matches_jackknife():
    d = make_data(seed=26, n=200, ties=True)
    spec = FormulaSpec.uniform([], by_arm=("outcome1", "outcome2"))
    est = estimate_ate(d, spec, 4.0, "g-formula")[0]
    jack = jackknife_influence(d, spec, 4.0, "g-formula")
    assert np.corrcoef(jack, est.if_values)[0, 1] > 0.999
    assert est.se == pytest.approx(np.sqrt(np.sum(jack ** 2)) / d.n, rel=0.02)


@pytest.mark.parametrize("estimator", ["g-formula", "iptw-ipcw", "aiptw-ipcw"])
def test_uncensored_influence_matches_jackknife(estimator):
    # without censoring the reported vectors carry every nuisance term; the
    # jackknife differs from them at order 1/n, so the SEs agree to a few percent
    d = make_data(seed=27, n=250, censor=False)
    spec = FormulaSpec.uniform(["X1", "X2"])
    est = estimate_ate(d, spec, 5.0, estimator, variance="partial-phi")[0]
    jack = jackknife_influence(d, spec, 5.0, estimator, variance="partial-phi")
    assert np.corrcoef(jack, est.if_values)[0, 1] > 0.995
    assert est.se == pytest.approx(np.sqrt(np.sum(jack ** 2)) / d.n, rel=0.05)


def test_time_scale_equivariance():
    d = make_data(seed=28, n=150)
    spec = FormulaSpec.uniform(["X1"])
    scaled = d.with_times(d.time * 7.5)
    for a, b in zip(estimate_ate(d, spec, 5.0, variance="partial-phi"),
                    estimate_ate(scaled, spec, 37.5, variance="partial-phi")):
        assert b.ate == pytest.approx(a.ate, abs=1e-12)
        np.testing.assert_allclose(b.if_values, a.if_values, atol=1e-10)


def test_partial_phi_reports_both_standard_errors():
    d = make_data(seed=29, n=200)
    est = analyze(d, FormulaSpec.uniform(["X1", "X2"]), 5.0, "aiptw-aipcw", variance="partial-phi")["aiptw-aipcw"]
    assert set(est.standard_errors) >= {"tilde", "partial-phi"}
    assert est.se == est.standard_errors["partial-phi"]
    assert est.ci_lower < est.ate < est.ci_upper


def test_arm_standard_errors_follow_reported_variant():
    d = make_data(seed=30, n=200)
    spec = FormulaSpec.uniform(["X1", "X2"])
    for e in estimate_ate(d, spec, 5.0, variance="partial-phi"):
        np.testing.assert_allclose(e.if1 - e.if0, e.if_values, atol=1e-14)
    # the treated-arm g-formula risk against its own jackknife
    u = make_data(seed=31, n=250, censor=False)
    g = estimate_ate(u, spec, 5.0, "g-formula")[0]
    loo = np.array([estimate_ate(u.take(np.delete(np.arange(u.n), i)), spec, 5.0, "g-formula")[0].risk1
                    for i in range(u.n)])
    jack_se = np.sqrt(np.sum(((u.n - 1) * (g.risk1 - loo)) ** 2)) / u.n
    assert g.se1 == pytest.approx(jack_se, rel=0.05)
    assert g.se1 > tilde_influence(g).arm1.std() / np.sqrt(u.n)
