import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from logbo import acq_analytic as aa
from logbo import surrogate as sg

# reference: mpmath, 50 digits, log((phi(z) + z*Phi(z))) at z = -40
LOGEI_Z_M40 = -808.2985683566204


@pytest.fixture(scope="module")
def models():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(10, 2))
    y = np.cos(5 * X[:, 0]) * X[:, 1]
    c1 = np.sin(4 * X[:, 0]) + X[:, 1] - 1.0
    fit = lambda v: sg.GPModel.fit(X, (v - v.mean()) / v.std(), seed=0)
    return fit(y), fit(c1)


def test_frozen_values():
    v, _, _ = aa.logei(-40.0, 1.0, 0.0)
    assert v == pytest.approx(LOGEI_Z_M40, rel=1e-13)
    assert aa.ei(-40.0, 1.0, 0.0)[0] == 0.0
    assert aa.logei(0.0, 1.0, 0.0)[0] == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 3), st.floats(-5, 5))
def test_logei_is_log_of_ei(mu, sigma, y_star):
    e = aa.ei(mu, sigma, y_star)[0]
    if e > 1e-250:
        assert aa.logei(mu, sigma, y_star)[0] == pytest.approx(np.log(e), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(-40, 5), st.floats(0.05, 3), st.floats(-5, 5))
def test_logpi_is_log_of_pi(mu, sigma, y_star):
    z = (mu - y_star) / sigma
    assert aa.logpi(mu, sigma, y_star)[0] == pytest.approx(stats.norm.logcdf(z), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("name", ["ei", "logei", "pi", "logpi"])
def test_core_partials_match_fd(name):
    f = getattr(aa, name)
    for mu, sig in [(0.3, 0.7), (-2.0, 0.4), (-6.0, 0.5)]:
        _, dmu, dsig = f(mu, sig, 0.1)
        h = 1e-6
        nmu = (f(mu + h, sig, 0.1)[0] - f(mu - h, sig, 0.1)[0]) / (2 * h)
        nsig = (f(mu, sig + h, 0.1)[0] - f(mu, sig - h, 0.1)[0]) / (2 * h)
        assert dmu == pytest.approx(nmu, rel=1e-5, abs=1e-10)
        assert dsig == pytest.approx(nsig, rel=1e-5, abs=1e-10)


def test_logei_finite_gradient_far_below_incumbent():
    _, dmu, dsig = aa.logei(-1e3, 1.0, 0.0)
    assert np.isfinite(dmu) and dmu > 0
    assert np.isfinite(dsig) and dsig > 0


def test_logei_monotone_in_mu_and_sigma():
    mus = np.linspace(-50, 5, 200)
    v = aa.logei(mus, 1.0, 0.0)[0]
    assert np.all(np.diff(v) > 0)
    sig = np.linspace(0.1, 5, 200)
    assert np.all(np.diff(aa.logei(-1.0, sig, 0.0)[0]) > 0)


def test_cei_matches_product_and_logcei():
    mu, sig = np.array([0.2]), np.array([0.5])
    mc, sc = [np.array([-0.3])], [np.array([0.4])]
    v, *_ = aa.cei(mu, sig, 0.0, mc, sc)
    expected = aa.ei(mu, sig, 0.0)[0] * stats.norm.cdf(0.3 / 0.4)
    assert v[0] == pytest.approx(expected[0], rel=1e-12)
    lv, *_ = aa.logcei(mu, sig, 0.0, mc, sc)
    assert lv[0] == pytest.approx(np.log(expected[0]), rel=1e-12)


def test_logcei_without_feasible_incumbent_is_log_feasibility():
    mc, sc = [np.array([0.5]), np.array([-1.0])], [np.array([0.2]), np.array([0.3])]
    v, *_ = aa.logcei(np.array([0.0]), np.array([1.0]), None, mc, sc)
    expected = stats.norm.logcdf(-0.5 / 0.2) + stats.norm.logcdf(1.0 / 0.3)
    assert v[0] == pytest.approx(expected, rel=1e-12)


def test_incumbent_state():
    y = np.array([1.0, 3.0, 2.0])
    assert aa.IncumbentState.from_observations(y).y_star == 3.0
    C = np.array([[0.1], [0.5], [-0.2]])
    assert aa.IncumbentState.from_observations(y, C).y_star == 2.0
    none = aa.IncumbentState.from_observations(y, np.ones((3, 1)))
    assert not none.feasible
    with pytest.raises(ValueError):
        aa.AnalyticAcquisition("logei", None, none)


@pytest.mark.parametrize("name", ["ei", "logei", "pi", "logpi", "cei", "logcei"])
def test_model_bound_gradients_match_fd(models, name):
    obj, con = models
    acq = aa.AnalyticAcquisition(name, obj, aa.IncumbentState(0.5), [con], [0.2])
    rng = np.random.default_rng(1)
    for x in rng.uniform(0.05, 0.95, size=(5, 2)):
        r = acq(x[None, :])
        h = 1e-6
        num = np.array([(acq(x[None, :] + e).value - acq(x[None, :] - e).value) / (2 * h) for e in np.eye(2) * h])
        assert np.allclose(r.grad[0], num, rtol=1e-4, atol=1e-9)


def test_sigma_floor_keeps_values_finite(models):
    obj, _ = models
    acq = aa.AnalyticAcquisition("logei", obj, aa.IncumbentState(10.0))
    v, g = acq.evaluate(obj.X)  # training points: tiny variance
    assert np.all(np.isfinite(v)) and np.all(np.isfinite(g))


def test_same_maximizer_on_grid():
    rng = np.random.default_rng(2)
    grid = np.linspace(-3, 3, 1001)
    for _ in range(10):
        mu = rng.normal() * np.sin(grid * rng.uniform(1, 3))
        sig = 0.2 + rng.uniform() * (1 + np.cos(grid))
        e = aa.ei(mu, sig, 1.0)[0]
        le = aa.logei(mu, sig, 1.0)[0]
        if e.max() > 0:
            assert np.argmax(e) == np.argmax(le)
