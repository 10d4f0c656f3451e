import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logbo import surrogate as sg


def make_data(n=12, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    y = np.sin(6 * X[:, 0]) + X[:, -1] ** 2
    return X, y


@pytest.fixture(scope="module")
def model():
    X, y = make_data()
    data = sg.DataSet.from_raw(X, y)
    return sg.GPModel.fit(X, data.column(0), seed=0)


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_dataset_standardization_roundtrip():
    X, y = make_data()
    data = sg.DataSet.from_raw(X, y)
    assert np.mean(data.column(0)) == pytest.approx(0.0, abs=1e-12)
    assert np.std(data.column(0)) == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(data.destandardize(data.column(0), 0), y)


def test_dataset_constant_outputs_and_bounds():
    X = np.full((3, 2), 0.5)
    data = sg.DataSet.from_raw(X, np.ones(3))
    assert np.all(data.column(0) == 0.0)
    with pytest.raises(ValueError):
        sg.DataSet.from_raw(np.array([[1.5, 0.2]]), np.ones(1))


def test_matern52_known_values():
    hp = sg.GPHyperparams(np.array([1.0]), 2.0, 1e-6, 0.0)
    assert sg.kernel_matern52_ard(np.zeros(1), np.zeros(1), hp) == pytest.approx(2.0)
    r = np.sqrt(5.0)
    expected = 2.0 * (1 + r + r * r / 3) * np.exp(-r)
    assert sg.kernel_matern52_ard(np.zeros(1), np.ones(1), hp) == pytest.approx(expected, rel=1e-14)


def test_matern52_grad_x1_matches_fd():
    rng = np.random.default_rng(1)
    X1, X2 = rng.uniform(size=(3, 2)), rng.uniform(size=(4, 2))
    ls = np.array([0.3, 0.7])
    G = sg.matern52_grad_x1(X1, X2, ls, 1.3)
    for i in range(3):
        f = lambda x: sg.matern52(x[None, :], X2, ls, 1.3)[0]
        num = np.stack([(f(X1[i] + h) - f(X1[i] - h)) / 2e-6 for h in np.eye(2) * 1e-6], axis=-1)
        assert np.allclose(G[i], num, atol=1e-8)


def test_jittered_cholesky_ladder():
    K = np.ones((3, 3))  # rank one
    L, jitter = sg.jittered_cholesky(K)
    assert jitter > 0
    assert np.allclose(L @ L.T, K + jitter * np.eye(3))


def test_lml_gradient_matches_fd():
    X, y = make_data(n=10, d=3, seed=2)
    y = (y - y.mean()) / y.std()
    theta = np.array([np.log(0.4), np.log(0.6), np.log(0.8), np.log(1.2), np.log(1e-2), 0.1])
    _, g = sg.log_marginal_likelihood(theta, X, y, return_grad=True)
    num = fd_grad(lambda t: sg.log_marginal_likelihood(t, X, y), theta)
    assert np.allclose(g, num, rtol=1e-5, atol=1e-6)


def test_fit_respects_bounds_and_is_deterministic():
    X, y = make_data()
    y = (y - y.mean()) / y.std()
    a = sg.GPModel.fit(X, y, seed=3)
    b = sg.GPModel.fit(X, y, seed=3)
    assert a.to_dict() == b.to_dict()
    assert np.all((a.hp.lengthscales >= 0.01) & (a.hp.lengthscales <= 100))
    assert a.hp.noise_variance >= sg.NOISE_FLOOR


def test_posterior_interpolates_and_is_psd(model):
    post = model.posterior(model.X)
    assert np.allclose(post.mean, model.y, atol=0.1)
    C = post.covariance
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-8


def test_prior_when_no_data():
    hp = sg.GPHyperparams(np.full(2, 0.5), 1.5, 1e-6, 0.3)
    m = sg.GPModel(hp, np.zeros((0, 2)), np.zeros(0))
    mu, var = m.marginals(np.random.default_rng(0).uniform(size=(5, 2)))
    assert np.allclose(mu, 0.3)
    assert np.allclose(var, 1.5)


def test_marginal_gradients_match_fd(model):
    x = np.array([[0.31, 0.62]])
    _, _, dmu, dvar = model.marginals(x, return_grad=True)
    num_mu = fd_grad(lambda z: model.marginals(z)[0][0], x)
    num_var = fd_grad(lambda z: model.marginals(z)[1][0], x)
    assert np.allclose(dmu, num_mu, rtol=1e-5, atol=1e-8)
    assert np.allclose(dvar, num_var, rtol=1e-5, atol=1e-8)


def test_sample_gradient_matches_fd(model):
    rng = np.random.default_rng(4)
    base = rng.standard_normal((16, 3))
    X = rng.uniform(size=(3, 2))
    W = rng.standard_normal((16, 3))
    sampler = sg.JointSampler(model, base, np.zeros((0, 2)))
    _, back = sampler(X)
    g = back(W)
    num = fd_grad(lambda Z: float(np.sum(W * sampler(Z)[0])), X)
    assert np.allclose(g, num, rtol=1e-5, atol=1e-7)


def test_sample_is_mean_plus_chol(model):
    X = np.array([[0.2, 0.3], [0.7, 0.1]])
    post = model.posterior(X)
    base = np.random.default_rng(5).standard_normal((8, 2))
    S = sg.sample(post, base)
    L, _ = sg.jittered_cholesky(post.covariance)
    assert np.allclose(S, post.mean + base @ L.T)


def test_json_roundtrip(model):
    text = sg.models_to_json([model])
    models, _ = sg.models_from_json(text)
    json.loads(text)
    x = np.array([[0.4, 0.4]])
    assert np.array_equal(models[0].marginals(x)[0], model.marginals(x)[0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_variance_nonnegative(model, x):
    _, var = model.marginals(np.array([x]))
    assert var[0] >= 0
