import math
import time
import warnings

import numpy as np
import pytest

from painfusion.errors import BadInput, DegenerateModel, DimMismatch
from painfusion.rvm import (
    KernelSpec,
    RvmModel,
    RvmOptions,
    _log_likelihood_from_posterior,
    _posterior,
    fixed_alpha_posterior,
    log_marginal_likelihood,
    marginal_likelihood_gradient,
    rbf_kernel_matrix,
    rvm_predict,
    rvm_train,
)


def sinc_problem(seed=0, n=100, noise=0.01):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-10, 10, n)
    y = np.sinc(x / np.pi) + rng.normal(0, noise, n)
    grid = np.linspace(-10, 10, 1000)
    return x[:, None], y, grid[:, None], np.sinc(grid / np.pi)


def test_kernel_analytic_points():
    assert rbf_kernel_matrix([[1.0, 2.0]], [[1.0, 2.0]], 0.7)[0, 0] == pytest.approx(1.0, abs=1e-15)
    w = 1.3
    z = [[w * math.sqrt(2), 0.0]]
    assert rbf_kernel_matrix([[0.0, 0.0]], z, w)[0, 0] == pytest.approx(math.exp(-1), rel=1e-12)


def test_kernel_matches_double_loop():
    rng = np.random.default_rng(42)
    X, Z, w = rng.normal(size=(5, 3)), rng.normal(size=(4, 3)), 0.9
    K = rbf_kernel_matrix(X, Z, w)
    for i in range(5):
        for j in range(4):
            d2 = sum((X[i, k] - Z[j, k]) ** 2 for k in range(3))
            assert abs(K[i, j] - math.exp(-d2 / (2 * w * w))) < 1e-12


def test_kernel_symmetric_psd():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 4))
    K = rbf_kernel_matrix(X, X, 1.0)
    np.testing.assert_allclose(K, K.T, atol=0)
    np.linalg.cholesky(K + 1e-8 * np.eye(40))


def test_kernel_bad_input():
    with pytest.raises(BadInput):
        rbf_kernel_matrix([[np.nan]], [[0.0]], 1.0)
    with pytest.raises(DimMismatch):
        rbf_kernel_matrix(np.zeros((2, 3)), np.zeros((2, 2)), 1.0)
    with pytest.raises(BadInput):
        KernelSpec(width=0.0)


def test_posterior_interpolation_limit():
    y = np.array([1.0, -2.0, 3.5, 0.25])
    mu, _ = fixed_alpha_posterior(np.eye(4), y, np.full(4, 1e-12), 1e-12)
    np.testing.assert_allclose(mu, y, atol=1e-6)


def test_posterior_prior_dominates():
    rng = np.random.default_rng(0)
    Phi, y = rng.normal(size=(20, 5)), rng.normal(size=20)
    alpha = np.ones(5)
    alpha[2] = 1e12
    mu, _ = fixed_alpha_posterior(Phi, y, alpha, 0.1)
    assert abs(mu[2]) < 1e-9


def dense_posterior(Phi, y, alpha, s2):
    Sigma = np.linalg.inv(Phi.T @ Phi / s2 + np.diag(alpha))
    return Sigma @ Phi.T @ y / s2, Sigma


def test_posterior_matches_dense_inverse():
    rng = np.random.default_rng(7)
    for _ in range(50):
        Phi, y = rng.normal(size=(20, 5)), rng.normal(size=20)
        alpha, s2 = rng.uniform(0.1, 10, 5), rng.uniform(0.05, 2)
        mu, Sigma = fixed_alpha_posterior(Phi, y, alpha, s2)
        mu_d, Sigma_d = dense_posterior(Phi, y, alpha, s2)
        np.testing.assert_allclose(mu, mu_d, atol=1e-8)
        np.testing.assert_allclose(Sigma, Sigma_d, atol=1e-8)


def test_woodbury_likelihood_matches_dense():
    rng = np.random.default_rng(3)
    Phi, y = rng.normal(size=(20, 6)), rng.normal(size=20)
    alpha, s2 = rng.uniform(0.2, 5, 6), 0.3
    mu, _, logdet = _posterior(Phi, y, alpha, s2, RvmOptions())
    assert _log_likelihood_from_posterior(Phi, y, alpha, s2, mu, logdet) == pytest.approx(
        log_marginal_likelihood(Phi, y, alpha, s2), rel=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(10):
        Phi, y = rng.normal(size=(20, 6)), rng.normal(size=20)
        log_alpha, log_s2 = rng.normal(0, 1, 6), math.log(rng.uniform(0.1, 2))
        d_alpha, d_noise = marginal_likelihood_gradient(Phi, y, np.exp(log_alpha), math.exp(log_s2))

        def L(la, ls):
            return log_marginal_likelihood(Phi, y, np.exp(la), math.exp(ls))

        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fd = (L(log_alpha + e, log_s2) - L(log_alpha - e, log_s2)) / (2 * h)
            assert abs(fd - d_alpha[i]) <= 1e-4 * max(abs(fd), 1e-3)
        fd = (L(log_alpha, log_s2 + h) - L(log_alpha, log_s2 - h)) / (2 * h)
        assert abs(fd - d_noise) <= 1e-4 * max(abs(fd), 1e-3)


def test_constant_target_gives_bias_only_model():
    X = np.random.default_rng(0).normal(size=(30, 2))
    model = rvm_train(X, np.full(30, 4.0), KernelSpec(1.0))
    assert model.n_relevance == 0 and model.has_bias
    mean, var = rvm_predict(model, np.random.default_rng(1).normal(size=(10, 2)))
    np.testing.assert_allclose(mean, 4.0, atol=1e-6)
    assert np.all(var >= model.noise_var)


def test_all_pruned_warns_and_returns_bias_only():
    X = np.random.default_rng(0).normal(size=(25, 2))
    with pytest.warns(DegenerateModel):
        model = rvm_train(X, np.zeros(25), KernelSpec(1.0))
    assert model.n_relevance == 0
    mean, var = rvm_predict(model, X[:3])
    np.testing.assert_allclose(mean, 0.0)
    assert np.all(var >= model.noise_var)


def test_sinc_benchmark():
    X, y, Xt, yt = sinc_problem(seed=0)
    start = time.perf_counter()
    model = rvm_train(X, y, KernelSpec(0.5))
    elapsed = time.perf_counter() - start
    mean, _ = rvm_predict(model, Xt)
    rmse = float(np.sqrt(np.mean((mean - yt) ** 2)))
    assert rmse <= 0.05
    assert model.n_relevance <= 15
    assert elapsed < 10


def test_single_basis_generator_recovers_its_centre():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 2))
    w = 0.6
    Xs = (X - X.mean(0)) / X.std(0)
    y = 3 * rbf_kernel_matrix(Xs, Xs[17:18], w)[:, 0] + rng.normal(0, 1e-4, 50)
    model = rvm_train(X, y, KernelSpec(w))
    assert 17 in model.relevance_index
    mean, _ = rvm_predict(model, X)
    assert float(np.sqrt(np.mean((mean - y) ** 2))) <= 1e-2


def test_relevance_vectors_are_training_rows():
    X, y, _, _ = sinc_problem(seed=1, n=60, noise=0.05)
    model = rvm_train(X, y, KernelSpec(0.5))
    np.testing.assert_array_equal(model.relevance_vectors, X[model.relevance_index])
    assert model.n_relevance <= 60 and model.noise_var > 0
    assert np.all(model.alpha < 1e9)


def test_likelihood_non_decreasing_on_random_problems():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(15, 60)), int(rng.integers(1, 5))
        X = rng.normal(size=(n, d))
        y = np.sin(X.sum(axis=1)) + rng.normal(0, 0.1, n)
        model = rvm_train(X, y, KernelSpec(1.0), RvmOptions(record_likelihood=True))
        assert np.min(np.diff(model.likelihood_trace)) >= -1e-10


def test_likelihood_non_decreasing_on_sinc():
    # near-noiseless plateau: round-off in log|H| is ~1e-12 of |L|
    X, y, _, _ = sinc_problem(seed=2)
    model = rvm_train(X, y, KernelSpec(0.8), RvmOptions(record_likelihood=True))
    trace = np.array(model.likelihood_trace)
    assert np.all(np.diff(trace) >= -1e-10 * np.abs(trace[1:]))
    assert trace[-1] > trace[0]


def test_sparsity_on_sinc():
    X, y, _, _ = sinc_problem(seed=3)
    assert rvm_train(X, y, KernelSpec(0.5)).n_relevance <= 15


def test_predict_near_training_points():
    X, y, _, _ = sinc_problem(seed=4, n=80, noise=0.05)
    model = rvm_train(X, y, KernelSpec(0.4))
    mean, var = rvm_predict(model, X)
    assert np.mean(np.abs(mean - y) <= 2 * np.sqrt(var)) > 0.9


def test_batch_equals_loop():
    X, y, Xt, _ = sinc_problem(seed=0, n=60)
    model = rvm_train(X, y, KernelSpec(0.5))
    mean, var = rvm_predict(model, Xt[:50])
    for i in range(50):
        m1, v1 = rvm_predict(model, Xt[i:i + 1])
        assert abs(m1[0] - mean[i]) < 1e-12 and abs(v1[0] - var[i]) < 1e-12


def test_dimension_mismatch_on_predict():
    X, y, _, _ = sinc_problem(seed=0, n=30)
    model = rvm_train(X, y, KernelSpec(0.5))
    with pytest.raises(DimMismatch):
        rvm_predict(model, np.zeros((2, 3)))


def test_serialization_round_trip_is_lossless():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 3))
    y = X[:, 0] ** 2 + rng.normal(0, 0.1, 40)
    model = rvm_train(X, y, KernelSpec(1.2), groups=["a"] * 20 + ["b"] * 20)
    text = model.to_json()
    back = RvmModel.from_json(text)
    assert back.to_json() == text
    assert back.provenance == {"a", "b"}
    for name in ("weights", "alpha", "covariance", "x_mean", "x_scale", "relevance_vectors"):
        assert getattr(back, name).tobytes() == getattr(model, name).tobytes()
    Xt = rng.normal(size=(10, 3))
    assert rvm_predict(back, Xt)[0].tobytes() == rvm_predict(model, Xt)[0].tobytes()


def test_model_is_immutable():
    X, y, _, _ = sinc_problem(seed=0, n=30)
    model = rvm_train(X, y, KernelSpec(0.5))
    with pytest.raises(ValueError):
        model.weights[0] = 1.0
    with pytest.raises(AttributeError):
        model.noise_var = 2.0


def test_constant_feature_is_not_scaled():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=30), np.full(30, 7.0)])
    model = rvm_train(X, X[:, 0], KernelSpec(1.0))
    assert model.x_scale[1] == 1.0


def test_linear_kernel_option():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    y = 2 * X[:, 0] - X[:, 1] + 0.5 + rng.normal(0, 0.01, 60)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        model = rvm_train(X, y, KernelSpec(kind="linear"))
    mean, _ = rvm_predict(model, X)
    assert float(np.sqrt(np.mean((mean - y) ** 2))) < 0.05
