import numpy as np
import pytest
from scipy import stats

from bayesenkf.exceptions import ModelError
from bayesenkf.kalman import grid_kf_oracle, kalman_filter, kf_loglik_path, kf_step
from bayesenkf.models import LinearVARConfig, ModelSpec, linear_var_model, simulate_truth
from bayesenkf.param_posterior import PriorSpec, TruncatedNormal, make_grid


def scalar_model(q, r, phi=1.0):
    return ModelSpec(
        n=1, m=1, param_names=("q",),
        evolution=lambda X, g: phi * X,
        obs_matrix=lambda th: np.eye(1),
        evo_cov=lambda th: np.array([[q]]),
        obs_cov=lambda th: np.array([[r]]),
        init_mean=lambda th: np.zeros(1), init_cov=lambda th: np.eye(1),
        transition_matrix=lambda g: np.array([[phi]]),
    )


def test_scalar_update_textbook():
    q, r, mu, p, y = 0.3, 0.5, 1.0, 2.0, 2.2
    mean, cov, ll = kf_step(np.array([mu]), np.array([[p]]), np.array([y]), scalar_model(q, r), np.ones(1))
    pf = p + q
    k = pf / (pf + r)
    assert mean[0] == pytest.approx(mu + k * (y - mu))
    assert cov[0, 0] == pytest.approx((1 - k) * pf)
    assert ll == pytest.approx(stats.norm.logpdf(y, mu, np.sqrt(pf + r)))


def test_zero_innovation_keeps_mean():
    mean, _, _ = kf_step(np.array([0.7]), np.eye(1), np.array([0.7]), scalar_model(1.0, 1.0), np.ones(1))
    assert mean[0] == pytest.approx(0.7)


def joint_loglik(model, Y, theta):
    """Log-density of the stacked observations from the full (nT x nT) covariance."""
    T = len(Y)
    n = model.n
    M = model.transition_matrix(model.gamma)
    Q = model.evo_cov(theta)
    R = model.obs_cov(theta)
    H = model.obs_matrix(theta)
    covs = [None] * (T + 1)
    covs[0] = model.init_cov(theta)
    for t in range(1, T + 1):
        covs[t] = M @ covs[t - 1] @ M.T + Q
    big = np.zeros((T * n, T * n))
    for s in range(1, T + 1):
        for t in range(s, T + 1):
            # Cov(x_t, x_s) = M^(t-s) Var(x_s)
            c = np.linalg.matrix_power(M, t - s) @ covs[s]
            big[(t - 1) * n:t * n, (s - 1) * n:s * n] = H @ c @ H.T
            big[(s - 1) * n:s * n, (t - 1) * n:t * n] = (H @ c @ H.T).T
    big += np.kron(np.eye(T), R)
    return stats.multivariate_normal.logpdf(Y.ravel(), cov=big)


def test_prediction_error_decomposition_matches_joint():
    model = linear_var_model(LinearVARConfig(n=5))
    theta = np.array([2.0, 0.7])
    _, Y = simulate_truth(model, theta, 20, seed=4)
    assert kf_loglik_path(model, Y, theta).sum() == pytest.approx(joint_loglik(model, Y, theta), rel=1e-10)


def test_kalman_filter_shapes():
    model = linear_var_model(LinearVARConfig(n=5))
    _, Y = simulate_truth(model, np.array([2.0, 0.7]), 6, seed=1)
    means, covs, lls = kalman_filter(model, Y, np.array([2.0, 0.7]))
    assert means.shape == (6, 5) and covs.shape == (6, 5, 5) and lls.shape == (6,)


def test_nonlinear_model_rejected():
    m = scalar_model(1.0, 1.0)
    m = ModelSpec(**{**m.__dict__, "transition_matrix": None})
    with pytest.raises(ModelError):
        kf_step(np.zeros(1), np.eye(1), np.zeros(1), m, np.ones(1))


def test_grid_oracle_trivial_grids():
    model = linear_var_model(LinearVARConfig(n=3))
    _, Y = simulate_truth(model, np.array([5.0, 1.0]), 8, seed=2)
    seq = grid_kf_oracle(model, Y, np.array([[5.0, 1.0]]), np.zeros(1))
    assert all(g.weights[0] == pytest.approx(1.0) for g in seq)
    seq = grid_kf_oracle(model, Y, np.array([[5.0, 1.0], [5.0, 1.0]]), np.zeros(2))
    assert all(g.weights[0] == pytest.approx(g.weights[1]) for g in seq)


def test_grid_oracle_against_joint_likelihood():
    model = linear_var_model(LinearVARConfig(n=4))
    _, Y = simulate_truth(model, np.array([5.0, 1.0]), 5, seed=3)
    prior = PriorSpec(("beta", "tau"), (TruncatedNormal(5, 10), TruncatedNormal(2, 0.16)))
    grid = make_grid(prior, 4)
    final = grid_kf_oracle(model, Y, grid.points, grid.log_weights)[-1]
    ref = grid.log_weights + np.array([joint_loglik(model, Y, th) for th in grid.points])
    ref -= np.logaddexp.reduce(ref)
    np.testing.assert_allclose(final.log_weights, ref, atol=1e-9)
