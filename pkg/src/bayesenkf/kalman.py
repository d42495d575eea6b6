"""Exact Kalman filtering for linear models and the exact grid posterior
obtained by running one Kalman filter per gridpoint."""
import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .exceptions import ConditioningError, ModelError
from .linalg import logdet_from_cholesky, robust_cholesky, symmetrize
from .param_posterior import ParamGrid, grid_update

LOG_2PI = np.log(2.0 * np.pi)


def _transition(model, gamma=None):
    if model.n == 0:
        return np.zeros((0, 0))
    if model.transition_matrix is None:
        raise ModelError(f"model {model.name!r} has no linear transition matrix")
    return model.transition_matrix(model.gamma if gamma is None else gamma)


def kf_step(mean, cov, y, model, theta, gamma=None):
    """One predict/update cycle.

    Returns the filtered ``(mean, cov)`` and ``log p(y_t | theta, Y_{t-1})``
    from the prediction-error decomposition.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    M = _transition(model, gamma)
    H = np.asarray(model.obs_matrix(theta), dtype=float)
    R = np.asarray(model.obs_cov(theta), dtype=float)
    a = M @ mean
    P = M @ cov @ M.T + model.evo_cov(theta)
    S = symmetrize(H @ P @ H.T + R)
    L = robust_cholesky(S)
    e = y - H @ a
    z = solve_triangular(L, e, lower=True)
    logdens = float(-0.5 * logdet_from_cholesky(L) - 0.5 * z @ z - 0.5 * y.size * LOG_2PI)
    K = cho_solve((L, True), H @ P).T
    new_mean = a + K @ e
    IKH = np.eye(model.n) - K @ H
    # Joseph form keeps the covariance symmetric PSD
    new_cov = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return new_mean, new_cov, logdens


def kf_loglik_path(model, observations, theta, gamma=None):
    """Predictive log-densities ``log p(y_t | theta, Y_{t-1})`` for ``t = 1..T``."""
    theta = np.asarray(theta, dtype=float)
    mean = np.asarray(model.init_mean(theta), dtype=float)
    cov = np.asarray(model.init_cov(theta), dtype=float)
    out = np.empty(len(observations))
    for t, y in enumerate(observations):
        mean, cov, out[t] = kf_step(mean, cov, y, model, theta, gamma)
    return out


def kalman_filter(model, observations, theta, gamma=None):
    """Filtered means ``(T, n)``, covariances ``(T, n, n)`` and predictive log-densities."""
    theta = np.asarray(theta, dtype=float)
    mean = np.asarray(model.init_mean(theta), dtype=float)
    cov = np.asarray(model.init_cov(theta), dtype=float)
    T = len(observations)
    means = np.empty((T, model.n))
    covs = np.empty((T, model.n, model.n))
    lls = np.empty(T)
    for t, y in enumerate(observations):
        mean, cov, lls[t] = kf_step(mean, cov, y, model, theta, gamma)
        means[t], covs[t] = mean, cov
    return means, covs, lls


def grid_kf_oracle(model, observations, grid_points, prior_log_weights):
    """Exact discretized posteriors ``p(theta_k | Y_t)`` for ``t = 0..T``.

    Gridpoints whose Kalman filter hits a singular innovation covariance, or
    whose prior weight is zero, get zero posterior weight.
    """
    points = np.atleast_2d(np.asarray(grid_points, dtype=float))
    T = len(observations)
    lls = np.full((len(points), T), -np.inf)
    prior_lw = np.asarray(prior_log_weights, dtype=float)
    for k, th in enumerate(points):
        if not np.isfinite(prior_lw[k]):
            continue
        try:
            lls[k] = kf_loglik_path(model, observations, th)
        except ConditioningError:
            lls[k] = -np.inf
    grid = ParamGrid(points, prior_lw - np.logaddexp.reduce(prior_lw))
    out = [grid]
    for t in range(T):
        grid = grid_update(grid, lls[:, t])
        out.append(grid)
    return out
