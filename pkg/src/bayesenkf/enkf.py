"""Perturbed-observation EnKF: prior covariance, gain, analysis, and the
EnKF and discrete-mixture approximations of ``p(y_t | theta, Y_{t-1})``."""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .covariance import TaperSpec, tapered_empirical_cov
from .exceptions import ConditioningError, DimensionError, InsufficientEnsembleError
from .linalg import batched_cholesky, logdet_from_cholesky, psd_sqrt, robust_cholesky, symmetrize

LOG_2PI = np.log(2.0 * np.pi)


def check_ensemble(ensemble):
    X = np.asarray(ensemble, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"ensemble must be 2-d (N, n), got shape {X.shape}")
    if X.shape[0] < 2:
        raise InsufficientEnsembleError(f"need at least 2 members, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ConditioningError("ensemble contains non-finite members")
    return X


def inflate(ensemble, factor):
    """Multiply ensemble anomalies by ``factor``."""
    if factor == 1.0:
        return ensemble
    mean = ensemble.mean(axis=0)
    return mean + factor * (ensemble - mean)


@dataclass(frozen=True)
class ForecastSummary:
    """Prior ensemble mean and tapered covariance at one assimilation time."""

    prior_mean: np.ndarray
    prior_cov: np.ndarray

    def forecast_cov(self, model, theta):
        if model.zero_evo_cov:
            return self.prior_cov
        return self.prior_cov + model.evo_cov(theta)


def forecast_summary(prior_ensemble, taper=TaperSpec(), distances=None):
    X = check_ensemble(prior_ensemble)
    P = symmetrize(tapered_empirical_cov(X, taper, distances))
    return ForecastSummary(prior_mean=X.mean(axis=0), prior_cov=P)


def _innovation(summary, model, theta, diagnostics=None):
    theta = np.asarray(theta, dtype=float)
    H = np.asarray(model.obs_matrix(theta), dtype=float)
    Pf = summary.forecast_cov(model, theta)
    S = symmetrize(H @ Pf @ H.T + model.obs_cov(theta))
    L = robust_cholesky(S, diagnostics)
    return S, L, H, Pf


def innovation_cov(summary, model, theta, diagnostics=None):
    """``H P^f H' + R`` with ``P^f = P^p + Q(theta)``; raises
    :class:`ConditioningError` if it is not numerically positive definite."""
    return _innovation(summary, model, theta, diagnostics)[0]


def kalman_gain(summary, model, theta, diagnostics=None):
    """``P^f H' Sigma^{-1}``, shape ``(n, m)``."""
    _, L, H, Pf = _innovation(summary, model, theta, diagnostics)
    return cho_solve((L, True), H @ Pf).T


def enkf_loglik(summary, y, model, theta, diagnostics=None):
    """Gaussian log-density of ``y`` under ``N(H a^p, Sigma(theta))``."""
    y = np.asarray(y, dtype=float)
    _, L, H, _ = _innovation(summary, model, theta, diagnostics)
    e = y - H @ summary.prior_mean
    z = solve_triangular(L, e, lower=True)
    return float(-0.5 * logdet_from_cholesky(L) - 0.5 * z @ z - 0.5 * y.size * LOG_2PI)


def innovation_terms(summary, y, H, Q, R, prior_scale=None, diagnostics=None):
    """Batched ``log|Sigma_k|`` and ``e_k' Sigma_k^{-1} e_k`` over K parameter values.

    ``H`` is ``(m, n)`` or ``(K, m, n)``; ``Q`` is ``None`` or ``(K, n, n)``;
    ``R`` is ``(K, m, m)``. ``prior_scale`` (shape ``(K,)``) divides the prior
    covariance, used when a conjugate scale parameter is factored out.
    Returns ``(logdet, quad, ok)``; entries with ``ok == False`` could not be
    factorized and hold ``nan``.
    """
    R = np.asarray(R, dtype=float)
    K = R.shape[0]
    P = summary.prior_cov
    Pk = np.broadcast_to(P, (K,) + P.shape)
    if prior_scale is not None:
        Pk = Pk / np.asarray(prior_scale, dtype=float)[:, None, None]
    if Q is not None:
        Pk = Pk + Q
    H = np.asarray(H, dtype=float)
    if H.ndim == 2:
        S = H @ Pk @ H.T + R
        e = y - H @ summary.prior_mean
        E = np.broadcast_to(e, (K, e.size))
    else:
        S = H @ Pk @ np.swapaxes(H, -1, -2) + R
        E = y - H @ summary.prior_mean
    S = symmetrize(S)
    L, ok = batched_cholesky(S, diagnostics)
    logdet = np.full(K, np.nan)
    quad = np.full(K, np.nan)
    if np.any(ok):
        z = np.linalg.solve(L[ok], E[ok][..., None])[..., 0]
        logdet[ok] = logdet_from_cholesky(L[ok])
        quad[ok] = np.sum(z * z, axis=-1)
    return logdet, quad, ok


def enkf_loglik_batch(summary, y, model, thetas, diagnostics=None):
    """:func:`enkf_loglik` at each row of ``thetas``; ``-inf`` where the
    innovation covariance cannot be factorized."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    H = np.stack([model.obs_matrix(th) for th in thetas])
    Q = None if model.zero_evo_cov else np.stack([model.evo_cov(th) for th in thetas])
    R = np.stack([model.obs_cov(th) for th in thetas])
    y = np.asarray(y, dtype=float)
    logdet, quad, ok = innovation_terms(summary, y, H, Q, R, diagnostics=diagnostics)
    out = np.full(len(thetas), -np.inf)
    out[ok] = -0.5 * logdet[ok] - 0.5 * quad[ok] - 0.5 * y.size * LOG_2PI
    return out


def discrete_component_logliks(prior_ensemble, y, model, theta):
    """Per-member ``log N(y | H x^p_i, H Q H' + R)``."""
    X = np.asarray(prior_ensemble, dtype=float)
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    H = np.asarray(model.obs_matrix(theta), dtype=float)
    C = model.obs_cov(theta)
    if not model.zero_evo_cov:
        C = C + H @ model.evo_cov(theta) @ H.T
    L = robust_cholesky(symmetrize(C))
    Z = solve_triangular(L, (y - X @ H.T).T, lower=True)
    return -0.5 * logdet_from_cholesky(L) - 0.5 * np.sum(Z * Z, axis=0) - 0.5 * y.size * LOG_2PI


def discrete_loglik(prior_ensemble, y, model, theta, return_weights=False):
    """Log of the equal-weight Gaussian mixture over prior members.

    With ``return_weights`` also returns the normalized mixture
    responsibilities, whose inverse sum of squares is the effective
    mixture size.
    """
    comp = discrete_component_logliks(prior_ensemble, y, model, theta)
    total = logsumexp(comp)
    val = float(total - np.log(comp.size))
    if return_weights:
        return val, np.exp(comp - total)
    return val


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))


def analysis_update(forecast, y, model, theta, rng=None, summary=None,
                    std_normals=None, diagnostics=None):
    """Perturbed-observation analysis at a single parameter value.

    ``x_i <- x_i + K (y + v_i - H x_i)`` with ``v_i ~ N(0, R(theta))``. The
    gain uses ``summary.prior_cov + Q(theta)`` when a summary from the
    pre-noise prior ensemble is given, and otherwise the untapered sample
    covariance of ``forecast``. Passing ``std_normals`` (``(N, m)``) fixes
    the perturbations' standard-normal draws, e.g. to share them across
    parameter values.
    """
    Xf = check_ensemble(forecast)
    theta = np.asarray(theta, dtype=float)
    if summary is None:
        summary = ForecastSummary(Xf.mean(axis=0), tapered_empirical_cov(Xf, TaperSpec()))
        summary_model = _NoEvolutionNoise(model)
    else:
        summary_model = model
    K = kalman_gain(summary, summary_model, theta, diagnostics)
    H = np.asarray(model.obs_matrix(theta), dtype=float)
    if std_normals is None:
        if rng is None:
            raise ValueError("either rng or std_normals is required")
        std_normals = rng.standard_normal((Xf.shape[0], model.m))
    V = std_normals @ psd_sqrt(model.obs_cov(theta)).T
    D = np.asarray(y, dtype=float) + V - Xf @ H.T
    return Xf + D @ K.T


class _NoEvolutionNoise:
    """View of a model with ``Q = 0``; used when the forecast ensemble
    already carries the evolution noise."""

    zero_evo_cov = True

    def __init__(self, model):
        self._model = model

    def __getattr__(self, name):
        return getattr(self._model, name)
