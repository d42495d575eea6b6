"""Auxiliary particle filter with Liu-West kernel shrinkage for static
parameters, and systematic resampling."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError, DegeneracyError
from .linalg import psd_sqrt
from .models import member_noise, obs_loglik
from .param_posterior import Reparam, weighted_moments, weighted_quantiles
from .rng import substream


def systematic_resample(weights, rng, size=None):
    """Indices drawn by systematic resampling with one shared uniform offset."""
    w = np.asarray(weights, dtype=float)
    N = w.size if size is None else size
    c = np.cumsum(w)
    c /= c[-1]
    positions = (rng.uniform() + np.arange(N)) / N
    return np.minimum(np.searchsorted(c, positions, side="right"), w.size - 1)


def ess_from_log_weights(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    lw = lw - logsumexp(lw)
    return float(np.exp(-logsumexp(2.0 * lw)))


def liu_west_shrinkage(delta):
    """Shrinkage ``a = (3 delta - 1) / (2 delta)`` and kernel variance ``h^2 = 1 - a^2``."""
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"discount factor must lie in (0, 1), got {delta}")
    a = (3.0 * delta - 1.0) / (2.0 * delta)
    return a, 1.0 - a * a


@dataclass
class ParticleCloud:
    """States ``(N, n)``, transformed parameters ``(N, p)`` and normalized log-weights.

    Parameters live on an unconstrained scale (log for positive ones) so
    the Gaussian kernel never leaves the support.
    """

    states: np.ndarray
    phi: np.ndarray
    log_weights: np.ndarray
    reparam: Reparam

    @property
    def thetas(self):
        return self.reparam.to_theta(self.phi)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def summary(self):
        w = self.weights
        th = self.thetas
        mean, cov = weighted_moments(th, w)
        q = np.array([weighted_quantiles(th[:, j], w) for j in range(th.shape[1])])
        xm, xc = weighted_moments(self.states, w) if self.states.shape[1] else (np.zeros(0), np.zeros((0, 0)))
        return {
            "param_mean": mean,
            "param_sd": np.sqrt(np.diag(cov)),
            "param_q": q,
            "state_mean": xm,
            "state_sd": np.sqrt(np.clip(np.diag(xc), 0.0, None)),
        }


def liu_west_init(model, prior, N, seed):
    """Particles from the parameter prior and ``x_0 ~ N(a_0(theta), P_0(theta))``."""
    rng = substream(seed, 0, "init_param")
    thetas = prior.sample(rng, N)
    rep = Reparam(prior.lower, prior.upper)
    rng_x = substream(seed, 0, "init_state")
    Z = rng_x.standard_normal((N, model.n))
    a0 = np.asarray(model.init_mean(thetas[0]), dtype=float)
    L0 = psd_sqrt(np.asarray(model.init_cov(thetas[0]), dtype=float))
    X = a0 + Z @ L0.T
    return ParticleCloud(X, rep.to_u(thetas), np.full(N, -np.log(N)), rep)


def liu_west_step(cloud, y, model, delta, rng):
    """One auxiliary-particle-filter cycle with kernel-shrunk parameters.

    First stage: resample with weights ``w_i p(y | mu_i, m_i)`` where
    ``m_i`` is the shrunk parameter location and ``mu_i = M(x_i)``. Second
    stage: draw ``phi_i ~ N(m_i, h^2 V)``, propagate with noise, reweight by
    ``p(y | x_i, theta_i) / p(y | mu_i, m_i)``. Returns the new cloud and a
    dict with the evidence estimate ``loglik`` and the ESS.
    """
    N = cloud.phi.shape[0]
    rep = cloud.reparam
    a, h2 = liu_west_shrinkage(delta)
    lw = cloud.log_weights - logsumexp(cloud.log_weights)
    w = np.exp(lw)
    phibar, V = weighted_moments(cloud.phi, w)
    centers = a * cloud.phi + (1.0 - a) * phibar

    th_c = rep.to_theta(centers)
    mu = model.evolution(cloud.states, model.gamma)
    first = obs_loglik(model, y, mu, th_c)
    log_g = lw + first
    if not np.any(np.isfinite(log_g)):
        raise DegeneracyError("first-stage weights underflowed", ess_from_log_weights(lw))
    log_norm1 = logsumexp(log_g)
    idx = systematic_resample(np.exp(log_g - log_norm1), rng)

    Lv = psd_sqrt(V)
    phi = centers[idx] + np.sqrt(h2) * rng.standard_normal((N, V.shape[0])) @ Lv.T
    th = rep.to_theta(phi)
    X = mu[idx] + member_noise(model, "evo", th, rng.standard_normal((N, model.n)))
    second = obs_loglik(model, y, X, th) - first[idx]
    if not np.any(np.isfinite(second)):
        raise DegeneracyError("second-stage weights underflowed", 0.0)
    log_norm2 = logsumexp(second)
    new_lw = second - log_norm2
    info = {"loglik": float(log_norm1 + log_norm2 - np.log(N)),
            "ess": ess_from_log_weights(new_lw)}
    return ParticleCloud(X, phi, new_lw, rep), info
