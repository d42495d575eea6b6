"""Correlation functions, compactly supported tapers and the tapered
sample covariance used for the EnKF prior covariance."""
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import ConfigError, DomainError, InsufficientEnsembleError

MAX_MATERN_SMOOTHNESS = 50.0
TAPER_KINDS = ("gaspari_cohn", "wendland", "none")


def _check_distance(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise DomainError("distances must be non-negative")
    return d


def exponential_corr(d, tau):
    """``exp(-tau * d)``."""
    if tau <= 0:
        raise DomainError(f"decay rate must be positive, got {tau}")
    d = _check_distance(d)
    return np.exp(-tau * d)


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    lam: float
    nu: float

    def __post_init__(self):
        if self.sigma2 <= 0 or self.lam <= 0 or self.nu <= 0:
            raise DomainError("Matern sill, range and smoothness must be positive")
        if self.nu > MAX_MATERN_SMOOTHNESS:
            raise DomainError(
                f"smoothness {self.nu} outside supported range (0, {MAX_MATERN_SMOOTHNESS}]"
            )


def matern_cov(d, p):
    """Matern covariance ``sigma2 / (2^(nu-1) Gamma(nu)) (d/lam)^nu K_nu(d/lam)``.

    Note the distance is scaled by ``lam`` alone, without a ``sqrt(2 nu)``
    factor. At ``d == 0`` the analytic limit ``sigma2`` is returned.
    """
    d = _check_distance(d)
    x = d / p.lam
    out = np.full(x.shape, p.sigma2, dtype=float)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        # log form avoids inf * 0 when K_nu overflows at small x
        log_norm = (p.nu - 1.0) * np.log(2.0) + special.gammaln(p.nu)
        with np.errstate(divide="ignore"):
            logk = np.log(special.kv(p.nu, xp))
        vals = np.exp(p.nu * np.log(xp) + logk - log_norm)
        vals[np.isinf(logk) & (logk < 0)] = 0.0
        out[pos] = p.sigma2 * np.minimum(vals, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TaperSpec:
    """Taper family and the distance at which it reaches zero."""

    kind: str = "none"
    range: float = 1.0

    def __post_init__(self):
        if self.kind not in TAPER_KINDS:
            raise ConfigError(f"unknown taper kind {self.kind!r}; expected one of {TAPER_KINDS}")
        if self.range <= 0:
            raise ConfigError("taper range must be positive")


def _gaspari_cohn(r):
    # r = d / c with half-width c; support is r < 2
    out = np.zeros_like(r)
    a = r <= 1.0
    b = (r > 1.0) & (r < 2.0)
    ra = r[a]
    out[a] = -0.25 * ra**5 + 0.5 * ra**4 + 0.625 * ra**3 - 5.0 / 3.0 * ra**2 + 1.0
    rb = r[b]
    out[b] = (
        rb**5 / 12.0 - 0.5 * rb**4 + 0.625 * rb**3 + 5.0 / 3.0 * rb**2
        - 5.0 * rb + 4.0 - 2.0 / (3.0 * rb)
    )
    return np.clip(out, 0.0, 1.0)


def taper_value(d, spec):
    d = _check_distance(d)
    if spec.kind == "none":
        out = np.ones_like(d)
    elif spec.kind == "gaspari_cohn":
        out = _gaspari_cohn(np.atleast_1d(d) / (0.5 * spec.range)).reshape(d.shape)
    elif spec.kind == "wendland":
        r = d / spec.range
        out = np.clip(1.0 - r, 0.0, None) ** 4 * (1.0 + 4.0 * r)
    else:  # pragma: no cover - TaperSpec validates kind
        raise ConfigError(f"unknown taper kind {spec.kind!r}")
    return out if out.ndim else float(out)


def circular_distance(i, j, n):
    """Distance ``min(|i-j|, n-|i-j|)`` between 1-based positions on a ring."""
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i < 1) or np.any(i > n) or np.any(j < 1) or np.any(j > n):
        raise DomainError(f"indices must lie in 1..{n}")
    d = np.abs(i - j)
    out = np.minimum(d, n - d)
    return out if out.ndim else int(out)


def transect_distance(i, j, n):
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i < 1) or np.any(i > n) or np.any(j < 1) or np.any(j > n):
        raise DomainError(f"indices must lie in 1..{n}")
    out = np.abs(i - j)
    return out if out.ndim else int(out)


def distance_matrix(dist, n):
    """Evaluate a pairwise distance function on all 1-based index pairs."""
    idx = np.arange(1, n + 1)
    return np.asarray(dist(idx[:, None], idx[None, :], n), dtype=float)


def taper_matrix(spec, distances):
    if spec.kind == "none":
        return None
    return taper_value(np.asarray(distances, dtype=float), spec)


def sample_cov(ensemble):
    """Sample covariance (divisor N-1) of an ``(N, n)`` ensemble."""
    X = np.asarray(ensemble, dtype=float)
    N = X.shape[0]
    if N < 2:
        raise InsufficientEnsembleError(f"need at least 2 members, got {N}")
    A = X - X.mean(axis=0)
    return A.T @ A / (N - 1)


def tapered_empirical_cov(ensemble, spec, dist=None):
    """Schur product of a taper matrix with the ensemble sample covariance.

    ``dist`` is either an ``(n, n)`` distance matrix or a callable
    ``dist(i, j, n)`` on 1-based indices. It may be omitted when
    ``spec.kind == "none"``.
    """
    S = sample_cov(ensemble)
    if spec.kind == "none":
        return S
    if dist is None:
        raise ConfigError("a distance is required for tapering")
    D = dist if not callable(dist) else distance_matrix(dist, S.shape[0])
    return taper_value(np.asarray(D, dtype=float), spec) * S
