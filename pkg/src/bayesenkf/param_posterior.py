"""Representations of the marginal parameter posterior ``p(theta | Y_t)``.

* :class:`ParamGrid` -- fixed atoms with recursively updated weights.
* :class:`NormalParamPosterior` -- Gaussian from the mode and curvature of
  the log posterior.
* :class:`InverseGammaPosterior` -- closed-form posterior of a scalar
  multiplicative variance, possibly one per gridpoint.
* :class:`PriorSpec` -- independent priors per parameter.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats
from scipy.linalg import cho_solve
from scipy.special import gammaln, log_ndtr, logsumexp

from .exceptions import (
    ConfigError,
    CurvatureError,
    DegeneratePosteriorError,
    DimensionError,
    OptimizationError,
    SupportMismatchError,
)
from .linalg import robust_cholesky, symmetrize

QUANTILE_LEVELS = (0.025, 0.5, 0.975)
CONCENTRATION_THRESHOLD = 1.0 - 1e-6

# ------------------------------------------------------------------ priors


@dataclass(frozen=True)
class TruncatedNormal:
    """``N(mu, var)`` restricted to ``[lower, upper]``; ``var`` is a variance."""

    mu: float
    var: float
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if self.var <= 0 or not self.lower < self.upper:
            raise ConfigError("truncated normal needs var > 0 and lower < upper")
        total, _ = integrate.quad(lambda x: math.exp(self.logpdf(x)), self.lower, self.upper)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"truncated normal density integrates to {total}, not 1")

    @property
    def _dist(self):
        s = math.sqrt(self.var)
        return stats.truncnorm((self.lower - self.mu) / s, (self.upper - self.mu) / s,
                               loc=self.mu, scale=s)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        s = math.sqrt(self.var)
        a, b = (self.lower - self.mu) / s, (self.upper - self.mu) / s
        # log of Phi(b) - Phi(a), from the upper and lower tail functions
        if b == math.inf:
            log_mass = log_ndtr(-a)
        else:
            log_mass = math.log(stats.norm.cdf(b) - stats.norm.cdf(a))
        z = (x - self.mu) / s
        out = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(s) - log_mass
        out = np.where((x >= self.lower) & (x <= self.upper), out, -np.inf)
        return out if out.ndim else float(out)

    def sample(self, rng, size):
        return self._dist.rvs(size=size, random_state=rng)

    def ppf(self, q):
        return self._dist.ppf(q)

    def mean(self):
        return float(self._dist.mean())

    def std(self):
        return float(self._dist.std())

    @property
    def support(self):
        return (self.lower, self.upper)


@dataclass(frozen=True)
class InverseGamma:
    """Inverse gamma with shape ``a`` and rate ``b`` (mean ``b / (a - 1)``)."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("inverse gamma needs positive shape and rate")

    @property
    def _dist(self):
        return stats.invgamma(self.a, scale=self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.a * math.log(self.b) - gammaln(self.a)
                   - (self.a + 1.0) * np.log(x) - self.b / x)
        out = np.where(x > 0, out, -np.inf)
        return out if out.ndim else float(out)

    def sample(self, rng, size):
        return self._dist.rvs(size=size, random_state=rng)

    def ppf(self, q):
        return self._dist.ppf(q)

    def mean(self):
        return float(self._dist.mean())

    def std(self):
        return float(self._dist.std())

    @property
    def support(self):
        return (0.0, math.inf)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("uniform prior needs lo < hi")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where((x >= self.lo) & (x <= self.hi), -math.log(self.hi - self.lo), -np.inf)
        return out if out.ndim else float(out)

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=size)

    def ppf(self, q):
        return self.lo + np.asarray(q) * (self.hi - self.lo)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def std(self):
        return (self.hi - self.lo) / math.sqrt(12.0)

    @property
    def support(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class Normal:
    mu: float
    var: float

    def logpdf(self, x):
        return stats.norm.logpdf(x, self.mu, math.sqrt(self.var))

    def sample(self, rng, size):
        return rng.normal(self.mu, math.sqrt(self.var), size=size)

    def ppf(self, q):
        return stats.norm.ppf(q, self.mu, math.sqrt(self.var))

    def mean(self):
        return self.mu

    def std(self):
        return math.sqrt(self.var)

    @property
    def support(self):
        return (-math.inf, math.inf)


FAMILIES = {
    "truncated_normal": TruncatedNormal,
    "inverse_gamma": InverseGamma,
    "uniform": Uniform,
    "normal": Normal,
}


def make_prior(family, **kwargs):
    try:
        return FAMILIES[family](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown prior family {family!r}") from None


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors, one per named parameter."""

    names: tuple
    dists: tuple

    def __post_init__(self):
        if len(self.names) != len(self.dists):
            raise ConfigError("one prior per parameter is required")

    @property
    def p(self):
        return len(self.names)

    def logpdf(self, theta):
        return prior_logpdf(self, theta)

    def sample(self, rng, size):
        return np.column_stack([d.sample(rng, size) for d in self.dists])

    @property
    def lower(self):
        return np.array([d.support[0] for d in self.dists])

    @property
    def upper(self):
        return np.array([d.support[1] for d in self.dists])

    def subset(self, names):
        idx = [self.names.index(nm) for nm in names]
        return PriorSpec(tuple(names), tuple(self.dists[i] for i in idx))

    def __getitem__(self, name):
        return self.dists[self.names.index(name)]


def prior_logpdf(spec, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.p:
        raise DimensionError(f"theta has {theta.shape[-1]} entries, prior has {spec.p}")
    return sum(d.logpdf(theta[..., i]) for i, d in enumerate(spec.dists))


# --------------------------------------------------------- weighted summaries


def weighted_quantiles(values, weights, levels=QUANTILE_LEVELS):
    """Quantiles of a discrete distribution, linearly interpolated between atoms.

    Each atom's cumulative probability is taken at the midpoint of its mass,
    so the CDF is piecewise linear through the atoms.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    atoms, inv = np.unique(values, return_inverse=True)
    w = np.bincount(inv.ravel(), weights=weights.ravel(), minlength=atoms.size)
    w = w / w.sum()
    if atoms.size == 1:
        return np.full(len(levels), atoms[0])
    c = np.cumsum(w) - 0.5 * w
    return np.interp(levels, c, atoms)


def weighted_moments(points, weights):
    points = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ points
    A = points - mean
    cov = (A * w[:, None]).T @ A
    return mean, symmetrize(cov)


# ------------------------------------------------------------------- grids


@dataclass(frozen=True)
class ParamGrid:
    points: np.ndarray  # (K, p)
    log_weights: np.ndarray  # (K,)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] != self.log_weights.shape[0]:
            raise DimensionError("points must be (K, p) with one log-weight per point")

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def K(self):
        return self.points.shape[0]

    @property
    def is_concentrated(self):
        return bool(self.weights.max() > CONCENTRATION_THRESHOLD)


def normalize_log_weights(lw):
    lw = np.asarray(lw, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise DegeneratePosteriorError("all grid weights are zero")
    return lw - logsumexp(lw)


def grid_axes(prior, n_per_axis=20, mass=0.999):
    """Equally spaced points spanning the central ``mass`` of each marginal."""
    tail = 0.5 * (1.0 - mass)
    return [np.linspace(d.ppf(tail), d.ppf(1.0 - tail), n_per_axis) for d in prior.dists]


def make_grid(prior, n_per_axis=20, mass=0.999, axes=None, valid=None):
    """Tensor-product grid with prior weights.

    ``valid`` is an optional predicate on a parameter vector; points where
    it returns False get zero weight (e.g. parameters giving an indefinite
    covariance).
    """
    axes = grid_axes(prior, n_per_axis, mass) if axes is None else [np.asarray(a, float) for a in axes]
    if len(axes) != prior.p:
        raise DimensionError("one axis per parameter is required")
    points = np.array(list(itertools.product(*axes)), dtype=float)
    lw = np.asarray(prior_logpdf(prior, points), dtype=float)
    if valid is not None:
        mask = np.array([bool(valid(th)) for th in points])
        lw = np.where(mask, lw, -np.inf)
    return ParamGrid(points, normalize_log_weights(lw))


def grid_update(grid, loglik):
    """Multiply weights by the likelihood and renormalize, in log space.

    ``loglik`` is a callable on parameter vectors or an array of values at
    the gridpoints.
    """
    if callable(loglik):
        ll = np.array([loglik(th) for th in grid.points], dtype=float)
    else:
        ll = np.asarray(loglik, dtype=float)
    if ll.shape != grid.log_weights.shape:
        raise DimensionError("one log-likelihood value per gridpoint is required")
    if np.any(np.isnan(ll)) or np.any(ll == np.inf):
        raise DegeneratePosteriorError("log-likelihood is NaN or +inf at some gridpoint")
    with np.errstate(invalid="ignore"):
        lw = grid.log_weights + ll
    lw[np.isnan(lw)] = -np.inf
    return ParamGrid(grid.points, normalize_log_weights(lw))


def grid_sample_indices(grid, N, rng):
    return rng.choice(grid.K, size=N, p=grid.weights / grid.weights.sum())


def grid_sample(grid, N, rng):
    return grid.points[grid_sample_indices(grid, N, rng)]


def grid_moments(grid, levels=QUANTILE_LEVELS):
    """Weighted mean, covariance and per-coordinate quantiles ``(p, len(levels))``."""
    w = grid.weights
    mean, cov = weighted_moments(grid.points, w)
    q = np.array([weighted_quantiles(grid.points[:, j], w, levels)
                  for j in range(grid.points.shape[1])])
    return mean, cov, q


def grid_marginal(grid, j):
    """Atoms and weights of the marginal of coordinate ``j``."""
    atoms, inv = np.unique(grid.points[:, j], return_inverse=True)
    return atoms, np.bincount(inv, weights=grid.weights, minlength=atoms.size)


# ------------------------------------------------------------------ normal


@dataclass(frozen=True)
class NormalParamPosterior:
    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    ridge: float = 0.0  # ridge added to make the curvature PD; 0 if none

    def __post_init__(self):
        p = self.mean.shape[0]
        if self.cov.shape != (p, p):
            raise DimensionError("covariance must be (p, p)")
        if self.lower is None:
            object.__setattr__(self, "lower", np.full(p, -np.inf))
        if self.upper is None:
            object.__setattr__(self, "upper", np.full(p, np.inf))

    @property
    def p(self):
        return self.mean.shape[0]

    def in_support(self, theta):
        theta = np.asarray(theta)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)

    def logpdf(self, theta):
        """Unnormalized Gaussian log density, ``-inf`` outside the support."""
        theta = np.asarray(theta, dtype=float)
        L = np.linalg.cholesky(self.cov)
        z = np.linalg.solve(L, (theta - self.mean).T).T
        out = -0.5 * np.sum(np.atleast_2d(z) ** 2, axis=-1)
        out = np.where(self.in_support(np.atleast_2d(theta)), out, -np.inf)
        return out if theta.ndim > 1 else float(out[0])


class Reparam:
    """Maps unconstrained ``u`` to ``theta`` per coordinate: identity, shifted
    exponential for one-sided bounds, scaled logistic for two-sided."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.lo_only = np.isfinite(self.lower) & ~np.isfinite(self.upper)
        self.hi_only = ~np.isfinite(self.lower) & np.isfinite(self.upper)
        self.both = np.isfinite(self.lower) & np.isfinite(self.upper)

    def to_theta(self, u):
        """Works on one vector or on rows of an ``(N, p)`` array."""
        u = np.asarray(u, dtype=float)
        th = u.copy()
        th[..., self.lo_only] = self.lower[self.lo_only] + np.exp(u[..., self.lo_only])
        th[..., self.hi_only] = self.upper[self.hi_only] - np.exp(u[..., self.hi_only])
        lo, hi = self.lower[self.both], self.upper[self.both]
        th[..., self.both] = lo + (hi - lo) / (1.0 + np.exp(-u[..., self.both]))
        return th

    def to_u(self, theta):
        th = np.asarray(theta, dtype=float)
        u = th.copy()
        tiny = 1e-300
        u[..., self.lo_only] = np.log(np.maximum(th[..., self.lo_only] - self.lower[self.lo_only], tiny))
        u[..., self.hi_only] = np.log(np.maximum(self.upper[self.hi_only] - th[..., self.hi_only], tiny))
        lo, hi = self.lower[self.both], self.upper[self.both]
        f = np.clip((th[..., self.both] - lo) / (hi - lo), 1e-12, 1 - 1e-12)
        u[..., self.both] = np.log(f / (1.0 - f))
        return u

    def u_scale(self, theta, sd):
        """First-order size in ``u`` of a step ``sd`` in ``theta``."""
        th = np.asarray(theta, dtype=float)
        s = np.array(sd, dtype=float)
        s[self.lo_only] = sd[self.lo_only] / np.maximum(th[self.lo_only] - self.lower[self.lo_only], 1e-12)
        s[self.hi_only] = sd[self.hi_only] / np.maximum(self.upper[self.hi_only] - th[self.hi_only], 1e-12)
        lo, hi = self.lower[self.both], self.upper[self.both]
        f = np.clip((th[self.both] - lo) / (hi - lo), 1e-6, 1 - 1e-6)
        s[self.both] = sd[self.both] / ((hi - lo) * f * (1 - f))
        return s


def fd_hessian(f, x, steps):
    """Central finite-difference Hessian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    p = x.size
    f0 = f(x)
    Hs = np.empty((p, p))
    E = np.diag(steps)
    for i in range(p):
        hi = steps[i]
        Hs[i, i] = (f(x + E[i]) - 2.0 * f0 + f(x - E[i])) / (hi * hi)
        for j in range(i):
            v = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                 - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4.0 * hi * steps[j])
            Hs[i, j] = Hs[j, i] = v
    return Hs


def normal_update(post, loglik, log_prior=None, rng=None, restarts=2, xatol=1e-8,
                  diagnostics=None):
    """Laplace-type update of a Gaussian parameter posterior.

    Maximizes ``l(theta) = loglik(theta) + log p_{t-1}(theta)`` by Nelder-Mead
    started at the previous mean and at ``restarts`` draws from the previous
    posterior, then sets the covariance to the inverse of the negated
    finite-difference Hessian of ``l`` at the mode. ``log_prior`` replaces the
    Gaussian ``post.logpdf`` (used for the first step, where the prior is not
    normal). Bounded coordinates are optimized on a log/logit scale.
    """
    prev_logpdf = post.logpdf if log_prior is None else log_prior
    rep = Reparam(post.lower, post.upper)

    def ell(theta):
        if not post.in_support(theta):
            return -np.inf
        lp = prev_logpdf(theta)
        if not np.isfinite(lp):
            return -np.inf
        ll = loglik(theta)
        return float(ll + lp) if np.isfinite(ll) else -np.inf

    def objective(u):
        val = ell(rep.to_theta(u))
        return -val if np.isfinite(val) else np.inf

    sd = np.sqrt(np.diag(post.cov))
    starts = [np.clip(post.mean, np.nextafter(post.lower, np.inf), np.nextafter(post.upper, -np.inf))]
    if restarts:
        if rng is None:
            raise ValueError("rng is required for random restarts")
        starts.extend(normal_sample(post, restarts, rng))

    best = None
    for theta0 in starts:
        u0 = rep.to_u(theta0)
        step = np.maximum(np.abs(rep.u_scale(theta0, sd)), 1e-3)
        step = np.minimum(step, 1.0)
        simplex = np.vstack([u0, u0 + np.diag(step)])
        f0 = objective(u0)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(
            objective, u0, method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": xatol * max(1.0, float(np.abs(u0).max())),
                "fatol": 1e-12 * max(1.0, abs(f0)),
                "maxiter": 4000 * post.p,
                "maxfev": 8000 * post.p,
            },
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise OptimizationError("log posterior is -inf at every starting point")
    if not best.success:
        raise OptimizationError(
            f"Nelder-Mead did not converge: {best.message}",
            best_x=rep.to_theta(best.x), best_value=-best.fun,
        )
    mode = rep.to_theta(best.x)

    steps = np.maximum(1e-4, 1e-4 * np.abs(mode))
    room = np.minimum(mode - post.lower, post.upper - mode)
    steps = np.where(room < 2 * steps, 0.5 * room, steps)
    neg_hess = -symmetrize(fd_hessian(ell, mode, steps))
    if not np.all(np.isfinite(neg_hess)):
        raise CurvatureError("non-finite curvature at the posterior mode")
    ridge = 0.0
    while True:
        try:
            L = np.linalg.cholesky(neg_hess + ridge * np.eye(post.p))
            break
        except np.linalg.LinAlgError:
            ridge = 1e-8 if ridge == 0.0 else ridge * 10.0
            if ridge > 1e12:
                raise CurvatureError("negated Hessian is not positive definite") from None
    if ridge and diagnostics is not None:
        diagnostics["curvature_ridges"] = diagnostics.get("curvature_ridges", 0) + 1
    cov = symmetrize(cho_solve((L, True), np.eye(post.p)))
    return NormalParamPosterior(mode, cov, post.lower, post.upper, ridge)


def normal_sample(post, N, rng, min_acceptance=1e-3):
    """Draws from ``N(mean, cov)`` restricted to the support by rejection."""
    L = np.linalg.cholesky(post.cov)
    out = np.empty((0, post.p))
    batch = max(N, 1000)
    tried = accepted = 0
    while out.shape[0] < N:
        draws = post.mean + rng.standard_normal((batch, post.p)) @ L.T
        keep = draws[post.in_support(draws)]
        tried += batch
        accepted += keep.shape[0]
        if accepted / tried < min_acceptance:
            raise SupportMismatchError(
                f"acceptance rate {accepted / tried:.2e} against support bounds is below {min_acceptance}"
            )
        out = np.vstack([out, keep])
    return out[:N]


def normal_quantiles(post, levels=QUANTILE_LEVELS):
    """Per-coordinate quantiles of the truncated marginals, ``(p, len(levels))``."""
    sd = np.sqrt(np.diag(post.cov))
    a = (post.lower - post.mean) / sd
    b = (post.upper - post.mean) / sd
    return np.array([stats.truncnorm.ppf(levels, a[j], b[j], loc=post.mean[j], scale=sd[j])
                     for j in range(post.p)])


# ------------------------------------------------------- inverse gamma merge


@dataclass(frozen=True)
class InverseGammaPosterior:
    """``IG(shape, rate)``; ``rate`` may be an array (one per gridpoint)."""

    shape: float
    rate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rate", np.asarray(self.rate, dtype=float))
        if self.shape <= 0 or np.any(self.rate <= 0):
            raise ConfigError("inverse gamma shape and rate must be positive")

    def mean(self):
        if self.shape <= 1:
            return np.full(self.rate.shape, np.inf)
        return self.rate / (self.shape - 1.0)


def ig_update_from_quad(post, m, quad):
    """Conjugate update given the quadratic form ``e' Sigma_unit^{-1} e``."""
    return InverseGammaPosterior(post.shape + 0.5 * m, post.rate + 0.5 * np.asarray(quad))


def ig_conjugate_update(post, innovation, unit_innovation_cov):
    """Posterior of a scale ``s`` with ``Sigma = s * unit_innovation_cov``:
    shape grows by ``m/2`` and rate by ``e' Sigma_unit^{-1} e / 2``."""
    e = np.asarray(innovation, dtype=float)
    S = np.atleast_2d(np.asarray(unit_innovation_cov, dtype=float))
    L = robust_cholesky(symmetrize(S))
    quad = float(e @ cho_solve((L, True), e))
    return ig_update_from_quad(post, e.size, quad)


def ig_predictive_loglik(shape, rate, m, logdet_unit, quad):
    """Log multivariate-t density of the innovation with the scale integrated
    out against ``IG(shape, rate)``."""
    rate = np.asarray(rate, dtype=float)
    return (gammaln(shape + 0.5 * m) - gammaln(shape) - 0.5 * m * np.log(2 * np.pi * rate)
            - 0.5 * logdet_unit - (shape + 0.5 * m) * np.log1p(0.5 * quad / rate))


def ig_mixture_summary(shape, rates, weights, levels=QUANTILE_LEVELS):
    """Mean, sd and quantiles of ``sum_k w_k IG(shape, rate_k)``."""
    rates = np.asarray(rates, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    rates, w = rates[keep], w[keep] / w[keep].sum()
    means = rates / (shape - 1.0)
    mean = float(w @ means)
    if shape > 2:
        second = rates**2 / ((shape - 1.0) ** 2 * (shape - 2.0)) + means**2
        sd = math.sqrt(max(float(w @ second) - mean**2, 0.0))
    else:
        sd = math.inf

    def cdf(x):
        return float(w @ stats.invgamma.cdf(x, shape, scale=rates))

    lo = float(stats.invgamma.ppf(1e-9, shape, scale=rates.min()))
    hi = float(stats.invgamma.ppf(1 - 1e-9, shape, scale=rates.max()))
    q = np.array([optimize.brentq(lambda x, lev=lev: cdf(x) - lev, lo, hi, xtol=1e-12)
                  for lev in levels])
    return mean, sd, q
