"""Additive Gaussian state-space models and the three testbeds.

A model is

    y_t = H(theta) x_t + v_t,          v_t ~ N(0, R(theta))
    x_t = M(x_{t-1}; gamma) + w_t,     w_t ~ N(0, Q(theta))

with ``x_0 ~ N(a_0(theta), P_0(theta))``. ``theta`` is always a 1-d array
ordered as ``ModelSpec.param_names``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .covariance import (
    MaternParams,
    circular_distance,
    distance_matrix,
    exponential_corr,
    matern_cov,
    transect_distance,
)
from .exceptions import DimensionError, ModelError, NumericError
from .linalg import is_psd, psd_sqrt
from .rng import substream


@dataclass(frozen=True)
class ModelSpec:
    n: int
    m: int
    param_names: tuple
    evolution: Callable  # (X: (N, n), gamma) -> (N, n)
    obs_matrix: Callable  # theta -> (m, n)
    evo_cov: Callable  # theta -> (n, n)
    obs_cov: Callable  # theta -> (m, m)
    init_mean: Callable  # theta -> (n,)
    init_cov: Callable  # theta -> (n, n)
    gamma: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None
    transition_matrix: Optional[Callable] = None  # gamma -> (n, n), linear models only
    name: str = "model"
    zero_evo_cov: bool = False
    # optional fast paths over per-member parameters, see member_noise/obs_loglik
    evo_noise: Optional[Callable] = None  # (thetas (N, p), Z (N, n)) -> (N, n)
    obs_noise: Optional[Callable] = None  # (thetas (N, p), Z (N, m)) -> (N, m)
    obs_loglik: Optional[Callable] = None  # (y, HX (N, m), thetas) -> (N,)

    @property
    def p(self):
        return len(self.param_names)

    def param_index(self, name):
        return self.param_names.index(name)

    def propagate(self, X, gamma=None):
        return propagate(self, X, gamma)


def propagate(model, x, gamma=None):
    """Apply the evolution map to one state vector or an ``(N, n)`` ensemble."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != model.n:
        raise DimensionError(f"state has length {X.shape[-1]}, model expects {model.n}")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite entries in state passed to propagate")
    out = model.evolution(X, model.gamma if gamma is None else gamma)
    return out[0] if single else out


def unique_rows(thetas):
    """Unique parameter rows and the member -> row index map."""
    uniq, inv = np.unique(np.asarray(thetas, dtype=float), axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def member_noise(model, kind, thetas, Z):
    """Rows ``L(theta_i) z_i`` with ``L L' = Q(theta_i)`` (``kind="evo"``) or
    ``R(theta_i)`` (``kind="obs"``)."""
    hook = model.evo_noise if kind == "evo" else model.obs_noise
    if hook is not None:
        return hook(np.asarray(thetas, dtype=float), Z)
    if kind == "evo" and model.zero_evo_cov:
        return np.zeros_like(Z)
    builder = model.evo_cov if kind == "evo" else model.obs_cov
    uniq, inv = unique_rows(thetas)
    Ls = np.stack([psd_sqrt(builder(th)) for th in uniq])
    return np.einsum("kij,kj->ki", Ls[inv], Z)


def obs_loglik(model, y, X, thetas):
    """``log N(y | H x_i, R(theta_i))`` for each member ``x_i``."""
    thetas = np.asarray(thetas, dtype=float)
    y = np.asarray(y, dtype=float)
    uniq, inv = unique_rows(thetas)
    H = np.asarray(model.obs_matrix(uniq[0]), dtype=float)
    if model.obs_loglik is not None:
        return model.obs_loglik(y, X @ H.T, thetas)
    out = np.empty(X.shape[0])
    for k, th in enumerate(uniq):
        rows = inv == k
        Hk = np.asarray(model.obs_matrix(th), dtype=float)
        L = np.linalg.cholesky(model.obs_cov(th))
        Zr = np.linalg.solve(L, (y - X[rows] @ Hk.T).T)
        out[rows] = (-np.sum(np.log(np.diag(L))) - 0.5 * np.sum(Zr * Zr, axis=0)
                     - 0.5 * y.size * np.log(2 * np.pi))
    return out


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.p,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({model.p},)")
    return theta


def simulate_truth(model, theta_true, T, seed, gamma=None):
    """Draw a true trajectory and observations; returns ``(states, obs)``
    with shapes ``(T, n)`` and ``(T, m)`` for ``t = 1..T``."""
    theta = _check_theta(model, theta_true)
    if T < 1:
        raise ValueError("T must be at least 1")
    Q = np.asarray(model.evo_cov(theta), dtype=float)
    R = np.asarray(model.obs_cov(theta), dtype=float)
    if not is_psd(Q) or not is_psd(R):
        raise ModelError("Q or R is not positive semidefinite at the true parameter")
    H = np.asarray(model.obs_matrix(theta), dtype=float)
    LQ, LR = psd_sqrt(Q), psd_sqrt(R)
    L0 = psd_sqrt(np.asarray(model.init_cov(theta), dtype=float))
    rng = substream(seed, 0, "simulate")
    x = np.asarray(model.init_mean(theta), dtype=float) + L0 @ rng.standard_normal(model.n)
    states = np.empty((T, model.n))
    obs = np.empty((T, model.m))
    for t in range(T):
        x = propagate(model, x, gamma) + LQ @ rng.standard_normal(model.n)
        states[t] = x
        obs[t] = H @ x + LR @ rng.standard_normal(model.m)
    return states, obs


# ---------------------------------------------------------------- linear VAR


@dataclass(frozen=True)
class LinearVARConfig:
    n: int = 20
    gamma: tuple = (0.3, 0.6, 0.1)
    beta: float = 5.0
    tau: float = 1.0
    sigma2_eps: float = 1.0

    @property
    def sigma2_eta(self):
        return self.beta * self.sigma2_eps


def tridiagonal_propagator(gamma, n):
    """Matrix with diagonal gamma1, superdiagonal gamma2, subdiagonal gamma3."""
    g1, g2, g3 = (float(g) for g in gamma)
    M = g1 * np.eye(n)
    if n > 1:
        M += g2 * np.eye(n, k=1) + g3 * np.eye(n, k=-1)
    return M


def tridiagonal_apply(X, gamma):
    """Stencil ``x'_k = g3 x_{k-1} + g1 x_k + g2 x_{k+1}``.

    ``gamma`` is shape (3,) or one row per ensemble member, shape (N, 3).
    """
    gamma = np.asarray(gamma, dtype=float)
    g1, g2, g3 = (gamma[..., i][..., None] for i in range(3))
    out = g1 * X
    out[:, :-1] += g2 * X[:, 1:]
    out[:, 1:] += g3 * X[:, :-1]
    return out


def linear_var_model(cfg=LinearVARConfig(), estimate_sigma2=False):
    """Tridiagonal VAR on an ``n``-point transect.

    ``theta = (beta, tau)`` with ``sigma2_eps`` known, or
    ``(beta, tau, sigma2_eps)`` when ``estimate_sigma2`` is set. Then
    ``Q = beta sigma2_eps exp(-tau |i-j|)``, ``R = sigma2_eps I``, ``H = I``,
    ``x_0 ~ N(0, sigma2_eps I)``.
    """
    n = cfg.n
    D = distance_matrix(transect_distance, n)
    eye = np.eye(n)
    names = ("beta", "tau", "sigma2_eps") if estimate_sigma2 else ("beta", "tau")

    def s2(theta):
        return theta[2] if estimate_sigma2 else cfg.sigma2_eps

    def s2_rows(thetas):
        return thetas[:, 2] if estimate_sigma2 else np.full(thetas.shape[0], cfg.sigma2_eps)

    def evo_noise(thetas, Z):
        # exp(-tau |i-j|) on a unit-spaced transect is an AR(1) correlation;
        # this recursion applies its Cholesky factor
        rho = np.exp(-thetas[:, 1])
        innov = np.sqrt(1.0 - rho * rho)
        out = np.empty_like(Z)
        out[:, 0] = Z[:, 0]
        for k in range(1, n):
            out[:, k] = rho * out[:, k - 1] + innov * Z[:, k]
        return np.sqrt(thetas[:, 0] * s2_rows(thetas))[:, None] * out

    def obs_noise(thetas, Z):
        return np.sqrt(s2_rows(thetas))[:, None] * Z

    def obs_loglik_fn(y, HX, thetas):
        v = s2_rows(thetas)
        r = y - HX
        return -0.5 * n * np.log(2 * np.pi * v) - 0.5 * np.sum(r * r, axis=1) / v

    return ModelSpec(
        n=n,
        m=n,
        param_names=names,
        evolution=tridiagonal_apply,
        obs_matrix=lambda theta: eye,
        evo_cov=lambda theta: theta[0] * s2(theta) * exponential_corr(D, theta[1]),
        obs_cov=lambda theta: s2(theta) * eye,
        init_mean=lambda theta: np.zeros(n),
        init_cov=lambda theta: s2(theta) * eye,
        gamma=np.asarray(cfg.gamma, dtype=float),
        distances=D,
        transition_matrix=lambda gamma: tridiagonal_propagator(gamma, n),
        name="linear_var",
        evo_noise=evo_noise,
        obs_noise=obs_noise,
        obs_loglik=obs_loglik_fn,
    )


# ----------------------------------------------------------------- Lorenz-96


@dataclass(frozen=True)
class Lorenz96Config:
    n: int = 40
    forcing: float = 8.0
    obs_interval: float = 0.25
    substeps: int = 5
    init_var: float = 0.25
    spinup_cycles: int = 1000


def lorenz96_derivative(x, F):
    """``dx_k/dt = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F`` with cyclic indices.

    Accepts a single 40-vector or an ``(N, 40)`` array.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 40:
        raise DimensionError(f"Lorenz-96 state must have length 40, got {x.shape[-1]}")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + F


def rk4_step(x, F, dt):
    k1 = lorenz96_derivative(x, F)
    k2 = lorenz96_derivative(x + 0.5 * dt * k1, F)
    k3 = lorenz96_derivative(x + 0.5 * dt * k2, F)
    k4 = lorenz96_derivative(x + dt * k3, F)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lorenz96_forecast(x, cfg):
    dt = cfg.obs_interval / cfg.substeps
    for _ in range(cfg.substeps):
        x = rk4_step(x, cfg.forcing, dt)
    return x


def lorenz96_spinup(cfg, seed=0):
    """A point on the attractor: perturbed equilibrium run for ``spinup_cycles``."""
    rng = substream(seed, 0, "init_state")
    x = cfg.forcing + 0.01 * rng.standard_normal(cfg.n)
    for _ in range(cfg.spinup_cycles):
        x = lorenz96_forecast(x, cfg)
    return x


def matern_matrix(distances, sigma2, lam, nu):
    return matern_cov(distances, MaternParams(sigma2, lam, nu))


def lorenz96_model(cfg=Lorenz96Config(), x0=None, seed=0):
    """Lorenz-96 with ``H = I``, ``Q = 0`` and Matern observation errors.

    ``theta = (sigma2, lambda, nu)`` and ``R(theta)`` is the Matern
    covariance over circular distances. ``x_0 ~ N(x0, init_var I)``; when
    ``x0`` is omitted it is taken from a spin-up run.
    """
    if cfg.n != 40:
        raise DimensionError("the Lorenz-96 testbed is fixed at n = 40")
    n = cfg.n
    D = distance_matrix(circular_distance, n)
    eye = np.eye(n)
    x0 = lorenz96_spinup(cfg, seed) if x0 is None else np.asarray(x0, dtype=float)

    return ModelSpec(
        n=n,
        m=n,
        param_names=("sigma2", "lambda", "nu"),
        evolution=lambda X, gamma: lorenz96_forecast(X, cfg),
        obs_matrix=lambda theta: eye,
        evo_cov=lambda theta: np.zeros((n, n)),
        obs_cov=lambda theta: matern_matrix(D, theta[0], theta[1], theta[2]),
        init_mean=lambda theta: x0,
        init_cov=lambda theta: cfg.init_var * eye,
        distances=D,
        name="lorenz96",
        zero_evo_cov=True,
    )


# ------------------------------------------------------------ static variance


@dataclass(frozen=True)
class StaticVarianceConfig:
    alpha_true: float = 0.3
    base_variance: float = 2.0


def static_variance_model(cfg=StaticVarianceConfig()):
    """Scalar ``y_t ~ N(0, base_variance + alpha)`` as a model with an empty state."""
    base = cfg.base_variance
    return ModelSpec(
        n=0,
        m=1,
        param_names=("alpha",),
        evolution=lambda X, gamma: X,
        obs_matrix=lambda theta: np.zeros((1, 0)),
        evo_cov=lambda theta: np.zeros((0, 0)),
        obs_cov=lambda theta: np.array([[base + theta[0]]]),
        init_mean=lambda theta: np.zeros(0),
        init_cov=lambda theta: np.zeros((0, 0)),
        distances=np.zeros((0, 0)),
        name="static_variance",
        zero_evo_cov=True,
    )


def mle_static_alpha(y, base_variance=2.0):
    """Single-observation MLE ``max(0, y^2 - base_variance)``."""
    return np.maximum(0.0, np.asarray(y, dtype=float) ** 2 - base_variance)


# ------------------------------------------------------------ augmentation


@dataclass(frozen=True)
class AugmentedGammaSpec:
    """Prior and artificial dynamics for evolution parameters carried in the state.

    ``cov_scale_param`` names a model parameter that multiplies the prior
    covariance (as in ``gamma | s2 ~ N(mean, 0.01 s2 I)``).
    """

    mean: tuple
    cov: float | tuple = 0.01
    evolution_var: float = 0.0
    cov_scale_param: Optional[str] = None
    names: tuple = field(default=())


def state_augmentation_wrap(model, gamma_spec):
    """Model over the augmented state ``(x, gamma)``.

    The gamma block evolves as a constant (plus optional artificial noise of
    variance ``evolution_var``), is unobserved (``H_aug = (H, 0)``) and drives
    ``M`` member-by-member.
    """
    g_mean = np.asarray(gamma_spec.mean, dtype=float)
    q = g_mean.size
    n = model.n
    cov = np.asarray(gamma_spec.cov, dtype=float)
    g_cov = np.diag(np.broadcast_to(cov, (q,))) if cov.ndim <= 1 else cov
    scale_idx = (
        None if gamma_spec.cov_scale_param is None
        else model.param_index(gamma_spec.cov_scale_param)
    )

    def scale(theta):
        return 1.0 if scale_idx is None else theta[scale_idx]

    def evolution(Z, gamma):
        X, G = Z[:, :n], Z[:, n:]
        return np.concatenate([model.evolution(X, G), G], axis=1)

    def block(A, B):
        out = np.zeros((n + q, n + q))
        out[:n, :n] = A
        out[n:, n:] = B
        return out

    if model.distances is not None:
        # gamma entries sit at distance 0 from every location so tapering never
        # cuts their cross-covariances
        D = np.zeros((n + q, n + q))
        D[:n, :n] = model.distances
    else:
        D = None

    return ModelSpec(
        n=n + q,
        m=model.m,
        param_names=model.param_names,
        evolution=evolution,
        obs_matrix=lambda theta: np.hstack([model.obs_matrix(theta), np.zeros((model.m, q))]),
        evo_cov=lambda theta: block(model.evo_cov(theta), gamma_spec.evolution_var * np.eye(q)),
        obs_cov=model.obs_cov,
        init_mean=lambda theta: np.concatenate([model.init_mean(theta), g_mean]),
        init_cov=lambda theta: block(model.init_cov(theta), scale(theta) * g_cov),
        gamma=None,
        distances=D,
        transition_matrix=None,
        name=f"{model.name}+gamma",
        zero_evo_cov=model.zero_evo_cov and gamma_spec.evolution_var == 0.0,
    )
