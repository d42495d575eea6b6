"""Twin experiments on the three testbeds: pure computations returning
arrays and traces. File output lives in :mod:`bayesenkf.cli`."""
import bisect
import csv
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .covariance import TaperSpec, distance_matrix, exponential_corr, transect_distance
from .enkf import (
    ForecastSummary,
    discrete_loglik,
    effective_sample_size,
    enkf_loglik_batch,
    forecast_summary,
)
from .exceptions import ParseError
from .filters import FilterConfig, run_filter
from .kalman import grid_kf_oracle, kalman_filter
from .linalg import psd_sqrt
from .models import (
    ModelSpec,
    StaticVarianceConfig,
    mle_static_alpha,
    simulate_truth,
    static_variance_model,
)
from .param_posterior import grid_moments, make_grid, weighted_quantiles
from .rng import substream

# ----------------------------------------------------------- static model


def running_median(values):
    """Median of ``values[:t]`` for every ``t`` (sorted insertion)."""
    out = np.empty(len(values))
    buf = []
    for t, v in enumerate(values):
        bisect.insort(buf, float(v))
        k = len(buf)
        out[t] = buf[k // 2] if k % 2 else 0.5 * (buf[k // 2 - 1] + buf[k // 2])
    return out


def static_grid_posterior(y, alpha_grid, base_variance=2.0):
    """Exact posterior of ``alpha`` on a grid under a flat prior, for every ``t``.

    Returns a dict of ``(T,)`` arrays: mean, sd, mode, q025, q50, q975.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(alpha_grid, dtype=float)
    v = base_variance + a
    ll = -0.5 * np.log(2 * np.pi * v)[None, :] - 0.5 * (y[:, None] ** 2) / v[None, :]
    cum = np.cumsum(ll, axis=0)
    lw = cum - logsumexp(cum, axis=1, keepdims=True)
    W = np.exp(lw)
    mean = W @ a
    sd = np.sqrt(np.clip(W @ a**2 - mean**2, 0.0, None))
    q = np.array([weighted_quantiles(a, w) for w in W])
    return {"mean": mean, "sd": sd, "mode": a[np.argmax(lw, axis=1)],
            "q025": q[:, 0], "q50": q[:, 1], "q975": q[:, 2]}


def run_static_demo(alpha_true=0.3, T=10000, seed=0, grid_lo=0.0, grid_hi=2.0, grid_points=200):
    """Per-observation MLEs, their running mean and median, and the exact
    grid posterior for the static variance model."""
    cfg = StaticVarianceConfig(alpha_true=alpha_true)
    model = static_variance_model(cfg)
    _, Y = simulate_truth(model, np.array([alpha_true]), T, seed)
    y = Y[:, 0]
    mle = mle_static_alpha(y, cfg.base_variance)
    post = static_grid_posterior(y, np.linspace(grid_lo, grid_hi, grid_points), cfg.base_variance)
    return {
        "t": np.arange(1, T + 1),
        "y": y,
        "alpha_hat": mle,
        "cum_mean": np.cumsum(mle) / np.arange(1, T + 1),
        "cum_median": running_median(mle),
        **{f"post_{k}": v for k, v in post.items()},
    }


# ------------------------------------------------- likelihood comparison


@dataclass(frozen=True)
class LikCompareConfig:
    alpha_true: float = 0.5
    obs_var: float = 0.1
    prior_range: float = 3.0  # P^p_ij = exp(-|i-j| / prior_range)
    n_members: int = 50
    taper: TaperSpec = TaperSpec("wendland", 12.0)
    alpha_lo: float = 0.0
    alpha_hi: float = 2.0
    alpha_points: int = 201


def _trapezoid(f, x):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x)))


def normalize_curve(loglik, grid):
    """Exponentiate and scale to integrate to 1 over ``grid`` (trapezoid)."""
    f = np.exp(np.asarray(loglik) - np.max(loglik))
    return f / _trapezoid(f, grid)


def total_variation(f, g, grid):
    return 0.5 * _trapezoid(np.abs(f - g), grid)


def _iid_model(n, obs_var):
    eye = np.eye(n)
    return ModelSpec(
        n=n, m=n, param_names=("alpha",),
        evolution=lambda X, gamma: X,
        obs_matrix=lambda theta: eye,
        evo_cov=lambda theta: theta[0] * eye,
        obs_cov=lambda theta: obs_var * eye,
        init_mean=lambda theta: np.zeros(n),
        init_cov=lambda theta: eye,
        distances=distance_matrix(transect_distance, n),
        name="iid_forecast",
    )


def lik_compare_once(n, cfg=LikCompareConfig(), seed=0):
    """EnKF, discrete and exact likelihood curves of ``alpha`` from one
    observation vector, with the forecast ensemble shared by both
    approximations.

    The prior ``x^p ~ N(0, P)`` with unit-variance exponential correlation,
    then ``x = x^p + w`` with ``w ~ N(0, alpha I)`` and ``y = x + v``.
    """
    rng = substream(seed, 0, "simulate")
    D = distance_matrix(transect_distance, n)
    P = exponential_corr(D, 1.0 / cfg.prior_range)
    L = psd_sqrt(P)
    y = L @ rng.standard_normal(n) + np.sqrt(cfg.alpha_true) * rng.standard_normal(n) \
        + np.sqrt(cfg.obs_var) * rng.standard_normal(n)
    ens = rng.standard_normal((cfg.n_members, n)) @ L.T
    grid = np.linspace(cfg.alpha_lo, cfg.alpha_hi, cfg.alpha_points)
    model = _iid_model(n, cfg.obs_var)

    summary = forecast_summary(ens, cfg.taper, model.distances)
    enkf_ll = enkf_loglik_batch(summary, y, model, grid[:, None])
    disc = [discrete_loglik(ens, y, model, np.array([a]), return_weights=True) for a in grid]
    disc_ll = np.array([d[0] for d in disc])
    exact_summary = ForecastSummary(np.zeros(n), P)
    exact_ll = enkf_loglik_batch(exact_summary, y, model, grid[:, None])
    k_disc = int(np.argmax(disc_ll))
    curves = {k: normalize_curve(v, grid) for k, v in
              (("enkf", enkf_ll), ("discrete", disc_ll), ("exact", exact_ll))}
    return {
        "alpha": grid,
        **curves,
        "enkf_mode": float(grid[np.argmax(enkf_ll)]),
        "discrete_mode": float(grid[k_disc]),
        "exact_mode": float(grid[np.argmax(exact_ll)]),
        "discrete_ess_at_mode": effective_sample_size(disc[k_disc][1]),
        "tv_enkf_exact": total_variation(curves["enkf"], curves["exact"], grid),
        "tv_discrete_exact": total_variation(curves["discrete"], curves["exact"], grid),
    }


def run_lik_compare(dims=(5, 50, 100), cfg=LikCompareConfig(), seed=0, replicates=1):
    """:func:`lik_compare_once` for each dimension and replicate; replicate
    ``r`` uses seed ``seed + r``."""
    return {n: [lik_compare_once(n, cfg, seed + r) for r in range(replicates)] for n in dims}


# ---------------------------------------------------------- filter runs


def run_oracle(model, observations, prior, grid_per_axis=20, grid_mass=0.999, axes=None):
    """Exact grid posterior sequence on the same grid EnKF-Grid would use."""
    grid = make_grid(prior, grid_per_axis, grid_mass, axes=axes)
    return grid_kf_oracle(model, observations, grid.points, grid.log_weights)


def oracle_table(grids):
    """Means, sds and quantiles ``(T + 1, p[, 3])`` from a grid sequence."""
    stats = [grid_moments(g) for g in grids]
    return {
        "mean": np.array([s[0] for s in stats]),
        "sd": np.array([np.sqrt(np.diag(s[1])) for s in stats]),
        "q": np.array([s[2] for s in stats]),
        "argmax": np.array([int(np.argmax(g.log_weights)) for g in grids]),
    }


def kf_state_trace(model, observations, theta):
    means, covs, lls = kalman_filter(model, observations, theta)
    return {"mean": means, "sd": np.sqrt(np.einsum("tii->ti", covs)), "loglik": lls}


def run_filters(model, observations, prior, configs, seed):
    """Run each :class:`FilterConfig`; returns ``{method: (trace, seconds)}``."""
    out = {}
    for cfg in configs:
        t0 = time.perf_counter()
        trace = run_filter(model, observations, prior, cfg, seed)
        out[cfg.method] = (trace, time.perf_counter() - t0)
    return out


def normalized_joint(grid, shape):
    """Grid weights reshaped to the tensor grid and scaled to a maximum of 1."""
    w = grid.weights.reshape(shape)
    return w / w.max()


def lorenz_default_filter(n_members=100):
    return FilterConfig(method="enkf_grid", n_members=n_members,
                        taper=TaperSpec("gaspari_cohn", 12.0), scale_param="sigma2",
                        keep_grid_at=(10, 50, 100, 250))


# ------------------------------------------------------------- external


def ingest_external(path, transform="none"):
    """Read a numeric CSV (``T`` rows by ``m`` columns, optional header).

    ``transform="log1p"`` applies ``log(1 + z)`` elementwise. Ragged rows or
    non-numeric cells raise :class:`ParseError` with 1-based row and column.
    """
    if transform not in ("none", "log1p"):
        raise ParseError(f"unknown transform {transform!r}")
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not any(c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if not _is_numeric_row(row):
                    continue  # header
            if len(row) != width:
                raise ParseError(f"row has {len(row)} cells, expected {width}",
                                 row=r, column=min(len(row), width) + 1)
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=r, column=c) from None
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows")
    Z = np.array(rows, dtype=float)
    if transform == "log1p":
        bad = np.argwhere(Z <= -1)
        if bad.size:
            raise ParseError("log1p needs values above -1", row=None, column=int(bad[0][1]) + 1)
        Z = np.log1p(Z)
    return Z


def _is_numeric_row(row):
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True
