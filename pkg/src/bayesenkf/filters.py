"""Assimilation loops: EnKF with a grid or normal parameter posterior,
state augmentation of the parameters, and the Liu-West particle filter.

Every cycle of the EnKF methods runs

1. propagate the analysis members,
2. build the prior mean and tapered covariance and the EnKF likelihood,
3. update the parameter posterior,
4. draw one parameter vector per member,
5. add evolution noise ``N(0, Q(theta_i))``,
6. perturbed-observation analysis with each member's own parameters.
"""
import csv
import io
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .covariance import TaperSpec, taper_matrix, tapered_empirical_cov
from .enkf import LOG_2PI, enkf_loglik, forecast_summary, inflate, innovation_terms
from .exceptions import (
    BayesEnKFError,
    ConditioningError,
    ConfigError,
    DimensionError,
    NumericError,
    StepError,
)
from .linalg import batched_cholesky, is_psd, psd_sqrt, robust_cholesky, symmetrize
from .models import member_noise, unique_rows
from .param_posterior import (
    InverseGamma,
    InverseGammaPosterior,
    NormalParamPosterior,
    ParamGrid,
    Reparam,
    grid_axes,
    grid_moments,
    grid_sample_indices,
    ig_mixture_summary,
    ig_predictive_loglik,
    make_grid,
    normal_quantiles,
    normal_sample,
    normal_update,
    normalize_log_weights,
    weighted_quantiles,
)
from .particle import ParticleCloud, liu_west_init, liu_west_step
from .rng import substream

METHODS = ("enkf_grid", "enkf_normal", "augmentation", "liu_west")
CHECKPOINT_FORMAT = "bayesenkf-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FilterConfig:
    method: str = "enkf_grid"
    n_members: int = 100
    taper: TaperSpec = TaperSpec()
    inflation: float = 1.0
    grid_per_axis: int = 20
    grid_mass: float = 0.999
    grid_axes: Optional[tuple] = None  # explicit axes, one per grid parameter
    scale_param: Optional[str] = None  # conjugate inverse-gamma scale parameter
    normal_restarts: int = 2
    lw_delta: float = 0.98
    state_coords: tuple = (0,)
    keep_grid_at: tuple = ()  # times at which full grid weights are kept
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n_members < 2:
            raise ConfigError("at least 2 ensemble members are required")
        if self.inflation <= 0:
            raise ConfigError("inflation factor must be positive")
        if self.scale_param is not None and self.method != "enkf_grid":
            raise ConfigError("the inverse-gamma scale merge is only available with enkf_grid")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ConfigError("checkpoint_every needs a checkpoint_path")


@dataclass
class FilterState:
    """Joint ensemble of states and parameters at time ``t``.

    ``posterior`` is a :class:`ParamGrid`, a :class:`NormalParamPosterior`,
    a :class:`ParticleCloud` or ``None`` (augmentation, where the
    parameters live in ``param_draws``).
    """

    t: int
    ensemble: np.ndarray
    param_draws: np.ndarray
    posterior: object = None
    scale_post: Optional[InverseGammaPosterior] = None


@dataclass
class FilterTrace:
    param_names: tuple
    state_coords: tuple
    records: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)  # t -> ParamGrid, see keep_grid_at

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def param_table(self, stat):
        """``(T + 1, p)`` array of ``param_<stat>`` (mean, sd, q025, q50, q975)."""
        if stat in ("q025", "q50", "q975"):
            j = ("q025", "q50", "q975").index(stat)
            return np.array([np.asarray(r["param_q"])[:, j] for r in self.records])
        return np.array([r["param_" + stat] for r in self.records])

    def to_csv(self, path=None, include_wallclock=False, extra=None):
        """Write records as CSV with round-trip exact floats.

        ``extra`` maps column name -> per-record callable for derived
        columns. Wall-clock time is left out by default so reruns produce
        identical files.
        """
        header = ["t"]
        for nm in self.param_names:
            header += [f"{nm}_{s}" for s in ("mean", "sd", "q025", "q50", "q975")]
        for c in self.state_coords:
            header += [f"x{c + 1}_mean", f"x{c + 1}_sd"]
        header += ["loglik", "ess", "max_weight"]
        extra = extra or {}
        header += list(extra)
        if include_wallclock:
            header.append("wallclock_ms")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in self.records:
            row = [r["t"]]
            for j in range(len(self.param_names)):
                row += [r["param_mean"][j], r["param_sd"][j], *r["param_q"][j]]
            for k in range(len(self.state_coords)):
                row += [r["state_mean"][k], r["state_sd"][k]]
            row += [r["loglik"], r["ess"], r["max_weight"]]
            row += [fn(r) for fn in extra.values()]
            if include_wallclock:
                row.append(r["wallclock_ms"])
            w.writerow([format_value(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def format_value(v):
    """CSV cell text: integers as is, floats with 17 significant digits."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


# ------------------------------------------------------------ grid context


class _GridContext:
    """Gridpoint covariance matrices, computed once per run.

    With a scale parameter merged, the grid covers the remaining parameters
    and the matrices are evaluated at scale 1.
    """

    def __init__(self, model, prior, cfg):
        names = model.param_names
        self.scale_idx = None if cfg.scale_param is None else names.index(cfg.scale_param)
        self.grid_idx = [j for j in range(len(names)) if j != self.scale_idx]
        sub = prior.subset([names[j] for j in self.grid_idx])
        axes = cfg.grid_axes or grid_axes(sub, cfg.grid_per_axis, cfg.grid_mass)

        def full(point):
            th = np.empty(len(names))
            th[self.grid_idx] = point
            if self.scale_idx is not None:
                th[self.scale_idx] = 1.0
            return th

        self.full = full
        fulls = []
        valid = []
        for point in itertools.product(*axes):
            th = full(np.asarray(point, dtype=float))
            fulls.append(th)
            valid.append(_covariances_valid(model, th))
        self.points_full = np.array(fulls)
        grid = make_grid(sub, axes=axes)
        lw = np.where(valid, grid.log_weights, -np.inf)
        self.grid = ParamGrid(grid.points, normalize_log_weights(lw))
        self.n_invalid = int(len(valid) - sum(valid))

        Hs = [np.asarray(model.obs_matrix(th), dtype=float) for th in fulls]
        self.H = Hs[0] if all(np.array_equal(Hs[0], h) for h in Hs) else np.stack(Hs)
        ok = np.array(valid)
        self.R = np.stack([model.obs_cov(th) if v else np.eye(model.m) for th, v in zip(fulls, ok)])
        if model.zero_evo_cov:
            self.Q = None
        else:
            self.Q = np.stack([model.evo_cov(th) if v else np.zeros((model.n, model.n))
                               for th, v in zip(fulls, ok)])
        if self.scale_idx is not None:
            d = prior.dists[self.scale_idx]
            if not isinstance(d, InverseGamma):
                raise ConfigError("the merged scale parameter needs an inverse-gamma prior")
            self.scale_prior = d

    def thetas(self, k, scale=None):
        th = self.points_full[k].copy()
        if self.scale_idx is not None:
            th[:, self.scale_idx] = scale
        return th


def _covariances_valid(model, theta):
    try:
        R = np.asarray(model.obs_cov(theta), dtype=float)
        Q = np.asarray(model.evo_cov(theta), dtype=float)
    except BayesEnKFError:
        return False
    return bool(np.all(np.isfinite(R)) and np.all(np.isfinite(Q)) and is_psd(R) and is_psd(Q))


# ------------------------------------------------------------ shared pieces


def _init_states(model, thetas, Z):
    uniq, inv = unique_rows(thetas)
    a0 = np.stack([np.asarray(model.init_mean(th), dtype=float) for th in uniq])
    L0 = np.stack([psd_sqrt(np.asarray(model.init_cov(th), dtype=float)) for th in uniq])
    return a0[inv] + np.einsum("kij,kj->ki", L0[inv], Z)


def _member_analysis(forecast, y, model, thetas, summary, Zv, diagnostics=None):
    """``x_i + K(theta_i)(y + v_i - H x_i)`` with one gain per distinct ``theta_i``."""
    uniq, inv = unique_rows(thetas)
    U = uniq.shape[0]
    H = np.stack([np.asarray(model.obs_matrix(th), dtype=float) for th in uniq])
    R = np.stack([np.asarray(model.obs_cov(th), dtype=float) for th in uniq])
    Pf = np.broadcast_to(summary.prior_cov, (U,) + summary.prior_cov.shape)
    if not model.zero_evo_cov:
        Pf = Pf + np.stack([model.evo_cov(th) for th in uniq])
    HP = H @ Pf
    S = symmetrize(HP @ np.swapaxes(H, -1, -2) + R)
    L, ok = batched_cholesky(S, diagnostics)
    if not np.all(ok):
        k = int(np.argmin(ok))
        raise ConditioningError("innovation covariance is singular for a drawn parameter",
                                float(np.linalg.eigvalsh(S[k]).min()))
    # K' = S^{-1} H Pf via the two triangular solves
    W = np.linalg.solve(L, HP)
    Kt = np.linalg.solve(np.swapaxes(L, -1, -2), W)
    V = member_noise(model, "obs", thetas, Zv)
    D = y + V - np.einsum("kij,kj->ki", H[inv], forecast)
    return forecast + np.einsum("kij,ki->kj", Kt[inv], D)


def _state_summary(X, coords):
    if X.shape[1] == 0 or not coords:
        return [], []
    sub = X[:, list(coords)]
    return sub.mean(axis=0).tolist(), sub.std(axis=0, ddof=1).tolist()


def _empirical_param_summary(thetas):
    mean = thetas.mean(axis=0)
    sd = thetas.std(axis=0, ddof=1)
    w = np.full(thetas.shape[0], 1.0 / thetas.shape[0])
    q = np.array([weighted_quantiles(thetas[:, j], w) for j in range(thetas.shape[1])])
    return mean, sd, q


# ------------------------------------------------------------- the runner


def _check_taper(model, taper):
    # a compactly supported correlation need not stay positive definite on a
    # ring once its support passes half the circumference
    if taper.kind == "none" or model.n == 0:
        return
    if model.distances is None:
        raise ConfigError("tapering needs a model with distances")
    if not is_psd(taper_matrix(taper, model.distances)):
        raise ConfigError(f"{taper.kind} taper with range {taper.range} is not positive "
                          "semidefinite on this model's distances")


class _Runner:
    def __init__(self, model, prior, cfg, seed):
        if prior.p != model.p or tuple(prior.names) != tuple(model.param_names):
            raise ConfigError("prior parameters must match the model's parameter names")
        self.model, self.prior, self.cfg, self.seed = model, prior, cfg, seed
        _check_taper(model, cfg.taper)
        self.diagnostics = {
            "jitter_escalations": 0,
            "curvature_ridges": 0,
            "concentration_warnings": 0,
            "first_concentration_t": None,
            "min_ess": None,
        }
        self.ctx = _GridContext(model, prior, cfg) if cfg.method == "enkf_grid" else None
        if self.ctx is not None:
            self.diagnostics["invalid_gridpoints"] = self.ctx.n_invalid
        if cfg.method == "augmentation":
            self.rep = Reparam(prior.lower, prior.upper)

    # -- initialization and summaries

    def init_state(self):
        model, cfg, N = self.model, self.cfg, self.cfg.n_members
        rng_p = substream(self.seed, 0, "init_param")
        Zx = substream(self.seed, 0, "init_state").standard_normal((N, model.n))
        scale_post = None
        if cfg.method == "enkf_grid":
            grid = self.ctx.grid
            k = grid_sample_indices(grid, N, rng_p)
            scale = None
            if self.ctx.scale_idx is not None:
                d = self.ctx.scale_prior
                scale_post = InverseGammaPosterior(d.a, np.full(grid.K, d.b))
                scale = d.sample(rng_p, N)
            thetas = self.ctx.thetas(k, scale)
            posterior = grid
        elif cfg.method == "enkf_normal":
            mean = np.array([d.mean() for d in self.prior.dists])
            var = np.array([d.std() ** 2 for d in self.prior.dists])
            posterior = NormalParamPosterior(mean, np.diag(var), self.prior.lower, self.prior.upper)
            thetas = self.prior.sample(rng_p, N)
        elif cfg.method == "augmentation":
            thetas = self.prior.sample(rng_p, N)
            posterior = None
        else:
            cloud = liu_west_init(model, self.prior, N, self.seed)
            return FilterState(0, cloud.states, cloud.thetas, cloud)
        X = _init_states(model, thetas, Zx)
        return FilterState(0, X, thetas, posterior, scale_post)

    def param_summary(self, state):
        post = state.posterior
        if isinstance(post, ParamGrid):
            gm, gcov, gq = grid_moments(post)
            p = self.model.p
            mean, sd, q = np.empty(p), np.empty(p), np.empty((p, 3))
            gi = self.ctx.grid_idx
            mean[gi], sd[gi], q[gi] = gm, np.sqrt(np.diag(gcov)), gq
            if self.ctx.scale_idx is not None:
                s = self.ctx.scale_idx
                mean[s], sd[s], q[s] = ig_mixture_summary(
                    state.scale_post.shape, state.scale_post.rate, post.weights)
            return mean, sd, q, float(post.weights.max()), float(1.0 / np.sum(post.weights**2))
        if isinstance(post, NormalParamPosterior):
            if state.t == 0:
                d = self.prior.dists
                mean = np.array([x.mean() for x in d])
                sd = np.array([x.std() for x in d])
                q = np.array([x.ppf([0.025, 0.5, 0.975]) for x in d])
            else:
                mean, sd = post.mean.copy(), np.sqrt(np.diag(post.cov))
                q = normal_quantiles(post)
            return mean, sd, q, float("nan"), float("nan")
        if isinstance(post, ParticleCloud):
            s = post.summary()
            w = post.weights
            return s["param_mean"], s["param_sd"], s["param_q"], float(w.max()), float(1.0 / np.sum(w * w))
        mean, sd, q = _empirical_param_summary(state.param_draws)
        return mean, sd, q, float("nan"), float("nan")

    def record(self, state, loglik, elapsed_ms):
        mean, sd, q, wmax, ess = self.param_summary(state)
        if isinstance(state.posterior, ParticleCloud):
            s = state.posterior.summary()
            coords = list(self.cfg.state_coords)
            xm = s["state_mean"][coords].tolist() if coords else []
            xs = s["state_sd"][coords].tolist() if coords else []
        else:
            xm, xs = _state_summary(state.ensemble[:, : self.model.n], self.cfg.state_coords)
        return {
            "t": state.t,
            "param_mean": np.asarray(mean, float).tolist(),
            "param_sd": np.asarray(sd, float).tolist(),
            "param_q": np.asarray(q, float).tolist(),
            "state_mean": xm,
            "state_sd": xs,
            "loglik": float(loglik),
            "ess": ess,
            "max_weight": wmax,
            "wallclock_ms": float(elapsed_ms),
        }

    # -- one cycle

    def step(self, state, y):
        t = state.t + 1
        stage = "propagate"
        try:
            Xp = self.model.evolution(state.ensemble, self.model.gamma)
            if not np.all(np.isfinite(Xp)):
                raise NumericError("propagation produced non-finite members")
            method = self.cfg.method
            if method == "liu_west":
                stage = "particle"
                cloud, info = liu_west_step(state.posterior, y, self.model, self.cfg.lw_delta,
                                            substream(self.seed, t, "resample"))
                md = self.diagnostics["min_ess"]
                self.diagnostics["min_ess"] = info["ess"] if md is None else min(md, info["ess"])
                return FilterState(t, cloud.states, cloud.thetas, cloud), info["loglik"]
            Xp = inflate(Xp, self.cfg.inflation)
            if method == "augmentation":
                stage = "augmented analysis"
                return self._augmentation_step(state, Xp, y, t)
            stage = "forecast summary"
            summary = forecast_summary(Xp, self.cfg.taper, self.model.distances)
            stage = "parameter update"
            if method == "enkf_grid":
                posterior, scale_post, loglik = self._grid_update(state, summary, y)
            else:
                posterior, loglik = self._normal_update(state, summary, y, t)
                scale_post = None
            stage = "parameter draw"
            thetas = self._draw(posterior, scale_post, t)
            stage = "evolution noise"
            Zw = substream(self.seed, t, "evo_noise").standard_normal(Xp.shape)
            Xf = Xp + member_noise(self.model, "evo", thetas, Zw)
            stage = "analysis"
            Zv = substream(self.seed, t, "obs_perturb").standard_normal((Xp.shape[0], self.model.m))
            Xa = _member_analysis(Xf, y, self.model, thetas, summary, Zv, self.diagnostics)
            return FilterState(t, Xa, thetas, posterior, scale_post), loglik
        except BayesEnKFError as exc:
            raise StepError(t, stage, exc) from exc

    def _grid_update(self, state, summary, y):
        ctx, grid = self.ctx, state.posterior
        live = np.isfinite(grid.log_weights)
        m = self.model.m
        H = ctx.H if ctx.H.ndim == 2 else ctx.H[live]
        Q = None if ctx.Q is None else ctx.Q[live]
        ll = np.full(grid.K, -np.inf)
        scale_post = None
        if ctx.scale_idx is None:
            logdet, quad, ok = innovation_terms(summary, y, H, Q, ctx.R[live],
                                                diagnostics=self.diagnostics)
            ll[live] = np.where(ok, -0.5 * logdet - 0.5 * quad - 0.5 * m * LOG_2PI, -np.inf)
        else:
            sp = state.scale_post
            rate = sp.rate[live]
            s_hat = rate / (sp.shape - 1.0)
            logdet, quad, ok = innovation_terms(summary, y, H, Q, ctx.R[live], prior_scale=s_hat,
                                                diagnostics=self.diagnostics)
            vals = ig_predictive_loglik(sp.shape, rate, m, logdet, quad)
            ll[live] = np.where(ok, vals, -np.inf)
            new_rate = sp.rate.copy()
            new_rate[live] = np.where(ok, rate + 0.5 * np.nan_to_num(quad), rate)
            scale_post = InverseGammaPosterior(sp.shape + 0.5 * m, new_rate)
        with np.errstate(invalid="ignore"):
            joint = grid.log_weights + ll
        joint[np.isnan(joint)] = -np.inf
        loglik = float(logsumexp(joint))
        posterior = ParamGrid(grid.points, normalize_log_weights(joint))
        if posterior.is_concentrated:
            self.diagnostics["concentration_warnings"] += 1
            if self.diagnostics["first_concentration_t"] is None:
                self.diagnostics["first_concentration_t"] = state.t + 1
        return posterior, scale_post, loglik

    def _normal_update(self, state, summary, y, t):
        model = self.model

        def loglik(theta):
            try:
                return enkf_loglik(summary, y, model, theta)
            except BayesEnKFError:
                return -np.inf

        post = state.posterior
        first = state.t == 0
        log_prior = self.prior.logpdf if first else None
        new = normal_update(post, loglik, log_prior=log_prior,
                            rng=substream(self.seed, t, "optimizer"),
                            restarts=self.cfg.normal_restarts, diagnostics=self.diagnostics)
        # Laplace estimate of log p(y_t | Y_{t-1})
        if first:
            lp = self.prior.logpdf(new.mean)
        else:
            diff = new.mean - post.mean
            Lc = np.linalg.cholesky(post.cov)
            z = np.linalg.solve(Lc, diff)
            lp = -0.5 * z @ z - np.sum(np.log(np.diag(Lc))) - 0.5 * post.p * LOG_2PI
        _, logdet_c = np.linalg.slogdet(new.cov)
        ev = loglik(new.mean) + lp + 0.5 * new.p * LOG_2PI + 0.5 * logdet_c
        return new, float(ev)

    def _draw(self, posterior, scale_post, t):
        rng = substream(self.seed, t, "param_draw")
        N = self.cfg.n_members
        if isinstance(posterior, ParamGrid):
            k = grid_sample_indices(posterior, N, rng)
            scale = None
            if scale_post is not None:
                scale = scale_post.rate[k] / rng.gamma(scale_post.shape, size=N)
            return self.ctx.thetas(k, scale)
        return normal_sample(posterior, N, rng)

    def _augmentation_step(self, state, Xp, y, t):
        """EnKF on the state ``(x, u)`` with ``u`` the unconstrained parameters."""
        model = self.model
        thetas = state.param_draws
        Zw = substream(self.seed, t, "evo_noise").standard_normal(Xp.shape)
        Xf = Xp + member_noise(model, "evo", thetas, Zw)
        U = self.rep.to_u(thetas)
        Z = np.hstack([Xf, U])
        n, p = model.n, U.shape[1]
        if model.distances is not None and self.cfg.taper.kind != "none":
            D = np.zeros((n + p, n + p))
            D[:n, :n] = model.distances
            P = tapered_empirical_cov(Z, self.cfg.taper, D)
        else:
            P = tapered_empirical_cov(Z, TaperSpec())
        theta_bar = self.rep.to_theta(U.mean(axis=0))
        H = np.hstack([np.asarray(model.obs_matrix(theta_bar), dtype=float), np.zeros((model.m, p))])
        R = np.asarray(model.obs_cov(theta_bar), dtype=float)
        S = symmetrize(H @ P @ H.T + R)
        L = robust_cholesky(S, self.diagnostics)
        e = y - H @ Z.mean(axis=0)
        zz = np.linalg.solve(L, e)
        loglik = float(-np.sum(np.log(np.diag(L))) - 0.5 * zz @ zz - 0.5 * model.m * LOG_2PI)
        Kt = np.linalg.solve(L.T, np.linalg.solve(L, H @ P))
        Zv = substream(self.seed, t, "obs_perturb").standard_normal((Xp.shape[0], model.m))
        V = Zv @ psd_sqrt(R).T
        Za = Z + (y + V - Z @ H.T) @ Kt
        new_thetas = self.rep.to_theta(Za[:, n:])
        return FilterState(t, Za[:, :n], new_thetas, None), loglik


def _check_observations(model, observations):
    Y = np.asarray(observations, dtype=float)
    if Y.ndim == 1 and model.m == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or (Y.shape[0] and Y.shape[1] != model.m):
        raise DimensionError(f"observations must be (T, {model.m}), got {Y.shape}")
    return Y


def run_filter(model, observations, prior, cfg=FilterConfig(), seed=0, resume_from=None):
    """Assimilate ``observations`` (``(T, m)``) and return a :class:`FilterTrace`.

    The trace has ``T + 1`` records; record 0 summarizes the prior. Results
    are a pure function of the inputs and ``seed``. With ``resume_from`` (a
    checkpoint path) the run continues from the saved state and produces the
    same trace as an uninterrupted run.
    """
    Y = _check_observations(model, observations)
    runner = _Runner(model, prior, cfg, seed)
    if resume_from is not None:
        state, trace, saved_seed = load_checkpoint(resume_from, runner)
        if saved_seed != seed:
            raise ConfigError(f"checkpoint was written with seed {saved_seed}, not {seed}")
        runner.diagnostics.update(trace.diagnostics)
    else:
        t0 = time.perf_counter()
        state = runner.init_state()
        trace = FilterTrace(tuple(model.param_names), tuple(cfg.state_coords))
        trace.records.append(runner.record(state, float("nan"), 1e3 * (time.perf_counter() - t0)))
        if 0 in cfg.keep_grid_at and isinstance(state.posterior, ParamGrid):
            trace.grids[0] = state.posterior
    for t in range(state.t, Y.shape[0]):
        t0 = time.perf_counter()
        state, loglik = runner.step(state, Y[t])
        trace.records.append(runner.record(state, loglik, 1e3 * (time.perf_counter() - t0)))
        if state.t in cfg.keep_grid_at and isinstance(state.posterior, ParamGrid):
            trace.grids[state.t] = state.posterior
        trace.diagnostics = dict(runner.diagnostics)
        if cfg.checkpoint_every and state.t % cfg.checkpoint_every == 0:
            save_checkpoint(cfg.checkpoint_path, state, trace, cfg, seed)
    trace.diagnostics = dict(runner.diagnostics)
    return trace


# -------------------------------------------------------------- checkpoints


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def save_checkpoint(path, state, trace, cfg, seed):
    """Write the full filter state and trace so far as versioned JSON."""
    post = state.posterior
    if isinstance(post, ParamGrid):
        post_doc = {"kind": "grid", "points": _arr(post.points), "log_weights": _arr(post.log_weights)}
    elif isinstance(post, NormalParamPosterior):
        post_doc = {"kind": "normal", "mean": _arr(post.mean), "cov": _arr(post.cov),
                    "lower": _arr(post.lower), "upper": _arr(post.upper), "ridge": post.ridge}
    elif isinstance(post, ParticleCloud):
        post_doc = {"kind": "particles", "phi": _arr(post.phi), "log_weights": _arr(post.log_weights)}
    else:
        post_doc = {"kind": "none"}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "config": _config_doc(cfg),
        "t": state.t,
        "ensemble": _arr(state.ensemble),
        "param_draws": _arr(state.param_draws),
        "posterior": post_doc,
        "scale_post": None if state.scale_post is None else {
            "shape": state.scale_post.shape, "rate": _arr(state.scale_post.rate)},
        "trace": {"records": trace.records, "diagnostics": trace.diagnostics,
                  "grids": {str(t): _arr(g.log_weights) for t, g in trace.grids.items()}},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _config_doc(cfg):
    d = asdict(cfg)
    d.pop("checkpoint_path", None)
    d.pop("checkpoint_every", None)
    return json.loads(json.dumps(d, default=list))


def load_checkpoint(path, runner):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a filter checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')}")
    if doc["config"] != _config_doc(runner.cfg):
        raise ConfigError("checkpoint was written with a different filter configuration")
    pd = doc["posterior"]
    N = runner.cfg.n_members
    ensemble = np.asarray(doc["ensemble"], dtype=float).reshape(N, -1)
    draws = np.asarray(doc["param_draws"], dtype=float).reshape(N, -1)
    if pd["kind"] == "grid":
        post = ParamGrid(np.asarray(pd["points"], float), np.asarray(pd["log_weights"], float))
    elif pd["kind"] == "normal":
        post = NormalParamPosterior(np.asarray(pd["mean"], float), np.asarray(pd["cov"], float),
                                    np.asarray(pd["lower"], float), np.asarray(pd["upper"], float),
                                    pd["ridge"])
    elif pd["kind"] == "particles":
        post = ParticleCloud(ensemble, np.asarray(pd["phi"], float),
                             np.asarray(pd["log_weights"], float),
                             Reparam(runner.prior.lower, runner.prior.upper))
    else:
        post = None
    sp = doc["scale_post"]
    scale_post = None if sp is None else InverseGammaPosterior(sp["shape"], np.asarray(sp["rate"], float))
    state = FilterState(doc["t"], ensemble, draws, post, scale_post)
    tr = doc["trace"]
    trace = FilterTrace(tuple(runner.model.param_names), tuple(runner.cfg.state_coords),
                        records=tr["records"], diagnostics=tr["diagnostics"])
    if runner.ctx is not None:
        for t, lw in tr["grids"].items():
            trace.grids[int(t)] = ParamGrid(runner.ctx.grid.points, np.asarray(lw, float))
    return state, trace, doc["seed"]
