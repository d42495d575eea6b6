"""Sequential Bayesian state and parameter estimation with the ensemble
Kalman filter: grid and normal parameter posteriors, exact Kalman
oracles, and augmentation and particle-filter baselines."""

__version__ = "0.1.0"

from .covariance import TaperSpec, matern_cov, tapered_empirical_cov
from .enkf import analysis_update, discrete_loglik, enkf_loglik, forecast_summary
from .filters import FilterConfig, FilterTrace, run_filter
from .kalman import grid_kf_oracle, kalman_filter, kf_step
from .models import (
    ModelSpec,
    linear_var_model,
    lorenz96_model,
    simulate_truth,
    state_augmentation_wrap,
    static_variance_model,
)
from .param_posterior import (
    InverseGamma,
    ParamGrid,
    PriorSpec,
    TruncatedNormal,
    Uniform,
    grid_update,
    make_grid,
)

__all__ = [
    "FilterConfig", "FilterTrace", "InverseGamma", "ModelSpec", "ParamGrid", "PriorSpec",
    "TaperSpec", "TruncatedNormal", "Uniform", "analysis_update", "discrete_loglik",
    "enkf_loglik", "forecast_summary", "grid_kf_oracle", "grid_update", "kalman_filter",
    "kf_step", "linear_var_model", "lorenz96_model", "make_grid", "matern_cov",
    "run_filter", "simulate_truth", "state_augmentation_wrap", "static_variance_model",
    "tapered_empirical_cov",
]
