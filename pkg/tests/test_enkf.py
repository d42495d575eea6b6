import numpy as np
import pytest

from bayesenkf.covariance import TaperSpec
from bayesenkf.enkf import (
    ForecastSummary,
    analysis_update,
    discrete_loglik,
    effective_sample_size,
    enkf_loglik,
    enkf_loglik_batch,
    forecast_summary,
    inflate,
    innovation_cov,
    kalman_gain,
)
from bayesenkf.exceptions import ConditioningError, InsufficientEnsembleError
from bayesenkf.experiments import lik_compare_once
from bayesenkf.models import ModelSpec, linear_var_model


def iid(n, q, r, m=None, H=None):
    m = n if m is None else m
    H = np.eye(n)[:m] if H is None else H
    return ModelSpec(
        n=n, m=m, param_names=("a",),
        evolution=lambda X, g: X,
        obs_matrix=lambda th: H,
        evo_cov=lambda th: q * np.eye(n),
        obs_cov=lambda th: r * np.eye(m),
        init_mean=lambda th: np.zeros(n), init_cov=lambda th: np.eye(n),
    )


TH = np.array([1.0])


def test_innovation_cov_identity():
    s = ForecastSummary(np.zeros(3), 2.0 * np.eye(3))
    np.testing.assert_allclose(innovation_cov(s, iid(3, 0.0, 0.5), TH), 2.5 * np.eye(3))


def test_innovation_cov_single_obs():
    H = np.zeros((1, 4))
    H[0, 0] = 1
    s = ForecastSummary(np.zeros(4), np.eye(4))
    assert innovation_cov(s, iid(4, 0.0, 0.1, m=1, H=H), TH)[0, 0] == pytest.approx(1.1)


def test_innovation_cov_linear_dense():
    m = linear_var_model()
    th = np.array([5.0, 1.0])
    P = np.cov(np.random.default_rng(0).standard_normal((60, 20)), rowvar=False)
    s = ForecastSummary(np.zeros(20), P)
    ref = np.eye(20) @ (P + m.evo_cov(th)) @ np.eye(20) + m.obs_cov(th)
    np.testing.assert_allclose(innovation_cov(s, m, th), ref, atol=1e-12)


def test_gain_limits():
    s = ForecastSummary(np.zeros(3), 2.0 * np.eye(3))
    np.testing.assert_allclose(kalman_gain(s, iid(3, 0.0, 0.5), TH), 0.8 * np.eye(3))
    np.testing.assert_allclose(kalman_gain(s, iid(3, 0.0, 1e-12), TH), np.eye(3), atol=1e-9)
    z = ForecastSummary(np.zeros(3), np.zeros((3, 3)))
    np.testing.assert_allclose(kalman_gain(z, iid(3, 0.0, 1.0), TH), 0.0)


def test_scalar_loglik():
    s = ForecastSummary(np.zeros(1), np.eye(1))
    val = enkf_loglik(s, np.zeros(1), iid(1, 0.0, 1.0), TH)
    assert val == pytest.approx(-0.5 * np.log(4 * np.pi), abs=1e-12)
    assert val == pytest.approx(-1.26551212, abs=1e-8)


def test_loglik_mode_at_zero_innovation():
    s = ForecastSummary(np.array([0.4, -1.0]), np.array([[1.0, 0.3], [0.3, 2.0]]))
    m = iid(2, 0.2, 0.5)
    best = enkf_loglik(s, s.prior_mean, m, TH)
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert enkf_loglik(s, s.prior_mean + rng.standard_normal(2), m, TH) < best


def test_batch_matches_single():
    m = linear_var_model()
    X = np.random.default_rng(2).standard_normal((30, 20))
    s = forecast_summary(X)
    y = np.random.default_rng(3).standard_normal(20)
    thetas = np.array([[5.0, 1.0], [2.0, 0.4], [9.0, 2.5]])
    batch = enkf_loglik_batch(s, y, m, thetas)
    np.testing.assert_allclose(batch, [enkf_loglik(s, y, m, th) for th in thetas], rtol=1e-12)


def test_singular_innovation_raises():
    s = ForecastSummary(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(ConditioningError):
        innovation_cov(s, iid(2, 0.0, 0.0), TH)


def test_singular_batch_gives_minus_inf():
    s = ForecastSummary(np.zeros(2), np.zeros((2, 2)))
    assert enkf_loglik_batch(s, np.zeros(2), iid(2, 0.0, 0.0), TH[None, :])[0] == -np.inf


def test_discrete_single_member_is_gaussian():
    m = iid(3, 0.2, 0.3)
    x = np.array([[0.1, -0.2, 0.5]])
    y = np.array([0.3, 0.0, 0.1])
    s = ForecastSummary(x[0], np.zeros((3, 3)))
    assert discrete_loglik(x, y, m, TH) == pytest.approx(enkf_loglik(s, y, m, TH), abs=1e-12)
    same = np.tile(x, (7, 1))
    assert discrete_loglik(same, y, m, TH) == pytest.approx(enkf_loglik(s, y, m, TH), abs=1e-12)


def test_effective_sample_size():
    assert effective_sample_size(np.ones(8)) == pytest.approx(8.0)
    assert effective_sample_size([1.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_inflate():
    X = np.array([[0.0, 1.0], [2.0, 3.0]])
    Y = inflate(X, 2.0)
    np.testing.assert_allclose(Y.mean(axis=0), X.mean(axis=0))
    np.testing.assert_allclose(np.cov(Y, rowvar=False), 4 * np.cov(X, rowvar=False))


def test_analysis_huge_noise_keeps_forecast():
    X = np.random.default_rng(4).standard_normal((50, 3))
    out = analysis_update(X, np.ones(3), iid(3, 0.0, 1e12), TH, rng=np.random.default_rng(5))
    np.testing.assert_allclose(out, X, atol=1e-4)


def test_analysis_tiny_noise_collapses_to_data():
    X = np.random.default_rng(4).standard_normal((50, 3))
    y = np.array([0.5, -0.5, 2.0])
    out = analysis_update(X, y, iid(3, 0.0, 1e-10), TH, rng=np.random.default_rng(5))
    np.testing.assert_allclose(out, np.tile(y, (50, 1)), atol=1e-3)


def test_analysis_scalar_kalman_moments():
    # prior N(1, 2), y = 3 with R = 0.5: posterior mean 1 + 0.8 * 2 = 2.6, var 0.4
    N = 200000
    X = 1.0 + np.sqrt(2.0) * np.random.default_rng(6).standard_normal((N, 1))
    s = ForecastSummary(np.array([1.0]), np.array([[2.0]]))
    out = analysis_update(X, np.array([3.0]), iid(1, 0.0, 0.5), TH,
                          rng=np.random.default_rng(7), summary=s)
    assert out.mean() == pytest.approx(2.6, abs=4 * np.sqrt(0.4 / N) + 1e-3)
    assert out.var() == pytest.approx(0.4, rel=0.02)


def test_check_ensemble():
    with pytest.raises(InsufficientEnsembleError):
        forecast_summary(np.zeros((1, 4)))


def test_likelihood_curve_peaks_near_truth():
    # one observation vector leaves the mode with sd near 0.3, so the
    # location check is on the median over seeds
    runs = [lik_compare_once(50, seed=s) for s in range(20)]
    assert abs(np.median([r["enkf_mode"] for r in runs]) - 0.5) < 0.1
    for r in runs:
        assert abs(r["enkf_mode"] - r["exact_mode"]) < 0.15


def test_discrete_curve_degenerate_at_n100():
    res = lik_compare_once(100, seed=0)
    assert res["discrete_ess_at_mode"] < 2.0
    assert abs(res["enkf_mode"] - 0.5) < 0.2


def test_small_dimension_curves_agree():
    res = lik_compare_once(5, seed=0)
    step = res["alpha"][1] - res["alpha"][0]
    assert abs(res["enkf_mode"] - res["discrete_mode"]) <= 0.3 + step
    integral = np.sum(0.5 * (res["exact"][1:] + res["exact"][:-1]) * np.diff(res["alpha"]))
    assert integral == pytest.approx(1.0, abs=1e-6)
