import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesenkf.covariance import (
    MaternParams,
    TaperSpec,
    circular_distance,
    distance_matrix,
    exponential_corr,
    matern_cov,
    sample_cov,
    taper_value,
    tapered_empirical_cov,
    transect_distance,
)
from bayesenkf.exceptions import ConfigError, DomainError, InsufficientEnsembleError
from bayesenkf.linalg import psd_sqrt


def matern_reference(d, sigma2, lam, nu):
    x = mpmath.mpf(d) / lam
    if x == 0:
        return sigma2
    val = sigma2 / (2 ** (nu - 1) * mpmath.gamma(nu)) * x**nu * mpmath.besselk(nu, x)
    return float(val)


def test_exponential_values():
    assert exponential_corr(0.0, 3.0) == 1.0
    assert exponential_corr(1.0, 1.0) == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert exponential_corr(2.0, 0.5) == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_exponential_rejects_bad_input():
    with pytest.raises(DomainError):
        exponential_corr(1.0, 0.0)
    with pytest.raises(DomainError):
        exponential_corr(-1.0, 1.0)


def test_matern_half_is_exponential():
    d = np.linspace(0, 20, 401)
    np.testing.assert_allclose(matern_cov(d, MaternParams(1.0, 1.0, 0.5)), np.exp(-d), atol=1e-10)
    assert matern_cov(1.0, MaternParams(1.0, 1.0, 0.5)) == pytest.approx(np.exp(-1), abs=1e-12)


def test_matern_sill():
    assert matern_cov(0.0, MaternParams(2.0, 0.7, 1.3)) == 2.0


@pytest.mark.parametrize("nu", [0.1, 0.5, 1.5, 2.5, 7.0, 30.0])
@pytest.mark.parametrize("d", [1e-6, 0.3, 1.0, 2.0, 9.0, 40.0])
def test_matern_against_high_precision(nu, d):
    got = matern_cov(d, MaternParams(1.3, 2.0, nu))
    ref = matern_reference(d, 1.3, 2.0, nu)
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-300)


def test_matern_three_halves_closed_form():
    # with the distance scaled by lambda alone, nu = 3/2 gives (1 + x) e^{-x}
    x = 1.0 / 2.0
    assert matern_cov(1.0, MaternParams(1.0, 2.0, 1.5)) == pytest.approx((1 + x) * np.exp(-x), rel=1e-12)


def test_matern_bad_params():
    with pytest.raises(DomainError):
        MaternParams(1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        MaternParams(1.0, 1.0, 60.0)


def gc_reference(d, c):
    # piecewise fifth-order polynomial, half-width c
    r = abs(d) / c
    if r <= 1:
        return -r**5 / 4 + r**4 / 2 + 5 * r**3 / 8 - 5 * r**2 / 3 + 1
    if r < 2:
        return r**5 / 12 - r**4 / 2 + 5 * r**3 / 8 + 5 * r**2 / 3 - 5 * r + 4 - 2 / (3 * r)
    return 0.0


@pytest.mark.parametrize("kind", ["gaspari_cohn", "wendland", "none"])
def test_taper_at_zero(kind):
    assert taper_value(0.0, TaperSpec(kind, 12.0)) == 1.0


@pytest.mark.parametrize("d", [0.5, 3.0, 6.0, 7.5, 11.0, 11.99, 12.0, 20.0])
def test_gaspari_cohn_piecewise(d):
    assert taper_value(d, TaperSpec("gaspari_cohn", 12.0)) == pytest.approx(gc_reference(d, 6.0), abs=1e-14)


def test_gaspari_cohn_midpoint():
    # both branches meet at r = 1 with value 5/24
    assert taper_value(6.0, TaperSpec("gaspari_cohn", 12.0)) == pytest.approx(5 / 24, abs=1e-12)


def test_wendland_compact_support():
    d = np.array([12.0, 12.5, 100.0])
    assert np.all(taper_value(d, TaperSpec("wendland", 12.0)) == 0.0)
    assert taper_value(6.0, TaperSpec("wendland", 12.0)) == pytest.approx(0.5**4 * 3.0)


def test_taper_spec_validation():
    with pytest.raises(ConfigError):
        TaperSpec("triangle", 1.0)
    with pytest.raises(ConfigError):
        TaperSpec("wendland", 0.0)


def test_circular_distance():
    assert circular_distance(1, 40, 40) == 1
    assert circular_distance(7, 7, 40) == 0
    assert circular_distance(1, 21, 40) == 20
    with pytest.raises(DomainError):
        circular_distance(0, 3, 40)


def test_transect_distance():
    assert transect_distance(1, 20, 20) == 19
    D = distance_matrix(transect_distance, 4)
    assert D[0, 3] == 3 and D[2, 1] == 1


def test_untapered_is_sample_cov():
    X = np.random.default_rng(0).standard_normal((30, 5))
    np.testing.assert_allclose(tapered_empirical_cov(X, TaperSpec()), np.cov(X, rowvar=False), atol=1e-14)


def test_identical_members_give_zero():
    X = np.tile(np.arange(4.0), (10, 1))
    assert not np.any(tapered_empirical_cov(X, TaperSpec("gaspari_cohn", 3.0), transect_distance))


def test_single_member_rejected():
    with pytest.raises(InsufficientEnsembleError):
        sample_cov(np.zeros((1, 3)))


def test_taper_needs_distance():
    with pytest.raises(ConfigError):
        tapered_empirical_cov(np.zeros((3, 2)), TaperSpec("wendland", 2.0))


def test_ring_taper_beyond_half_circumference_is_indefinite():
    D = distance_matrix(circular_distance, 4)
    assert np.linalg.eigvalsh(taper_value(D, TaperSpec("gaspari_cohn", 4.0))).min() < -0.1
    D = distance_matrix(circular_distance, 40)
    assert np.linalg.eigvalsh(taper_value(D, TaperSpec("gaspari_cohn", 12.0))).min() > 0


def test_taper_reduces_error():
    n = 40
    D = distance_matrix(transect_distance, n)
    P = exponential_corr(D, 1 / 3)
    rng = np.random.default_rng(11)
    X = rng.standard_normal((50, n)) @ psd_sqrt(P).T
    plain = np.linalg.norm(sample_cov(X) - P)
    tapered = np.linalg.norm(tapered_empirical_cov(X, TaperSpec("gaspari_cohn", 12.0), D) - P)
    assert tapered < plain


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["gaspari_cohn", "wendland"]),
    c=st.floats(1.0, 30.0),
    n=st.integers(2, 40),
    N=st.integers(2, 30),
    seed=st.integers(0, 2**31),
    circular=st.booleans(),
)
def test_tapered_cov_is_psd(kind, c, n, N, seed, circular):
    dist = circular_distance if circular else transect_distance
    if circular:
        # on a ring the taper stays PSD only up to half the circumference
        c = min(c, n / 2)
    X = np.random.default_rng(seed).standard_normal((N, n))
    S = tapered_empirical_cov(X, TaperSpec(kind, c), dist)
    assert np.linalg.eigvalsh(S).min() >= -1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-1e3, 1e3))
def test_sample_cov_shift_invariant(seed, shift):
    X = np.random.default_rng(seed).standard_normal((12, 6))
    np.testing.assert_allclose(sample_cov(X + shift), sample_cov(X), atol=1e-9)
