"""Statistics layer: streams, distribution tests, fits.

Oracles are hand-computable cases or scipy reference implementations.
"""

import numpy as np
import pytest
from scipy import stats as scipy_stats

from scalebridge.errors import InsufficientSampleError, ValidationError
from scalebridge.stats import (RngStream, autocorrelation, chi2_test,
                               fit_line, ks_distance, ks_distance_two_sample,
                               ks_p_value, ks_stderr, loglog_slope,
                               normal_cdf)


def test_stream_is_reproducible():
    a = RngStream(123, 5).uniform(64)
    b = RngStream(123, 5).uniform(64)
    assert np.array_equal(a, b)


def test_streams_do_not_collide():
    a = RngStream(123, 5).uniform(64)
    assert not np.array_equal(a, RngStream(123, 6).uniform(64))
    assert not np.array_equal(a, RngStream(124, 5).uniform(64))


def test_stream_key_validation():
    with pytest.raises(ValidationError):
        RngStream(-1, 0)
    with pytest.raises(ValidationError):
        RngStream(0, 2 ** 64)


def test_counter_tracks_draws():
    rng = RngStream(1, 0)
    assert rng.counter == 0
    rng.uniform(10)
    rng.normal()
    assert rng.counter == 11


def test_spawn_is_pure_and_disjoint():
    base = RngStream(9, 2)
    kids = [base.spawn(k).uniform(32) for k in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.array_equal(kids[i], kids[j])
    again = RngStream(9, 2).spawn(1).uniform(32)
    assert np.array_equal(again, kids[1])


def test_uniform_moments_and_support():
    u = RngStream(7, 0).uniform(200_000)
    assert 0.0 < u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1.0 / 12.0) < 0.002


def test_normal_is_inverse_cdf_of_uniform():
    from scipy.special import ndtri
    z = RngStream(7, 1).normal(1000)
    u = RngStream(7, 1).uniform(1000)
    np.testing.assert_array_equal(z, ndtri(u))
    big = RngStream(7, 2).normal(200_000)
    assert abs(big.mean()) < 0.01
    assert abs(big.var() - 1.0) < 0.02


def test_gamma_moments():
    g = RngStream(7, 3).gamma(1.5, 100_000)
    assert np.all(g > 0)
    assert abs(g.mean() - 1.5) < 0.02
    assert abs(g.var() - 1.5) < 0.06
    with pytest.raises(ValidationError):
        RngStream(7, 3).gamma(0.0)


def test_exponential_mean():
    e = RngStream(7, 4).exponential(100_000)
    assert abs(e.mean() - 1.0) < 0.02


def test_permutation_and_bit_words():
    p = RngStream(3, 0).permutation(17)
    assert np.array_equal(np.sort(p), np.arange(17))
    assert np.array_equal(p, RngStream(3, 0).permutation(17))
    w = RngStream(3, 1).bit_words(8)
    assert w.dtype == np.uint64 and w.shape == (8,)


def test_normal_cdf_matches_scipy():
    x = np.linspace(-4.0, 4.0, 33)
    np.testing.assert_allclose(normal_cdf(x), scipy_stats.norm.cdf(x),
                               atol=1e-12)
    np.testing.assert_allclose(normal_cdf(x, mean=1.0, std=2.0),
                               scipy_stats.norm.cdf(x, 1.0, 2.0), atol=1e-12)


def test_ks_distance_hand_case():
    # ecdf of {0.1, 0.2, 0.9} vs the identity cdf: sup gap is 2/3 - 0.2
    d = ks_distance([0.1, 0.2, 0.9], lambda x: np.asarray(x))
    assert d == pytest.approx(2.0 / 3.0 - 0.2, abs=1e-12)


def test_ks_two_sample_hand_case_and_symmetry():
    d = ks_distance_two_sample([0.0, 0.5], [0.25, 0.75])
    assert d == pytest.approx(0.5, abs=1e-12)
    assert d == ks_distance_two_sample([0.25, 0.75], [0.0, 0.5])


def test_ks_p_value_monotone_in_distance():
    ps = [ks_p_value(d, 500) for d in (0.01, 0.05, 0.1, 0.2)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert 0.0 <= ps[-1] < ps[0] <= 1.0


def test_ks_stderr_shrinks_with_sample_size():
    assert ks_stderr(100) > ks_stderr(10_000) > 0.0
    # effective two-sample size nm/(n+m) is below either sample alone
    assert ks_stderr(1000, 1000) > ks_stderr(1000)


def test_fit_line_exact_line():
    x = np.arange(10.0)
    f = fit_line(x, 2.0 * x + 1.0)
    assert f.slope == pytest.approx(2.0, abs=1e-12)
    assert f.intercept == pytest.approx(1.0, abs=1e-12)
    assert f.r_squared == pytest.approx(1.0, abs=1e-12)
    assert f.slope_stderr == pytest.approx(0.0, abs=1e-9)
    assert f.n_points == 10


def test_fit_line_matches_scipy_linregress():
    gen = np.random.default_rng(0)
    x = np.linspace(0.0, 5.0, 40)
    y = 0.7 * x - 2.0 + gen.normal(size=40)
    f = fit_line(x, y)
    ref = scipy_stats.linregress(x, y)
    assert f.slope == pytest.approx(ref.slope, rel=1e-10)
    assert f.intercept == pytest.approx(ref.intercept, rel=1e-10)
    assert f.slope_stderr == pytest.approx(ref.stderr, rel=1e-6)
    assert f.r_squared == pytest.approx(ref.rvalue ** 2, rel=1e-10)


def test_loglog_slope_recovers_power_law():
    x = np.geomspace(0.01, 1.0, 12)
    f = loglog_slope(x, 5.0 * x ** 3)
    assert f.slope == pytest.approx(3.0, abs=1e-10)


def test_loglog_slope_window_and_positivity():
    x = np.geomspace(0.01, 1.0, 12)
    y = 5.0 * x ** 3
    contaminated = y.copy()
    contaminated[:4] = 1.0
    f = loglog_slope(x, contaminated, window=(4, 12))
    assert f.slope == pytest.approx(3.0, abs=1e-10)
    mask = np.arange(12) >= 4
    g = loglog_slope(x, contaminated, window=mask)
    assert g.slope == pytest.approx(3.0, abs=1e-10)
    with pytest.raises(ValidationError):
        loglog_slope(x, y - 1.0)


def test_autocorrelation_white_noise():
    z = RngStream(11, 0).normal(40_000)
    lags, corr, stderr = autocorrelation(z, 20)
    assert np.array_equal(lags, np.arange(21))
    assert corr[0] == pytest.approx(1.0)
    assert np.max(np.abs(corr[1:])) < 0.03
    assert np.all(stderr[1:] > 0.0)


def test_autocorrelation_ar1_profile():
    # AR(1) with phi = 0.8 has corr[k] = 0.8^k
    rng = RngStream(11, 1)
    n = 200_000
    noise = rng.normal(n)
    x = np.empty(n)
    x[0] = noise[0]
    for i in range(1, n):
        x[i] = 0.8 * x[i - 1] + noise[i]
    _, corr, _ = autocorrelation(x, 10)
    np.testing.assert_allclose(corr, 0.8 ** np.arange(11), atol=0.02)


def test_autocorrelation_needs_long_series():
    with pytest.raises(InsufficientSampleError):
        autocorrelation(np.ones(99), 10)


def test_chi2_accepts_matching_reference():
    x = RngStream(5, 0).uniform(20_000)
    res = chi2_test(x, lambda t: np.ones_like(t), (0.0, 1.0), bins=32)
    assert res.dof == res.n_bins - 1
    assert res.p_value > 1e-3
    assert res.n_merged == 0
    assert int(res.observed.sum()) == 20_000
    np.testing.assert_allclose(res.expected, 20_000 / 32, rtol=1e-6)


def test_chi2_rejects_wrong_reference():
    x = RngStream(5, 1).uniform(20_000)
    res = chi2_test(x, lambda t: 2.0 * t, (0.0, 1.0), bins=32)
    assert res.p_value < 1e-6


def test_chi2_sample_size_guard():
    with pytest.raises(InsufficientSampleError):
        chi2_test(np.linspace(0.01, 0.99, 100), lambda t: np.ones_like(t),
                  (0.0, 1.0), bins=32)
