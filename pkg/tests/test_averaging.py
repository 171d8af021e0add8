"""Averaged ODE, fluctuation statistics, decay and residence estimators."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from scalebridge.averaging import (FluctuationEnsemble, VarianceCurve,
                                   averaging_order, clt_compare,
                                   commitment_bands, correlation_decay,
                                   drift_equilibria, fluctuation_ensemble,
                                   residence_statistics, solve_averaged,
                                   theoretical_variance,
                                   wf_distributional_distance)
from scalebridge.dynamics import InitialLaw, make_preset
from scalebridge.errors import DegenerateVarianceError, ValidationError
from scalebridge.transfer import SrbProfile

TWO_PI = 2.0 * np.pi


def _synthetic(drift_fn, gk_fn):
    return SrbProfile.from_callables(drift_fn, gk_fn, n_nodes=128)


def test_solve_averaged_matches_scipy_ivp():
    prof = _synthetic(lambda z: np.sin(TWO_PI * z), lambda z: 1.0 + 0.0 * z)
    sol = solve_averaged(prof, 0.2, 2.0, dt=1e-3)
    ref = solve_ivp(lambda t, y: prof.drift(y[0]), (0.0, 2.0), [0.2],
                    rtol=1e-10, atol=1e-12, dense_output=True)
    assert sol(2.0) == pytest.approx(float(ref.sol(2.0)[0]), abs=1e-6)
    assert sol.final == pytest.approx(sol(2.0))
    assert abs(sol.max_residual()) < 1e-6


def test_solve_averaged_validates_inputs():
    prof = _synthetic(lambda z: 0.0 * z, lambda z: 1.0 + 0.0 * z)
    with pytest.raises(ValidationError):
        solve_averaged(prof, 0.0, 1.0, dt=0.1)
    with pytest.raises(ValidationError):
        solve_averaged(prof, 0.0, -1.0)


def test_variance_flat_profile_grows_linearly():
    prof = _synthetic(lambda z: 0.0 * z, lambda z: 1.0 + 0.0 * z)
    curve = theoretical_variance(prof, 0.0, [0.5, 1.5])
    assert curve.at(0.5) == pytest.approx(0.5, abs=1e-6)
    assert curve.at(1.5) == pytest.approx(1.5, abs=1e-6)
    with pytest.raises(ValidationError):
        curve.at(2.0)


def test_variance_at_sink_reaches_ou_stationary_value():
    # pinned at the sink of sin(2 pi z): linearization rate 2 pi
    prof = _synthetic(lambda z: np.sin(TWO_PI * z), lambda z: 1.0 + 0.0 * z)
    curve = theoretical_variance(prof, 0.5, [3.0])
    lam = TWO_PI
    expect = (1.0 - math.exp(-2.0 * lam * 3.0)) / (2.0 * lam)
    assert curve.at(3.0) == pytest.approx(expect, rel=1e-3)


def test_fluctuation_ensemble_shards_reproduce(doubling_profile):
    s = make_preset("doubling-pure", 1e-3)
    law = InitialLaw.uniform()
    avg = solve_averaged(doubling_profile, 0.0, 0.5)
    whole = fluctuation_ensemble(s, law, doubling_profile, 0.5, 200, 21,
                                 eval_times=[0.5], averaged=avg)
    head = fluctuation_ensemble(s, law, doubling_profile, 0.5, 100, 21,
                                eval_times=[0.5], averaged=avg)
    tail = fluctuation_ensemble(s, law, doubling_profile, 0.5, 100, 21,
                                eval_times=[0.5], averaged=avg,
                                stream_offset=100)
    assert np.array_equal(whole.samples,
                          np.vstack([head.samples, tail.samples]))
    assert whole.at(0.5).shape == (200,)
    with pytest.raises(ValidationError):
        whole.at(0.123)
    with pytest.raises(ValidationError):
        fluctuation_ensemble(s, law, doubling_profile, 0.5, 50, 21)


def test_clt_compare_gaussian_and_degenerate_paths():
    gen = np.random.default_rng(1)
    times = np.array([0.0, 1.0])
    z = gen.normal(0.0, math.sqrt(2.0), size=4000)
    ens = FluctuationEnsemble(1e-4, 4000, times,
                              np.column_stack([np.zeros(4000), z]), 0.0, None)
    curve = VarianceCurve(times, np.array([0.0, 2.0]), 0.0)
    res = clt_compare(ens, curve, 1.0)
    assert res.p_value > 1e-3
    assert res.empirical_var == pytest.approx(2.0, rel=0.1)
    assert not res.degenerate

    quiet = FluctuationEnsemble(1e-4, 4000, times, np.zeros((4000, 2)),
                                0.0, None)
    flat = VarianceCurve(times, np.array([0.0, 0.0]), 0.0)
    assert clt_compare(quiet, flat, 1.0).degenerate
    with pytest.raises(DegenerateVarianceError):
        clt_compare(ens, flat, 1.0)


def test_averaging_order_needs_three_epsilons(single_sink_profile):
    with pytest.raises(ValidationError):
        averaging_order(lambda e: make_preset("single-sink", e),
                        InitialLaw.uniform(), single_sink_profile,
                        [0.01, 0.02], 100, seed=0)


def test_drift_equilibria_classifies_zeros():
    prof = _synthetic(lambda z: np.sin(TWO_PI * z), lambda z: 1.0 + 0.0 * z)
    sinks, sources = drift_equilibria(prof)
    assert sinks.size == 1 and sources.size == 1
    assert sinks[0] == pytest.approx(0.5, abs=1e-6)
    assert sources[0] == pytest.approx(0.0, abs=1e-6)


def test_preset_profiles_have_advertised_well_counts(single_sink_profile,
                                                     double_sink_profile):
    sinks1, sources1 = drift_equilibria(single_sink_profile)
    assert sinks1.size == 1 and sources1.size == 1
    sinks2, sources2 = drift_equilibria(double_sink_profile)
    assert sinks2.size == 2 and sources2.size == 2


def test_commitment_bands_half_gap():
    lo, hi = commitment_bands([0.5], [0.0], fraction=0.5)
    assert lo[0] == pytest.approx(0.25)
    assert hi[0] == pytest.approx(0.75)
    with pytest.raises(ValidationError):
        commitment_bands([0.5], [0.0], fraction=1.5)


def test_correlation_decay_positive_rate():
    s = make_preset("single-sink", 0.08)
    est = correlation_decay(s, "sin-theta", "sin-theta", lag_max=120,
                            sample_count=60_000, burn_in=1000, seed=7)
    assert est.rate > 0.1
    assert not est.below_noise
    assert est.window[0] >= 1
    assert est.lags.size == est.correlations.size


def test_correlation_decay_rejects_unknown_observable():
    s = make_preset("single-sink", 0.08)
    with pytest.raises(ValidationError):
        correlation_decay(s, "no-such-observable", "sin-theta", lag_max=50,
                          sample_count=20_000, burn_in=100, seed=7)


def test_residence_bookkeeping_smoke(double_sink_profile):
    s = make_preset("double-sink", 0.05)
    st = residence_statistics(s, double_sink_profile, run_length=400_000,
                              seed=13)
    assert st.sinks.size == 2
    assert st.transitions > 50
    assert abs(int(st.visit_counts.sum()) - st.transitions) <= 1
    assert st.overall_mean_residence > 0.0
    assert np.all(st.mean_residence[st.visit_counts > 0] > 0.0)


def test_wf_compare_smoke(single_sink_profile):
    s = make_preset("single-sink", 0.005)
    r = wf_distributional_distance(s, InitialLaw.uniform(),
                                   single_sink_profile, t=0.5, K=400, seed=5)
    assert 0.0 <= r.ks <= 0.25
    assert r.stderr > 0.0
    assert r.sample_count == 400
    assert abs(r.map_mean - r.sde_mean) < 0.05
