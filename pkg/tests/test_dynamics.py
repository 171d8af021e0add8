"""Skew-product layer: presets, certification, trajectories, the bit
register behind exact doubling."""

import math

import numpy as np
import pytest

from scalebridge.dynamics import (PRESET_NAMES, FastStepper, InitialLaw,
                                  ProductState, bit_word_count,
                                  circle_distance, ensemble_paths,
                                  make_preset, make_system, sample_initial,
                                  simulate_slow_path, step, wrap)
from scalebridge.errors import BudgetExceededError, ValidationError
from scalebridge.stats import RngStream

TWO_PI = 2.0 * math.pi


def test_wrap_and_circle_distance():
    assert wrap(1.25) == pytest.approx(0.25)
    assert wrap(-0.25) == pytest.approx(0.75)
    assert circle_distance(0.9, 0.1) == pytest.approx(0.2)
    assert circle_distance(0.1, 0.9) == pytest.approx(0.2)


def test_presets_construct_and_reject_junk():
    for name in PRESET_NAMES:
        s = make_preset(name, 0.01)
        assert s.epsilon == 0.01
        assert s.expansion_lambda > 1.0
        assert s.omega_bound > 0.0
    with pytest.raises(ValidationError):
        make_preset("no-such-preset", 0.01)
    with pytest.raises(ValidationError):
        make_preset("single-sink", 0.01, bogus=1.0)


def test_binary_shift_only_for_pure_doubling():
    assert make_preset("doubling-pure", 0.01).binary_shift
    assert make_preset("zero-average", 0.01).binary_shift
    assert not make_preset("single-sink", 0.01).binary_shift
    assert not make_preset("double-sink", 0.01).binary_shift


def test_step_wraps_both_coordinates():
    s = make_preset("doubling-pure", 0.125)
    out = step(s, ProductState(0.3, 0.0))
    assert out.x == pytest.approx(0.6)
    assert out.theta == pytest.approx(
        (0.125 * math.cos(TWO_PI * 0.3)) % 1.0)


def test_certificate_rejects_non_expanding_lift():
    with pytest.raises(ValidationError):
        make_system(lambda x, th: x + 0.1 * np.sin(TWO_PI * x),
                    lambda x, th: np.cos(TWO_PI * x),
                    lambda x, th: 1.0 + 0.1 * TWO_PI * np.cos(TWO_PI * x),
                    0.01)
    with pytest.raises(ValidationError):
        make_system(lambda x, th: 2.0 * x,
                    lambda x, th: np.cos(TWO_PI * x),
                    lambda x, th: np.full_like(np.asarray(x, float), 2.0),
                    -0.01)


def test_initial_law_requires_unit_mass():
    with pytest.raises(ValidationError):
        InitialLaw(lambda x: 2.0 * np.ones_like(np.asarray(x, dtype=float)))
    with pytest.raises(ValidationError):
        InitialLaw(lambda x: np.cos(TWO_PI * np.asarray(x, dtype=float)))


def test_initial_law_sampling_matches_density():
    # rho(x) = 1 + 0.5 sin(2 pi x): mean of x is 1/2 - 1/(4 pi)
    law = InitialLaw(lambda x: 1.0 + 0.5 * np.sin(TWO_PI * np.asarray(x)))
    xs = law.sample_x(RngStream(2, 0), size=100_000)
    assert abs(xs.mean() - (0.5 - 1.0 / (4.0 * math.pi))) < 0.005


def test_sample_initial_scalar_and_batch_agree():
    law = InitialLaw.uniform(theta0=0.4)
    st = sample_initial(law, RngStream(0, 0))
    assert isinstance(st, ProductState) and st.theta == 0.4
    xs, ths = sample_initial(law, RngStream(0, 0), size=8)
    assert xs.shape == (8,) and np.all(ths == 0.4)
    assert xs[0] == pytest.approx(st.x)


def test_slow_path_shape_increments_and_budget(uniform_law):
    s = make_preset("single-sink", 0.01)
    path = simulate_slow_path(s, uniform_law, 0.5, seed=2)
    assert path.times.shape == path.values.shape == (51,)
    assert path.times[-1] == pytest.approx(0.5)
    steps = np.abs(np.diff(path.values))
    assert steps.max() <= 0.01 * s.omega_bound + 1e-15
    with pytest.raises(BudgetExceededError):
        simulate_slow_path(s, uniform_law, 0.5, seed=2, max_steps=10)
    with pytest.raises(ValidationError):
        simulate_slow_path(s, uniform_law, -1.0, seed=2)


def test_register_tracks_float_doubling_while_bits_last():
    # the register's top mantissa bits equal exact float doubling of x0
    s = make_preset("doubling-pure", 0.01)
    rng = RngStream(6, 0)
    x0 = float(rng.uniform())
    words = rng.bit_words((1, bit_word_count(30)))
    stepper = FastStepper(s, np.array([x0]), words)
    x_float = x0
    for n in range(20):
        stepper.step(0.0)
        x_float = (2.0 * x_float) % 1.0
        assert abs(float(stepper.x[0]) - x_float) < 2.0 ** (n - 50)


def test_ensemble_paths_partition_invariant(uniform_law):
    s = make_preset("single-sink", 0.02)
    times = [0.25, 0.5]
    full, _ = ensemble_paths(s, uniform_law, 0.5, seed=3, n_samples=12,
                             eval_times=times)
    head, _ = ensemble_paths(s, uniform_law, 0.5, seed=3, n_samples=5,
                             eval_times=times)
    tail, _ = ensemble_paths(s, uniform_law, 0.5, seed=3, n_samples=7,
                             eval_times=times, stream_offset=5)
    assert np.array_equal(full, np.vstack([head, tail]))


def test_zero_average_slow_coordinate_stays_put():
    s = make_preset("zero-average", 1e-3)
    law = InitialLaw.uniform(theta0=0.2)
    vals, _ = ensemble_paths(s, law, 1.0, seed=8, n_samples=64,
                             eval_times=[1.0])
    assert np.median(np.abs(vals[:, 0] - 0.2)) < 0.2
