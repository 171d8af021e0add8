"""Transfer operator layer: Ulam densities, autocorrelation variance sums,
tabulated slow-drift profiles."""

import numpy as np
import pytest

from scalebridge.dynamics import make_preset, make_system
from scalebridge.errors import StepRejectionError, ValidationError
from scalebridge.transfer import (SrbProfile, build_profile, density_l1,
                                  green_kubo_variance, srb_density,
                                  trajectory_density, ulam_matrix)

TWO_PI = 2.0 * np.pi


def test_doubling_srb_density_is_lebesgue():
    s = make_preset("doubling-pure", 0.01)
    rho = srb_density(ulam_matrix(s, 0.0, 256))
    assert np.max(np.abs(rho.values - 1.0)) < 1e-9


def test_ulam_matrix_validates_cell_count():
    s = make_preset("doubling-pure", 0.01)
    for bad in (100, 2, 2 ** 17):
        with pytest.raises(ValidationError):
            ulam_matrix(s, 0.0, bad)


def test_trajectory_density_uniform_for_doubling():
    s = make_preset("doubling-pure", 0.01)
    hist = trajectory_density(s, 0.0, 2_000_000, 64, seed=4)
    assert hist.mean() == pytest.approx(1.0, abs=1e-9)
    # MC noise on 64 bins at 2e6 steps is sigma ~ sqrt(64/2e6) = 0.0057
    assert np.max(np.abs(hist - 1.0)) < 0.03


def test_trajectory_density_validates_arguments():
    s = make_preset("doubling-pure", 0.01)
    with pytest.raises(ValidationError):
        trajectory_density(s, 0.0, 0, 64, seed=4)
    with pytest.raises(ValidationError):
        trajectory_density(s, 0.0, 100, 1, seed=4)


def test_kernel_and_generic_stepper_sample_same_measure():
    # the preset runs in the compiled kernel, the clone through the
    # generic python stepper; both histograms estimate the same SRB
    # density, so their gap is bounded by twice the MC noise
    eps = 0.01
    preset = make_preset("single-sink", eps)
    clone = make_system(
        lambda x, th: 2.0 * x + 0.05 * np.sin(TWO_PI * x),
        lambda x, th: (0.3 - np.sin(TWO_PI * th)
                       * (1.0 + 0.5 * np.cos(TWO_PI * x))
                       + 0.7 * np.cos(TWO_PI * x)),
        lambda x, th: 2.0 + 0.05 * TWO_PI * np.cos(TWO_PI * x),
        eps)
    a = trajectory_density(preset, 0.25, 400_000, 32, seed=9)
    b = trajectory_density(clone, 0.25, 400_000, 32, seed=9)
    assert density_l1(a, b) < 0.03


def test_green_kubo_doubling_is_half():
    s = make_preset("doubling-pure", 0.01)
    gk = green_kubo_variance(s, 0.3, n_cells=1024, m_max=10)
    assert gk.value == pytest.approx(0.5, abs=1e-9)
    assert gk.converged
    assert gk.truncation_m <= 2


def test_green_kubo_coboundary_vanishes():
    # omega = g(2x) - g(x) with g = cos(2 pi .) telescopes to zero variance
    s = make_system(
        lambda x, th: 2.0 * x,
        lambda x, th: np.cos(2.0 * TWO_PI * x) - np.cos(TWO_PI * x),
        lambda x, th: np.full_like(np.asarray(x, dtype=np.float64), 2.0),
        0.01)
    gk = green_kubo_variance(s, 0.0, n_cells=1024, m_max=12)
    assert abs(gk.value) < 0.01


def test_density_l1_shape_guard():
    with pytest.raises(ValidationError):
        density_l1(np.ones(8), np.ones(16))


def test_single_sink_profile_structure(single_sink_profile):
    prof = single_sink_profile
    assert prof.z_grid.size == 64
    assert prof.drift(0.0) == pytest.approx(prof.drift(1.0), abs=1e-12)
    zs = np.linspace(0.0, 1.0, 65)
    assert np.all(prof.gk_var(zs) > 0.0)
    assert np.all(prof.noise_sigma(zs) > 0.0)
    assert prof.sign_changes() == 2


def test_profile_from_callables_and_range_guard():
    prof = SrbProfile.from_callables(lambda z: np.sin(TWO_PI * z),
                                     lambda z: 1.0 + 0.0 * z)
    assert prof.drift(0.25) == pytest.approx(1.0, abs=1e-6)
    assert prof.gk_var(0.77) == pytest.approx(1.0, abs=1e-9)
    assert prof.sign_changes() == 2
    clipped = SrbProfile.from_callables(lambda z: z, lambda z: 1.0 + 0.0 * z,
                                        z_range=(0.0, 0.5), periodic=False)
    with pytest.raises(StepRejectionError):
        clipped.drift(0.9)


def test_build_profile_rejects_coarse_node_grid():
    with pytest.raises(ValidationError):
        build_profile(make_preset("single-sink", 0.01), n_nodes=8)
