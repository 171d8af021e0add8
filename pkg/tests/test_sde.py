"""Scalar SDE integrators, the lattice energy SDE, and the jump chain."""

import math

import numpy as np
import pytest

from scalebridge.errors import BlowUpError, ValidationError
from scalebridge.sde import (EnergyConfig, JumpModel, LatticeGraph, ScalarSde,
                             equilibrium_checks, equilibrium_sample,
                             euler_ensemble, euler_maruyama,
                             jump_equilibrium, jump_mode_series, jump_step,
                             kappa_M_estimate, lattice_sde_run, make_family,
                             reversible_drift, spectral_gap_probe)
from scalebridge.stats import RngStream, ks_distance, ks_p_value


def _const_diffusion(x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


def test_euler_zero_noise_is_exponential_decay():
    sde = ScalarSde(drift=lambda x: -x, diffusion=_const_diffusion,
                    noise_scale=0.0)
    times, path = euler_maruyama(sde, 1.0, 2.0, 1e-4, seed=0)
    assert times[-1] == pytest.approx(2.0)
    assert path[-1] == pytest.approx(math.exp(-2.0), abs=2e-4)


def test_euler_blow_up_guard():
    sde = ScalarSde(drift=lambda x: x, diffusion=_const_diffusion,
                    noise_scale=0.0, blow_up_bound=2.0)
    with pytest.raises(BlowUpError):
        euler_maruyama(sde, 1.0, 5.0, 1e-3, seed=0)


def test_euler_dt_validation():
    sde = ScalarSde(drift=lambda x: -x, diffusion=_const_diffusion)
    with pytest.raises(ValidationError):
        euler_maruyama(sde, 0.0, 1.0, 0.0, seed=0)
    with pytest.raises(ValidationError):
        euler_maruyama(sde, 0.0, 1.0, 0.5, seed=0, drift_lipschitz=100.0)


def test_euler_ensemble_ou_variance_and_sharding():
    sde = ScalarSde(drift=lambda x: -2.0 * x, diffusion=_const_diffusion)
    ends = euler_ensemble(sde, 1.0, 6.0, 1e-3, seed=11, n_samples=4000)
    assert ends.var() == pytest.approx(0.25, abs=0.03)
    head = euler_ensemble(sde, 1.0, 6.0, 1e-3, seed=11, n_samples=1500)
    tail = euler_ensemble(sde, 1.0, 6.0, 1e-3, seed=11, n_samples=2500,
                          stream_offset=1500)
    assert np.array_equal(ends, np.concatenate([head, tail]))


def test_chain_graph_shapes():
    ring = LatticeGraph.chain(6, periodic=True)
    assert ring.n_sites == 6 and ring.n_bonds == 6
    line = LatticeGraph.chain(6, periodic=False)
    assert line.n_bonds == 5
    for b in range(line.n_bonds):
        assert int(line.bond_j[b]) - int(line.bond_i[b]) == 1


def test_family_construction_and_shapes():
    geo = make_family("geodesic")
    assert geo.shape == pytest.approx(1.5)
    anh = make_family("anharmonic")
    assert anh.shape == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        make_family("no-such-family")


def test_family_derivative_identities():
    for fid in ("geodesic", "anharmonic"):
        fam = make_family(fid, A=1.1, n_star=4)
        u, v, h = 0.8, 1.7, 1e-6
        num = ((fam.b2(u + h, v) - fam.b2(u - h, v))
               - (fam.b2(u, v + h) - fam.b2(u, v - h))) / (2.0 * h)
        assert float(fam.db2(u, v)) == pytest.approx(float(num), rel=1e-5)
        # both families are linear in the smaller energy
        assert float(fam.b2_slope(u, v)) == pytest.approx(
            float(fam.b2(u, v)) / min(u, v), rel=1e-12)
        gamma = fam.shape - 1.0
        ident = float(fam.db2(u, v)) + gamma * float(fam.b2(u, v)) \
            * (1.0 / u - 1.0 / v)
        assert float(fam.drift(u, v)) == pytest.approx(ident, rel=1e-12)
        assert float(fam.drift(u, v)) == pytest.approx(
            -float(fam.drift(v, u)), rel=1e-12)


def test_anharmonic_drift_value():
    fam = make_family("anharmonic", A=0.8)
    assert float(fam.drift(1.0, 3.0)) == pytest.approx(1.6)
    a = reversible_drift(fam, beta=2.0)
    assert float(a(1.0, 1.0)) == pytest.approx(-float(a(1.0, 1.0)))


def test_equilibrium_sample_marginal_moments():
    g = LatticeGraph.chain(6, periodic=True)
    E = equilibrium_sample(g, make_family("geodesic"), 2.0, seed=3,
                           n_replicas=4000)
    assert E.shape == (4000, 6)
    assert np.all(E > 0.0)
    assert E.mean() == pytest.approx(1.5 / 2.0, rel=0.03)


def test_lattice_run_conserves_and_chunks_identically():
    g = LatticeGraph.chain(6, periodic=True)
    fam = make_family("anharmonic")
    E0 = equilibrium_sample(g, fam, 1.0, seed=5, n_replicas=64)
    run_a = lattice_sde_run(g, E0, fam, 1.0, dt=1e-3, n_steps=400, seed=5,
                            chunk_steps=64)
    run_b = lattice_sde_run(g, E0, fam, 1.0, dt=1e-3, n_steps=400, seed=5,
                            chunk_steps=2048)
    assert np.array_equal(run_a.energies, run_b.energies)
    rel = np.abs(run_a.energies.sum(axis=1) - E0.sum(axis=1)) / E0.sum(axis=1)
    assert rel.max() < 1e-10
    assert np.all(run_a.energies >= 0.0)


def test_lattice_run_replica_shards_reproduce():
    g = LatticeGraph.chain(6, periodic=True)
    fam = make_family("geodesic")
    E0 = equilibrium_sample(g, fam, 1.0, seed=8, n_replicas=32)
    full = lattice_sde_run(g, E0, fam, 1.0, dt=1e-3, n_steps=200, seed=8)
    lo = lattice_sde_run(g, E0[:16], fam, 1.0, dt=1e-3, n_steps=200, seed=8)
    hi = lattice_sde_run(g, E0[16:], fam, 1.0, dt=1e-3, n_steps=200, seed=8,
                         stream_offset=16)
    assert np.array_equal(full.energies,
                          np.vstack([lo.energies, hi.energies]))


def test_lattice_run_halves_steps_near_the_floor():
    # one near-zero site makes the full-dt proposal overshoot often; the
    # controller must recover by halving and keep every energy >= 0
    g = LatticeGraph.chain(4, periodic=True)
    fam = make_family("geodesic")
    E0 = np.ones((8, 4))
    E0[:, 1] = 2e-3
    run = lattice_sde_run(g, E0, fam, 1.0, dt=2e-3, n_steps=50, seed=1,
                          record_every=25)
    assert np.all(run.energies >= 0.0)
    assert run.floored_steps > 0 and run.halvings > 0
    assert run.snapshots is not None
    assert run.snapshots.shape == (3, 8, 4)
    assert run.snapshot_times is not None


def test_lattice_run_rejects_hopeless_step_size():
    # at energies ~1e-8 the noise cannot be halved under the floor within
    # the budget; the run must fail loudly rather than distort the law
    g = LatticeGraph.chain(4, periodic=True)
    E0 = np.full((8, 4), 1e-8)
    with pytest.raises(PositivityError):
        lattice_sde_run(g, E0, make_family("geodesic"), 1.0, dt=5e-3,
                        n_steps=50, seed=1)


def test_two_site_exchange_preserves_uniform_split():
    # anharmonic marginal is Exp, so u/(u+v) is uniform on (0, 1)
    g = LatticeGraph.chain(2, periodic=False)
    fam = make_family("anharmonic")
    E0 = equilibrium_sample(g, fam, 1.0, seed=9, n_replicas=600)
    run = lattice_sde_run(g, E0, fam, 1.0, dt=2e-3, n_steps=2500, seed=9)
    frac = run.energies[:, 0] / run.energies.sum(axis=1)
    d = ks_distance(frac, lambda t: np.clip(np.asarray(t), 0.0, 1.0))
    assert ks_p_value(d, 600) > 1e-3


def test_equilibrium_checks_smoke():
    g = LatticeGraph.chain(4, periodic=True)
    rep = equilibrium_checks(g, make_family("anharmonic"), beta=1.0, T=2.0,
                             n_replicas=800, seed=2)
    assert rep.chi2.p_value > 1e-4
    assert abs(rep.max_balance_z) < 6.0
    assert abs(rep.energy_drift) < 1e-10
    assert rep.n_samples == 800 * 4


def test_jump_step_conserves_energy_per_event():
    g = LatticeGraph.chain(8, periodic=True)
    model = JumpModel()
    cfg = jump_equilibrium(g, 8.0, seed=3)
    assert cfg.total == pytest.approx(8.0, abs=1e-12)
    rng = RngStream(3, 9)
    for _ in range(500):
        new, wait = jump_step(g, cfg, model, rng)
        assert wait > 0.0
        assert abs(new.total - cfg.total) <= 1e-13 * cfg.total
        assert np.all(new.energies >= 0.0)
        cfg = new


def test_jump_model_angle_density():
    flat = JumpModel()
    angles = flat.sample_angles(RngStream(1, 0), 10_000)
    assert np.all(np.abs(angles) <= math.pi)
    assert abs(angles.mean()) < 0.06
    shaped = JumpModel.from_density(
        lambda t: (1.0 + np.cos(t)) / (2.0 * math.pi))
    more = shaped.sample_angles(RngStream(1, 1), 20_000)
    assert np.mean(np.abs(more) < math.pi / 2) > 0.5
    with pytest.raises(ValidationError):
        JumpModel.from_density(lambda t: np.ones_like(t))


def test_jump_mode_series_relaxes_and_conserves():
    g = LatticeGraph.chain(8, periodic=True)
    start = EnergyConfig(1.0 + np.cos(2.0 * np.pi * np.arange(8) / 8))
    times, series, final = jump_mode_series(g, JumpModel(), start, T=60.0,
                                            sample_dt=0.5, seed=4)
    assert times.size == series.size
    assert abs(final.total - start.total) < 1e-10 * start.total
    assert abs(np.mean(series[-20:])) < 0.5 * abs(series[0])


def test_gap_probe_validations():
    with pytest.raises(ValidationError):
        spectral_gap_probe([4], JumpModel(), seed=0)
    with pytest.raises(ValidationError):
        spectral_gap_probe([1, 2], JumpModel(), seed=0)


def test_kappa_estimate_smoke():
    g = LatticeGraph.chain(8, periodic=True)
    res = kappa_M_estimate(g, make_family("geodesic"), 1.0, T=0.5,
                           n_replicas=4, seed=6, dt=2e-3, corr_stride=10,
                           n_static=20_000)
    assert math.isfinite(res.value)
    assert res.static_term > 0.0
    with pytest.raises(ValidationError):
        kappa_M_estimate(LatticeGraph.chain(8, periodic=False),
                         make_family("geodesic"), 1.0, T=0.5, n_replicas=4,
                         seed=6, n_static=1000)
