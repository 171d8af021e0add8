"""Microscopic velocity-exchange dynamics and its diffusive limit.

Each site carries an n-component velocity.  The noise has two pieces,
both exact isometries so kinetic energy is conserved to rounding:

* per bond, one Gaussian angle rotates every component pair
  (p_x[c], p_y[c]) simultaneously; the angle variance is calibrated so
  the per-bond mean-energy mixing weight per step equals dt exactly,
  which makes the ensemble energies follow the unit-rate discrete heat
  equation,
* per site, a tangential Gaussian kick renormalized back to the sphere
  |p| = const randomizes the direction without touching the energy.

Bond updates run in a randomized order refreshed every step from a
dedicated stream shared by all replicas; replica noise comes from
per-replica streams, so ensembles reproduce under any worker sharding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import ValidationError, VerificationError
from .sde import LatticeGraph
from .stats import FitResult, RngStream, fit_line

__all__ = [
    "VelocityLattice",
    "init_velocities",
    "bond_angle_sigma",
    "exchange_noise_step",
    "exchange_run",
    "current",
    "empirical_pairing",
    "binned_energy_profile",
    "DiffusiveResult",
    "diffusive_experiment",
    "closure_check",
    "HeatReference",
    "heat_reference_solve",
    "discrete_laplacian",
]

ORDER_STREAM = 2 ** 62 + 17  # reserved stream id for the shared bond order


@dataclass
class VelocityLattice:
    graph: LatticeGraph
    p: np.ndarray  # (n_sites, n_comp)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 2 or self.p.shape[0] != self.graph.n_sites:
            raise ValidationError("velocity array must be (n_sites, n_comp)")
        if not np.all(np.isfinite(self.p)):
            raise ValidationError("velocities must be finite")

    @property
    def site_energies(self) -> np.ndarray:
        """Kinetic energies u_x = |p_x|^2 / 2."""
        return 0.5 * np.sum(self.p * self.p, axis=1)

    @property
    def total_energy(self) -> float:
        return float(self.site_energies.sum())


def init_velocities(graph: LatticeGraph, u0, n_comp: int, rng: RngStream
                    ) -> VelocityLattice:
    """Velocities with per-site kinetic energy u0 and isotropic directions.

    ``u0`` is a callable on [0, 1) (evaluated at x / L) or an array of
    per-site energies.
    """
    L = graph.n_sites
    if callable(u0):
        u = np.asarray(u0(np.arange(L) / L), dtype=np.float64)
    else:
        u = np.asarray(u0, dtype=np.float64)
    if u.shape != (L,):
        raise ValidationError("initial energy profile must have one value per site")
    if np.any(u < 0):
        raise ValidationError("initial energies must be nonnegative")
    direc = rng.normal((L, n_comp))
    norms = np.sqrt(np.sum(direc * direc, axis=1))
    norms[norms == 0] = 1.0
    p = direc / norms[:, None] * np.sqrt(2.0 * u)[:, None]
    return VelocityLattice(graph, p)


def bond_angle_sigma(dt: float) -> float:
    """Angle standard deviation giving mean-energy mixing weight exactly dt.

    For angle ~ N(0, s^2) the expected sin^2 is (1 - exp(-2 s^2))/2;
    solving for weight dt requires dt < 1/2.
    """
    if not 0 < dt <= 0.01:
        raise ValidationError("exchange step needs 0 < dt <= 0.01")
    return math.sqrt(-0.5 * math.log1p(-2.0 * dt))


def exchange_noise_step(lattice: VelocityLattice, dt: float,
                        noise_rng: RngStream, order_rng: RngStream
                        ) -> VelocityLattice:
    """One step of the exchange noise (reference implementation).

    Draws angles then kicks sequentially from ``noise_rng``, so repeated
    calls advance the stream; the production path is :func:`exchange_run`,
    which consumes streams differently and is not step-compatible.
    """
    graph = lattice.graph
    nb = graph.n_bonds
    L = graph.n_sites
    n_comp = lattice.p.shape[1]
    sigma = bond_angle_sigma(dt)
    angles = sigma * noise_rng.normal((1, nb))
    xi = noise_rng.normal((1, L, n_comp))
    order = np.argsort(order_rng.uniform((1, nb)), axis=1).astype(np.int64)
    p = lattice.p.copy()
    _kernels.exchange_chunk(p, graph.bond_i, graph.bond_j,
                            np.cos(angles), np.sin(angles), order, xi,
                            math.sqrt(dt))
    return VelocityLattice(graph, p)


def exchange_run(graph: LatticeGraph, p: np.ndarray, dt: float,
                 n_steps: int, noise_rng: RngStream, order_rng: RngStream,
                 sample_steps: Sequence[int] = (),
                 chunk_steps: int = 4096):
    """Evolve one replica in place, recording site energies at the given
    step indices.  Returns (p, energies at samples as (n_samples, L)).

    ``order_rng`` must be positioned at step zero; all replicas of one
    experiment share its draws, so every worker regenerates the same
    order sequence.  Angle and kick noise come from child streams 1 and
    2 of ``noise_rng`` (fixed draws per step, so results do not depend
    on ``chunk_steps``); call this once per replica stream.
    """
    nb = graph.n_bonds
    L = graph.n_sites
    n_comp = p.shape[1]
    angle_rng = noise_rng.spawn(1)
    xi_rng = noise_rng.spawn(2)
    sigma = bond_angle_sigma(dt)
    site_amp = math.sqrt(dt)
    sample_steps = sorted(int(s) for s in sample_steps)
    if sample_steps and (sample_steps[0] < 0 or sample_steps[-1] > n_steps):
        raise ValidationError("sample steps must lie in [0, n_steps]")
    out = np.empty((len(sample_steps), L))
    si = 0
    while si < len(sample_steps) and sample_steps[si] == 0:
        out[si] = 0.5 * np.sum(p * p, axis=1)
        si += 1
    done = 0
    while done < n_steps:
        todo = min(chunk_steps, n_steps - done)
        angles = sigma * angle_rng.normal((todo, nb))
        xi = xi_rng.normal((todo, L, n_comp))
        order = np.argsort(order_rng.uniform((todo, nb)), axis=1).astype(np.int64)
        cos_b = np.cos(angles)
        sin_b = np.sin(angles)
        # split the chunk at sample points so snapshots land exactly
        lo = 0
        while lo < todo:
            hi = todo
            if si < len(sample_steps):
                hi = min(hi, sample_steps[si] - done)
            if hi > lo:
                _kernels.exchange_chunk(p, graph.bond_i, graph.bond_j,
                                        cos_b[lo:hi], sin_b[lo:hi],
                                        order[lo:hi], xi[lo:hi], site_amp)
                lo = hi
            while si < len(sample_steps) and sample_steps[si] == done + lo:
                out[si] = 0.5 * np.sum(p * p, axis=1)
                si += 1
        done += todo
    return p, out


def current(lattice: VelocityLattice, bond: int) -> float:
    """Energy current j = |p_j|^2 - |p_i|^2 across one bond."""
    graph = lattice.graph
    if not 0 <= bond < graph.n_bonds:
        raise ValidationError(f"bond index {bond} out of range")
    i = int(graph.bond_i[bond])
    j = int(graph.bond_j[bond])
    pi = lattice.p[i]
    pj = lattice.p[j]
    return float(np.dot(pj, pj) - np.dot(pi, pi))


def empirical_pairing(lattice: VelocityLattice, phi: Callable) -> float:
    """L^{-d} sum of phi(x/L) u_x, the empirical energy measure of phi."""
    L = lattice.graph.n_sites
    ys = np.arange(L) / L
    return float(np.mean(np.asarray(phi(ys)) * lattice.site_energies))


def binned_energy_profile(u: np.ndarray, n_bins: int) -> np.ndarray:
    L = u.shape[-1]
    if L % n_bins != 0:
        raise ValidationError(f"bin count {n_bins} must divide L={L}")
    return u.reshape(*u.shape[:-1], n_bins, L // n_bins).mean(axis=-1)


# ---------------------------------------------------------------------------
# heat reference


def discrete_laplacian(L: int, periodic: bool = True) -> np.ndarray:
    """Unit-rate nearest-neighbor Laplacian matrix.

    Matches the bond structure of ``LatticeGraph.chain``: the two-site
    ring has one bond, not two.
    """
    M = np.zeros((L, L))
    for x in range(L):
        neighbors = ((x - 1) % L, (x + 1) % L) if periodic else \
            tuple(y for y in (x - 1, x + 1) if 0 <= y < L)
        if periodic and L == 2:
            neighbors = neighbors[:1]
        for y in neighbors:
            M[x, y] += 1.0
            M[x, x] -= 1.0
    return M


@dataclass(frozen=True)
class HeatReference:
    kappa: float
    grid: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (n_times, n_grid)

    def sample_at(self, t_index: int, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64) % 1.0
        return np.interp(ys, self.grid, self.values[t_index], period=1.0)


def heat_reference_solve(u0: Callable, kappa: float, times,
                         grid_n: int = 512) -> HeatReference:
    """Spectral solution of u_t = kappa u_yy on the periodic unit interval.

    Post-checks conservation (to 1e-12 relative) and the maximum
    principle (to 1e-9 absolute slack for spectral ringing).
    """
    if grid_n < 256:
        raise ValidationError("heat solver grid needs at least 256 points")
    if kappa < 0:
        raise ValidationError("kappa must be nonnegative")
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    ys = np.arange(grid_n) / grid_n
    base = np.asarray(u0(ys), dtype=np.float64)
    spec = np.fft.rfft(base)
    k = np.arange(spec.size)
    vals = np.empty((times.size, grid_n))
    for i, t in enumerate(times):
        decay = np.exp(-kappa * (2.0 * np.pi * k) ** 2 * t)
        vals[i] = np.fft.irfft(spec * decay, n=grid_n)
    mass0 = base.mean()
    if mass0 != 0 and np.max(np.abs(vals.mean(axis=1) - mass0)) > 1e-12 * abs(mass0):
        raise VerificationError("heat solver failed mass conservation")
    slack = 1e-9 * max(1.0, float(np.max(np.abs(base))))
    if np.any(vals > base.max() + slack) or np.any(vals < base.min() - slack):
        raise VerificationError("heat solver violated the maximum principle")
    return HeatReference(float(kappa), ys, times, vals)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class DiffusiveResult:
    L: int
    n_bins: int
    replicas: int
    times_macro: np.ndarray
    bin_centers: np.ndarray
    profiles: np.ndarray       # (n_times, n_bins) ensemble means
    stderr: np.ndarray
    mode_amplitudes: np.ndarray
    kappa: float
    kappa_fit: FitResult | None
    diagnostics: dict = field(default_factory=dict)

    def rel_l2_error(self, ref: HeatReference, t_index: int) -> float:
        target = ref.sample_at(t_index, self.bin_centers)
        diff = self.profiles[t_index] - target
        return float(np.sqrt(np.mean(diff ** 2) / np.mean(target ** 2)))


def _replica_profiles(graph, u0_values, n_comp, dt, sample_steps, seed,
                      replica, n_steps, n_bins):
    rng = RngStream(seed, replica)
    order_rng = RngStream(seed, ORDER_STREAM)
    lat = init_velocities(graph, u0_values, n_comp, rng)
    _, snaps = exchange_run(graph, lat.p, dt, n_steps, rng, order_rng,
                            sample_steps)
    return binned_energy_profile(snaps, n_bins)


def diffusive_experiment(L: int, u0: Callable, times_macro, replicas: int,
                         seed: int, dt: float = 0.01, n_bins: int = 32,
                         n_comp: int = 3, map_tasks=None) -> DiffusiveResult:
    """Rescaled energy profiles of the exchange dynamics.

    Runs ``replicas`` independent copies to microscopic times L^2 t,
    bins site energies into ``n_bins`` blocks, and fits the diffusivity
    from the decay of the slowest cosine mode.  ``map_tasks`` may be an
    executor map (replica order is restored internally).
    """
    if L < 2 * n_bins or L % n_bins != 0:
        raise ValidationError("need L a multiple of n_bins with >= 2 sites per bin")
    times_macro = np.asarray(sorted(float(t) for t in times_macro))
    if times_macro[0] < 0:
        raise ValidationError("macroscopic times must be nonnegative")
    graph = LatticeGraph.chain(L, periodic=True)
    u0_values = np.asarray(u0(np.arange(L) / L), dtype=np.float64)
    sample_steps = [int(round(t * L * L / dt)) for t in times_macro]
    n_steps = max(sample_steps) if sample_steps else 0

    args = [(graph, u0_values, n_comp, dt, sample_steps, seed, r, n_steps,
             n_bins) for r in range(replicas)]
    if map_tasks is None:
        results = [_replica_profiles(*a) for a in args]
    else:
        results = list(map_tasks(_replica_profiles, args))
    stack = np.stack(results)  # (R, n_times, n_bins)
    profiles = stack.mean(axis=0)
    if replicas > 1:
        stderr = stack.std(axis=0, ddof=1) / math.sqrt(replicas)
    else:
        stderr = np.full_like(profiles, np.nan)

    centers = (np.arange(n_bins) + 0.5) / n_bins
    cosw = np.cos(2.0 * np.pi * centers)
    amps = 2.0 * (profiles * cosw[None, :]).mean(axis=1)
    amp_se = 2.0 * np.sqrt(((stderr * cosw[None, :]) ** 2).mean(axis=1)
                           / n_bins)
    usable = amps > 5.0 * amp_se
    kappa = math.nan
    fit = None
    if int(usable.sum()) >= 3:
        fit = fit_line(times_macro[usable], np.log(amps[usable]))
        kappa = -fit.slope / (4.0 * math.pi ** 2)
    return DiffusiveResult(L, n_bins, replicas, times_macro, centers,
                           profiles, stderr, amps, kappa, fit,
                           {"dt": dt, "n_comp": n_comp,
                            "amp_stderr": amp_se.tolist(),
                            "sample_steps": sample_steps})


def closure_check(L: int, u0_values: np.ndarray, times, replicas: int,
                  seed: int, dt: float = 1e-3, n_comp: int = 3):
    """Ensemble mean site energies against the discrete heat semigroup.

    Returns (times, ensemble means (n_times, L), stderr, oracle values).
    The oracle is expm(t Lap) u0 with the unit-rate Laplacian; the bond
    angle calibration makes the per-step mixing weight exactly dt, so
    the two agree up to Monte Carlo error and O(dt) order effects.
    """
    times = np.asarray(sorted(float(t) for t in times))
    graph = LatticeGraph.chain(L, periodic=True)
    u0_values = np.asarray(u0_values, dtype=np.float64)
    sample_steps = [int(round(t / dt)) for t in times]
    n_steps = max(sample_steps)
    acc = np.zeros((len(times), L))
    acc2 = np.zeros((len(times), L))
    # all replicas share the order stream; regenerate once per replica
    for r in range(replicas):
        rng = RngStream(seed, r)
        order_rng = RngStream(seed, ORDER_STREAM)
        lat = init_velocities(graph, u0_values, n_comp, rng)
        _, snaps = exchange_run(graph, lat.p, dt, n_steps, rng, order_rng,
                                sample_steps)
        acc += snaps
        acc2 += snaps * snaps
    mean = acc / replicas
    var = np.maximum(acc2 / replicas - mean ** 2, 0.0)
    stderr = np.sqrt(var / replicas)
    lap = discrete_laplacian(L, periodic=True)
    oracle = np.stack([expm(t * lap) @ u0_values for t in times])
    return times, mean, stderr, oracle
