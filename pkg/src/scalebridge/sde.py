"""Stochastic integrators: scalar SDEs, the lattice energy SDE with
reversible drift, the energy-rotation jump process, and the transport
coefficient estimate built from them.

The lattice drift is not taken from any asymptotic display: it is
derived from the bond diffusion b^2 and the product equilibrium density
so that the bond generator is exactly (1/h) D [h b^2 D] with
D = d/du - d/dv.  That construction forces the noise amplitude
sqrt(2 b^2) and makes the equilibrium Gamma law invariant and the
dynamics reversible by construction; the inverse temperature cancels
from the drift because every bond update conserves u + v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from scipy.special import gammaincinv

from . import _kernels
from .errors import (AsymmetryError, BlowUpError, BudgetExceededError,
                     PositivityError, ValidationError)
from .stats import (Chi2Result, FitResult, RngStream, autocorrelation,
                    chi2_test, fit_line)

__all__ = [
    "ScalarSde",
    "euler_maruyama",
    "euler_ensemble",
    "LatticeGraph",
    "EnergyConfig",
    "CoefficientFamily",
    "make_family",
    "reversible_drift",
    "equilibrium_sample",
    "lattice_sde_run",
    "LatticeRunResult",
    "BalanceCheck",
    "EquilibriumReport",
    "equilibrium_checks",
    "JumpModel",
    "jump_step",
    "jump_equilibrium",
    "jump_mode_series",
    "GapProbeResult",
    "spectral_gap_probe",
    "KappaResult",
    "kappa_M_estimate",
    "FAMILY_IDS",
]


# ---------------------------------------------------------------------------
# scalar SDEs


@dataclass(frozen=True)
class ScalarSde:
    """dX = drift(X) dt + noise_scale * diffusion(X) dB."""

    drift: Callable
    diffusion: Callable
    noise_scale: float = 1.0
    blow_up_bound: float = 1e6

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be nonnegative")


def _check_dt(dt, drift_lipschitz):
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if drift_lipschitz is not None:
        cap = 1e-3 * max(1.0, 1.0 / max(drift_lipschitz, 1e-300))
        if dt > cap * (1 + 1e-12):
            raise ValidationError(
                f"dt={dt} exceeds stability cap {cap:.3e} for the given "
                f"drift Lipschitz bound")


def euler_maruyama(sde: ScalarSde, x0: float, T: float, dt: float, seed: int,
                   stream: int = 0, drift_lipschitz: float | None = None):
    """Single Euler-Maruyama path; returns (times, values)."""
    _check_dt(dt, drift_lipschitz)
    n = int(math.ceil(T / dt - 1e-12))
    noise = RngStream(seed, stream).normal(n)
    times = np.linspace(0.0, n * dt, n + 1)
    path = np.empty(n + 1)
    x = float(x0)
    path[0] = x
    sq = math.sqrt(dt)
    for k in range(n):
        x = x + sde.drift(x) * dt \
            + sde.noise_scale * sde.diffusion(x) * sq * noise[k]
        if abs(x) > sde.blow_up_bound:
            raise BlowUpError(f"path left [-{sde.blow_up_bound}, "
                              f"{sde.blow_up_bound}] at step {k}")
        path[k + 1] = x
    return times, path


def euler_ensemble(sde: ScalarSde, x0: float, T: float, dt: float, seed: int,
                   n_samples: int, stream_offset: int = 0,
                   drift_lipschitz: float | None = None,
                   block: int = 1024) -> np.ndarray:
    """Endpoints of n_samples independent paths.

    Sample k draws its Gaussian increments from stream
    (seed, stream_offset + k), so any contiguous sharding of samples
    reproduces the same endpoints.
    """
    _check_dt(dt, drift_lipschitz)
    n = int(math.ceil(T / dt - 1e-12))
    out = np.empty(n_samples)
    sq = math.sqrt(dt)
    for lo in range(0, n_samples, block):
        hi = min(lo + block, n_samples)
        noise = np.empty((hi - lo, n))
        for k in range(lo, hi):
            noise[k - lo] = RngStream(seed, stream_offset + k).normal(n)
        x = np.full(hi - lo, float(x0))
        for step in range(n):
            x = x + sde.drift(x) * dt \
                + sde.noise_scale * sde.diffusion(x) * sq * noise[:, step]
        if np.any(np.abs(x) > sde.blow_up_bound):
            raise BlowUpError("ensemble path left the certified range")
        out[lo:hi] = x
    return out


# ---------------------------------------------------------------------------
# lattice graph and energy configurations

# stream id reserved for the shared bond-sweep order, far outside any
# replica range so workers can regenerate it without collisions
_ORDER_STREAM = 2 ** 62 + 29


@dataclass(frozen=True)
class LatticeGraph:
    dimension: int
    side: int
    periodic: bool
    bond_i: np.ndarray
    bond_j: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.side ** self.dimension

    @property
    def n_bonds(self) -> int:
        return self.bond_i.size

    @classmethod
    def chain(cls, L: int, periodic: bool = True) -> "LatticeGraph":
        if L < 1:
            raise ValidationError("chain needs at least one site")
        if periodic and L >= 2:
            i = np.arange(L, dtype=np.int64)
            j = (i + 1) % L
            if L == 2:
                # avoid the doubled bond 0-1, 1-0
                i, j = i[:1], j[:1]
        elif L >= 2:
            i = np.arange(L - 1, dtype=np.int64)
            j = i + 1
        else:
            i = np.empty(0, dtype=np.int64)
            j = np.empty(0, dtype=np.int64)
        return cls(1, L, periodic, i, j)


@dataclass
class EnergyConfig:
    energies: np.ndarray

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=np.float64)
        if np.any(self.energies < 0):
            raise ValidationError("site energies must be nonnegative")
        if not np.all(np.isfinite(self.energies)):
            raise ValidationError("site energies must be finite")

    @property
    def total(self) -> float:
        return float(self.energies.sum())


# ---------------------------------------------------------------------------
# coefficient families and the generator-derived drift

FAMILY_IDS = ("geodesic", "anharmonic")


@dataclass(frozen=True)
class CoefficientFamily:
    """Bond diffusion b^2 plus the equilibrium exponent it pairs with.

    The per-site equilibrium factor is u^gamma e^(-beta u), i.e. a Gamma
    law with shape gamma + 1; gamma = n_star/2 - 1 for the geodesic
    family and 0 for the anharmonic one.
    """

    family_id: str
    A: float
    n_star: int
    gamma: float

    def __post_init__(self):
        if self.family_id not in FAMILY_IDS:
            raise ValidationError(f"family must be one of {FAMILY_IDS}")
        if self.A <= 0:
            raise ValidationError("amplitude A must be positive")
        if self.family_id == "geodesic" and self.n_star < 3:
            raise ValidationError(
                "geodesic family needs n_star >= 3 (n_star = 2 excluded)")

    @property
    def shape(self) -> float:
        return self.gamma + 1.0

    def b2(self, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if self.family_id == "anharmonic":
            return self.A * u * v
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        return self.A * lo / np.sqrt(2.0 * np.maximum(hi, 1e-300))

    def db2(self, u, v):
        """D[b^2] with D = d/du - d/dv, the derivative along the noise
        direction (u + v is conserved).  Antisymmetric; the geodesic
        kink at u = v takes the midpoint value 0."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if self.family_id == "anharmonic":
            return self.A * (v - u)

        def half(lo, hi):
            # valid for lo < hi
            s = np.sqrt(2.0 * np.maximum(hi, 1e-300))
            return self.A * (2.0 * hi + lo) / s ** 3

        return np.where(u < v, half(u, v),
                        np.where(u > v, -half(v, u), 0.0))

    def b2_slope(self, u, v):
        """d b^2 / d min(u,v) at fixed max(u,v).  Both families are
        exactly linear in the smaller energy, so this is also b^2/min;
        it sets the squared-Bessel scale of the zero-energy boundary."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        hi = np.maximum(u, v)
        if self.family_id == "anharmonic":
            return self.A * hi
        return self.A / np.sqrt(2.0 * np.maximum(hi, 1e-300))

    def drift(self, u, v):
        """Generator-derived bond drift; antisymmetric by construction.

        a = D[b^2] + gamma b^2 (1/u - 1/v) with D = d/du - d/dv; the
        singular 1/u factor cancels symbolically against b^2, so the
        implementation stays finite at zero energy.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if self.family_id == "anharmonic":
            return self.A * (v - u)

        def half(lo, hi):
            # valid for lo <= hi
            inv = 1.0 / np.sqrt(2.0 * np.maximum(hi, 1e-300))
            ratio = lo / np.maximum(hi, 1e-300)
            return self.A * inv * (1.0 + 0.5 * ratio
                                   + self.gamma * (1.0 - ratio))

        return np.where(u < v, half(u, v),
                        np.where(u > v, -half(v, u), 0.0))


def make_family(family_id: str, A: float = 1.0, n_star: int = 3
                ) -> CoefficientFamily:
    if family_id == "geodesic":
        return CoefficientFamily("geodesic", float(A), int(n_star),
                                 n_star / 2.0 - 1.0)
    if family_id == "anharmonic":
        return CoefficientFamily("anharmonic", float(A), int(n_star), 0.0)
    raise ValidationError(f"family must be one of {FAMILY_IDS}")


def reversible_drift(family: CoefficientFamily, beta: float,
                     check_grid: int = 100) -> Callable:
    """Bond drift paired with the equilibrium density at inverse
    temperature beta.

    beta cancels exactly (bond updates conserve u + v, so the e^(-beta u)
    factors contribute opposite derivative terms); it is kept in the
    signature as the model parameter the drift is reversible against.
    The antisymmetry a(u, v) = -a(v, u) is verified on a grid.
    """
    if beta <= 0:
        raise ValidationError("beta must be positive")
    a = family.drift
    grid = np.linspace(0.01, 5.0 / beta, check_grid)
    U, V = np.meshgrid(grid, grid)
    worst = float(np.max(np.abs(a(U, V) + a(V, U))))
    if worst > 1e-10:
        raise AsymmetryError(
            f"drift antisymmetry defect {worst:.3e} exceeds 1e-10")
    return a


def equilibrium_sample(graph: LatticeGraph, family: CoefficientFamily,
                       beta: float, seed: int, stream: int = 0,
                       n_replicas: int | None = None):
    """Product Gamma(shape, beta) equilibrium draws.

    Returns an EnergyConfig, or an (n_replicas, n_sites) array when
    ``n_replicas`` is given.
    """
    if beta <= 0:
        raise ValidationError("beta must be positive")
    rng = RngStream(seed, stream)
    if n_replicas is None:
        draws = rng.gamma(family.shape, graph.n_sites) / beta
        return EnergyConfig(draws)
    draws = rng.gamma(family.shape, (int(n_replicas), graph.n_sites)) / beta
    return draws


@dataclass(frozen=True)
class LatticeRunResult:
    energies: np.ndarray          # (R, n_sites) final configurations
    snapshots: np.ndarray | None  # (n_snap, R, n_sites)
    snapshot_times: np.ndarray | None
    halvings: int
    floored_steps: int
    dt: float
    n_steps: int


def lattice_sde_run(graph: LatticeGraph, energies0: np.ndarray,
                    family: CoefficientFamily, beta: float, dt: float,
                    n_steps: int, seed: int, stream_offset: int = 0,
                    record_every: int = 0, floor: float = 1e-12,
                    max_halvings: int = 40, chunk_steps: int = 2048
                    ) -> LatticeRunResult:
    """Sequential bond sweeps in a shared random order, over an ensemble
    of replicas.

    Each step draws a bond order (one permutation, shared by every
    replica) and applies to each bond in turn
    +-[a dt + sqrt(2 b^2 dt) Z + (1/2) D[b^2] dt (Z^2 - 1)
       + (1/2) sign(v - u) (b^2/min) dt (Y - E[Y])]
    on its endpoints, with Z standard normal and Y chi-squared on
    2 gamma + 1 dof.  The last two terms cost nothing in the bulk (mean
    zero, variance O(dt^2)); near zero energy each bond is a squared
    Bessel process of dimension 2(gamma+1), whose exact step is
    (sqrt(u) + sigma Z)^2 + sigma^2 Y, and they reproduce it.  A plain
    Gaussian update parks Y at its mean and visibly depletes the
    lowest-energy bin of the equilibrium marginal at 1e5 samples.

    The sweep is sequential rather than simultaneous for the same
    reason: updating all bonds from the pre-step configuration lets the
    two bonds at a near-zero site replenish it independently, and the
    sum of two independent chi-squared replenishments vanishes
    quadratically at zero where the true law vanishes linearly.  One
    bond at a time, each update is boundary-exact for its own pair, and
    every sweep preserves the product equilibrium factor by factor; the
    random order symmetrizes the O(dt) splitting remainder.

    A bond whose proposal would push an endpoint below ``floor`` redoes
    that bond from a dedicated retry stream at half the step size (two
    sub-updates), up to ``max_halvings`` halvings.  Replica r draws
    from stream (seed, stream_offset + r) and the bond order from its
    own reserved stream, so results are independent of replica sharding
    and of ``chunk_steps``.
    """
    if dt <= 0 or dt > 0.1:
        raise ValidationError("lattice SDE step must lie in (0, 0.1]")
    drift = reversible_drift(family, beta)
    b2 = family.b2
    db2 = family.db2
    slope = family.b2_slope
    E = np.array(energies0, dtype=np.float64, copy=True)
    if E.ndim == 1:
        E = E[None, :]
    R, n_sites = E.shape
    bi, bj = graph.bond_i, graph.bond_j
    nb = graph.n_bonds
    if nb == 0:
        raise ValidationError("graph has no bonds")

    # transverse boundary variable: near zero energy each bond is a
    # squared Bessel process of dimension 2(gamma+1), whose exact step
    # is (sqrt(u) + sigma Z)^2 + sigma^2 Y with Y ~ chi^2 on 2 gamma + 1
    # dof.  Gaussian-only schemes freeze Y at its mean and measurably
    # deplete the lowest-energy bin of the equilibrium marginal.
    y_mean = 2.0 * family.gamma + 1.0
    if family.gamma == 0.0:
        def y_sample(rng, size):
            return rng.normal(size) ** 2
    elif family.gamma == 0.5:
        def y_sample(rng, size):
            return 2.0 * rng.exponential(size)
    else:
        def y_sample(rng, size):
            return 2.0 * rng.gamma(family.gamma + 0.5, size)

    retry_rngs = [None] * R

    def bond_kick(u, v, dt_cur, z, y):
        return drift(u, v) * dt_cur \
            + np.sqrt(2.0 * b2(u, v) * dt_cur) * z \
            + 0.5 * db2(u, v) * dt_cur * (z * z - 1.0) \
            + 0.5 * np.sign(v - u) * slope(u, v) * dt_cur * (y - y_mean)

    def bond_substep(row, b, dt_cur, budget, r):
        # advance one bond of one replica by dt_cur with fresh retry
        # noise, halving on floor violations; returns halvings used
        if retry_rngs[r] is None:
            retry_rngs[r] = RngStream(seed, stream_offset + r).spawn(1)
        u = row[bi[b]]
        v = row[bj[b]]
        z = retry_rngs[r].normal()
        y = y_sample(retry_rngs[r], None)
        kick = bond_kick(u, v, dt_cur, z, y)
        if u + kick >= floor and v - kick >= floor:
            row[bi[b]] += kick
            row[bj[b]] -= kick
            return 0
        if budget <= 0:
            raise PositivityError(
                f"replica {r}: positivity not restored after "
                f"{max_halvings} halvings (dt far too large)")
        used = 1 + bond_substep(row, b, 0.5 * dt_cur, budget - 1, r)
        used += bond_substep(row, b, 0.5 * dt_cur, budget - used, r)
        return used

    def bond_halve(row, b, r):
        # the full-dt proposal already floored: go straight to two
        # half-updates, per the step-halving controller
        used = 1 + bond_substep(row, b, 0.5 * dt, max_halvings - 1, r)
        used += bond_substep(row, b, 0.5 * dt, max_halvings - used, r)
        return used

    snaps = []
    snap_times = []
    halvings = 0
    floored = 0
    step_global = 0
    if record_every:
        snaps.append(E.copy())
        snap_times.append(0.0)
    main_rngs = [RngStream(seed, stream_offset + r) for r in range(R)]
    # boundary variables come from a spawned child so the main stream
    # keeps one normal per bond-step and chunking stays invisible
    aux_rngs = [RngStream(seed, stream_offset + r).spawn(2)
                for r in range(R)]
    order_rng = RngStream(seed, _ORDER_STREAM)
    chunk = max(1, min(chunk_steps, int(2e7 / max(R * nb, 1))))
    while step_global < n_steps:
        todo = min(chunk, n_steps - step_global)
        noise = np.empty((R, todo, nb))
        ys = np.empty((R, todo, nb))
        for r in range(R):
            noise[r] = main_rngs[r].normal((todo, nb))
            ys[r] = y_sample(aux_rngs[r], (todo, nb))
        orders = np.argsort(order_rng.uniform((todo, nb)), axis=1)
        for s in range(todo):
            for b in orders[s]:
                u = E[:, bi[b]]
                v = E[:, bj[b]]
                kick = bond_kick(u, v, dt, noise[:, s, b], ys[:, s, b])
                pu = u + kick
                pv = v - kick
                bad = np.nonzero((pu < floor) | (pv < floor))[0]
                if bad.size:
                    ok = (pu >= floor) & (pv >= floor)
                    E[ok, bi[b]] = pu[ok]
                    E[ok, bj[b]] = pv[ok]
                    for r in bad:
                        floored += 1
                        halvings += bond_halve(E[r], b, r)
                else:
                    E[:, bi[b]] = pu
                    E[:, bj[b]] = pv
            step_global += 1
            if record_every and step_global % record_every == 0:
                snaps.append(E.copy())
                snap_times.append(step_global * dt)
    snapshots = np.array(snaps) if snaps else None
    times = np.array(snap_times) if snaps else None
    return LatticeRunResult(E, snapshots, times, halvings, floored,
                            dt, n_steps)


@dataclass(frozen=True)
class BalanceCheck:
    """One time-reversal asymmetry E[f(0)g(t)] - E[g(0)f(t)]."""

    pair: tuple[str, str]
    lag: float
    asymmetry: float
    stderr: float

    @property
    def z(self) -> float:
        return self.asymmetry / self.stderr if self.stderr > 0 else np.inf


@dataclass(frozen=True)
class EquilibriumReport:
    family_id: str
    beta: float
    chi2: Chi2Result
    balance: tuple[BalanceCheck, ...]
    max_balance_z: float
    energy_drift: float
    halvings: int
    n_samples: int


def equilibrium_checks(graph: LatticeGraph, family: CoefficientFamily,
                       beta: float, T: float, n_replicas: int, seed: int,
                       dt: float = 2e-3, lag_times=(0.1, 1.0),
                       bins: int = 32, tail_mass: float = 1e-7
                       ) -> EquilibriumReport:
    """Invariance and reversibility diagnostics from an equilibrium start.

    Runs ``n_replicas`` independent copies for time ``T`` and reports

      * a chi-squared test of the pooled final site energies against the
        product marginal (Gamma with the family's shape, rate ``beta``),
      * the time-reversal asymmetries E[f(E(0)) g(E(t))] -
        E[g(E(0)) f(E(t))] at each lag in ``lag_times``, for f, g among
        the first site energy, its square, and the product of the first
        two site energies, with per-replica standard errors,
      * the worst relative total-energy drift over replicas.

    At stationarity and under reversibility every asymmetry is zero in
    expectation, so |asymmetry| should sit within a few stderr.
    """
    if T <= 0:
        raise ValidationError("T must be positive")
    if graph.n_sites < 2:
        raise ValidationError("balance observables need at least 2 sites")
    n_steps = int(round(T / dt))
    lag_steps = [int(round(t / dt)) for t in lag_times]
    for t, s in zip(lag_times, lag_steps):
        if s < 1 or abs(s * dt - t) > 1e-9 * max(1.0, t):
            raise ValidationError(f"lag {t} is not a positive multiple "
                                  f"of dt={dt}")
        if s > n_steps:
            raise ValidationError(f"lag {t} exceeds the run length {T}")
    record_every = math.gcd(*lag_steps) if lag_steps else 0

    E0 = equilibrium_sample(graph, family, beta, seed, stream=7,
                            n_replicas=n_replicas)
    run = lattice_sde_run(graph, E0, family, beta, dt, n_steps, seed,
                          stream_offset=10_000, record_every=record_every)

    upper = float(gammaincinv(family.shape, 1.0 - tail_mass)) / beta
    chi2 = chi2_test(run.energies.ravel(),
                     lambda u: u ** family.gamma * np.exp(-beta * u),
                     (0.0, upper), bins=bins)

    def observables(snap):
        return {"u0": snap[:, 0],
                "u0^2": snap[:, 0] ** 2,
                "u0 u1": snap[:, 0] * snap[:, 1]}

    obs0 = observables(run.snapshots[0])
    names = list(obs0)
    checks = []
    for t, s in zip(lag_times, lag_steps):
        snap = run.snapshots[s // record_every]
        obst = observables(snap)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                f, g = names[i], names[j]
                d = obs0[f] * obst[g] - obs0[g] * obst[f]
                checks.append(BalanceCheck(
                    (f, g), float(t), float(d.mean()),
                    float(d.std(ddof=1) / math.sqrt(d.size))))

    tot0 = run.snapshots[0].sum(axis=1)
    drift = float(np.max(np.abs(run.energies.sum(axis=1) - tot0) / tot0))
    max_z = max(abs(c.z) for c in checks)
    return EquilibriumReport(family.family_id, beta, chi2, tuple(checks),
                             max_z, drift, run.halvings,
                             int(run.energies.size))


# ---------------------------------------------------------------------------
# jump process


@dataclass(frozen=True)
class JumpModel:
    """Unit-rate bond clocks with rotation angles drawn from a density on
    [-pi, pi] (uniform by default)."""

    angle_ppf: Callable | None = None  # maps (0,1) uniforms to angles

    def sample_angles(self, rng: RngStream, size) -> np.ndarray:
        u = rng.uniform(size)
        if self.angle_ppf is None:
            return (u - 0.5) * (2.0 * math.pi)
        return self.angle_ppf(u)

    @classmethod
    def from_density(cls, density: Callable, n_grid: int = 4097
                     ) -> "JumpModel":
        grid = np.linspace(-math.pi, math.pi, n_grid)
        vals = np.asarray(density(grid), dtype=np.float64)
        if np.any(vals < 0):
            raise ValidationError("angle density must be nonnegative")
        cdf = np.concatenate([[0.0], np.cumsum(
            0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))])
        if abs(cdf[-1] - 1.0) > 1e-8:
            raise ValidationError(
                f"angle density mass {cdf[-1]:.10f} != 1")
        cdf /= cdf[-1]
        return cls(angle_ppf=lambda u: np.interp(u, cdf, grid))


def jump_step(graph: LatticeGraph, config: EnergyConfig, model: JumpModel,
              rng: RngStream):
    """One exponential-clock event; returns (new config, elapsed time)."""
    nb = graph.n_bonds
    if nb == 0:
        raise ValidationError("graph has no bonds")
    wait = float(rng.exponential()) / nb
    b = int(rng.integers(nb))
    angle = float(model.sample_angles(rng, None))
    E = config.energies.copy()
    i, j = int(graph.bond_i[b]), int(graph.bond_j[b])
    si, sj = math.sqrt(E[i]), math.sqrt(E[j])
    c, s = math.cos(angle), math.sin(angle)
    E[i] = (c * si + s * sj) ** 2
    E[j] = (-s * si + c * sj) ** 2
    return EnergyConfig(E), wait


def jump_equilibrium(graph: LatticeGraph, total_energy: float, seed: int,
                     stream: int = 0) -> EnergyConfig:
    """Uniform draw on the energy sphere (the jump chain's equilibrium).

    Every bond rotation preserves the squared norm of the square-root
    coordinates, and uniform angles make the uniform sphere measure
    invariant, so the equilibrium energies are the normalized squares of
    a standard Gaussian vector.
    """
    g = RngStream(seed, stream).normal(graph.n_sites)
    s2 = g * g
    s2 *= total_energy / s2.sum()
    return EnergyConfig(s2)


def jump_mode_series(graph: LatticeGraph, model: JumpModel,
                     config: EnergyConfig, T: float, sample_dt: float,
                     seed: int, stream: int = 0):
    """Slowest-Fourier-mode time series m(t) = sum cos(2 pi x / L) E_x.

    Returns (sample times, series, final config).  Event buffers are
    drawn in one shot with a safety margin and extended deterministically
    if exhausted.
    """
    L = graph.n_sites
    nb = graph.n_bonds
    if nb == 0:
        raise ValidationError("graph has no bonds")
    if sample_dt <= 0 or T <= 0:
        raise ValidationError("T and sample_dt must be positive")
    n_samples = int(T / sample_dt) + 1
    weights = np.cos(2.0 * np.pi * np.arange(L) / L)
    E = config.energies.copy()
    mean_events = T * nb
    cap = int(mean_events + 10.0 * math.sqrt(mean_events) + 1000)
    for _ in range(8):
        rng = RngStream(seed, stream)
        waits = rng.exponential(cap) / nb
        bonds = rng.integers(nb, size=cap).astype(np.int64)
        angles = model.sample_angles(rng, cap)
        out = np.empty(n_samples)
        work = E.copy()
        consumed = _kernels.jump_mode_series(work, waits, bonds, angles,
                                             float(sample_dt), n_samples,
                                             weights, out)
        if consumed >= 0:
            times = np.arange(n_samples) * sample_dt
            return times, out, EnergyConfig(work)
        cap *= 2
    raise BudgetExceededError("jump event buffer kept overflowing")


@dataclass(frozen=True)
class GapProbeResult:
    sizes: np.ndarray
    taus: np.ndarray
    tau_stderr: np.ndarray
    exponent: float
    exponent_stderr: float
    fit: FitResult
    diagnostics: dict = field(default_factory=dict)


def spectral_gap_probe(sizes, model: JumpModel, seed: int,
                       total_T_relax: float = 3000.0,
                       samples_per_relax: int = 20,
                       fit_floor: float = 0.2) -> GapProbeResult:
    """Relaxation-time scaling of the slowest energy mode.

    For each lattice side L the mode autocorrelation is fitted with an
    exponential over lags where it stays above ``fit_floor``; tau values
    are then regressed on log L.  Sizes below 2 are rejected (no bonds,
    nothing relaxes).
    """
    sizes = sorted(int(L) for L in sizes)
    if len(sizes) < 2:
        raise ValidationError("gap probe needs at least two sizes")
    if sizes[0] < 2:
        raise ValidationError("gap probe needs L >= 2 (L=1 has no bonds)")
    taus = []
    tau_se = []
    diag = {}
    for k, L in enumerate(sizes):
        graph = LatticeGraph.chain(L, periodic=True)
        # mean-energy relaxation rate of the mode: 1 - cos(2 pi / L)
        tau_guess = 1.0 / (1.0 - math.cos(2.0 * math.pi / L))
        sample_dt = tau_guess / samples_per_relax
        T = total_T_relax * tau_guess
        start = jump_equilibrium(graph, float(L), seed, stream=1000 + k)
        _, series, _ = jump_mode_series(graph, model, start, T, sample_dt,
                                        seed, stream=k)
        lag_max = samples_per_relax * 8
        lags, corr, stderr = autocorrelation(series, lag_max)
        use = corr > fit_floor
        use[0] = True
        idx = np.nonzero(use)[0]
        stop = idx.size
        for i in range(1, idx.size):
            if idx[i] != idx[i - 1] + 1:
                stop = i
                break
        sel = idx[:stop]
        if sel.size < 5:
            raise ValidationError(
                f"L={L}: fewer than 5 autocorrelation lags above the floor")
        f = fit_line(lags[sel] * sample_dt, np.log(corr[sel]))
        taus.append(-1.0 / f.slope)
        tau_se.append(abs(f.slope_stderr / f.slope) * taus[-1])
        diag[f"L={L}"] = {"tau": taus[-1], "fit_r2": f.r_squared,
                          "lags_used": int(sel.size),
                          "sample_dt": sample_dt}
    taus = np.array(taus)
    tau_se = np.array(tau_se)
    fit = fit_line(np.log(np.array(sizes, dtype=float)), np.log(taus))
    return GapProbeResult(np.array(sizes), taus, tau_se, fit.slope,
                          fit.slope_stderr, fit, diag)


# ---------------------------------------------------------------------------
# transport coefficient


@dataclass(frozen=True)
class KappaResult:
    value: float
    static_term: float
    static_stderr: float
    temporal_term: float
    truncation_time: float
    spatial_cutoff: int
    tail_converged: bool
    diagnostics: dict = field(default_factory=dict)


def kappa_M_estimate(graph: LatticeGraph, family: CoefficientFamily,
                     beta: float, T: float, n_replicas: int, seed: int,
                     dt: float = 1e-3, corr_stride: int = 50,
                     n_static: int = 1_000_000) -> KappaResult:
    """Static bond-diffusion average plus the time-integrated space-summed
    drift correlations, at equilibrium.

    The time integral is truncated the first time the summed integrand
    drops below three of its standard errors; the spatial sum covers
    |x| <= L/4 around the reference bond.
    """
    if graph.dimension != 1 or not graph.periodic:
        raise ValidationError("transport estimate expects a periodic chain")
    L = graph.n_sites
    rng = RngStream(seed, 99)
    u = rng.gamma(family.shape, n_static) / beta
    v = rng.gamma(family.shape, n_static) / beta
    b2s = family.b2(u, v)
    static = float(b2s.mean())
    static_se = float(b2s.std(ddof=1) / math.sqrt(n_static))

    E0 = equilibrium_sample(graph, family, beta, seed, stream=7,
                            n_replicas=n_replicas)
    n_steps = int(math.ceil(T / dt))
    run = lattice_sde_run(graph, E0, family, beta, dt, n_steps, seed,
                          stream_offset=10_000, record_every=corr_stride)
    snaps = run.snapshots  # (n_snap, R, L)
    drift = family.drift
    a_series = drift(snaps[:, :, graph.bond_i], snaps[:, :, graph.bond_j])
    n_snap, R, nb = a_series.shape
    cutoff = max(L // 4, 1)
    lag_dt = corr_stride * dt
    max_lag = min(n_snap // 2, 64)

    # g(s) = sum over |x| <= cutoff of E[a_0(0) a_x(s)], averaged over
    # time origins and the reference bond (translation invariance);
    # realized as a_b(0) times the window sum of a over bonds b+-cutoff
    window = np.zeros_like(a_series)
    for off in range(-cutoff, cutoff + 1):
        window += np.roll(a_series, -off, axis=2)
    g = np.empty(max_lag)
    g_se = np.empty(max_lag)
    for lag in range(max_lag):
        n_orig = n_snap - lag
        prods = a_series[:n_orig] * window[lag:lag + n_orig]
        per_rep = prods.mean(axis=(0, 2))
        g[lag] = float(per_rep.mean())
        g_se[lag] = float(per_rep.std(ddof=1) / math.sqrt(R))

    stop = max_lag
    converged = False
    for lag in range(1, max_lag):
        if abs(g[lag]) < 3.0 * g_se[lag]:
            stop = lag + 1
            converged = True
            break
    integral = float(np.trapezoid(g[:stop], dx=lag_dt))
    return KappaResult(static + integral, static, static_se, integral,
                       stop * lag_dt, cutoff, converged,
                       {"n_snapshots": int(n_snap), "lag_dt": lag_dt,
                        "g0": float(g[0]), "replicas": R,
                        "halvings": run.halvings})
