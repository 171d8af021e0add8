"""Averaged dynamics, fluctuation ensembles and slow-mixing statistics.

The slow coordinate of the skew product tracks, to leading order, the
solution of the averaged ODE driven by the drift profile.  This module
solves that ODE, builds ensembles of the rescaled deviations
zeta = (theta_eps - Theta)/sqrt(eps), evaluates the limiting Gaussian
variance curve, and measures the two slow-mixing phenomena: correlation
decay of smooth observables and residence statistics between drift
basins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .dynamics import (FastSlowSystem, FastStepper, InitialLaw,
                       bit_word_count, ensemble_paths)
from .errors import (DegenerateVarianceError, NoSinksError, ValidationError,
                     WindowTooShortError)
from .stats import (FitResult, RngStream, fit_line, ks_distance,
                    ks_distance_two_sample, ks_p_value, ks_stderr, normal_cdf)
from .transfer import SrbProfile

__all__ = [
    "AveragedSolution",
    "solve_averaged",
    "FluctuationEnsemble",
    "fluctuation_ensemble",
    "VarianceCurve",
    "theoretical_variance",
    "CltComparison",
    "clt_compare",
    "WfComparison",
    "wf_distributional_distance",
    "averaging_order",
    "OBSERVABLES",
    "DecayEstimate",
    "correlation_decay",
    "MetastabilityStats",
    "drift_equilibria",
    "residence_statistics",
]


# ---------------------------------------------------------------------------
# averaged ODE


@dataclass(frozen=True)
class AveragedSolution:
    """RK4 solution of Theta' = drift(Theta) with cubic Hermite dense output."""

    theta0: float
    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray  # drift evaluated on the grid, for Hermite interpolation
    profile: SrbProfile

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.times[0], self.times[-1]
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise ValidationError(f"time outside solution window [{lo}, {hi}]")
        dt = self.times[1] - self.times[0]
        idx = np.clip((t / dt).astype(np.int64), 0, self.times.size - 2)
        s = (t - self.times[idx]) / dt
        y0 = self.values[idx]
        y1 = self.values[idx + 1]
        m0 = self.slopes[idx] * dt
        m1 = self.slopes[idx + 1] * dt
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
        return float(out) if out.ndim == 0 else out

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def derivative(self, t):
        """Hermite derivative of the dense output."""
        t = np.asarray(t, dtype=np.float64)
        dt = self.times[1] - self.times[0]
        idx = np.clip((t / dt).astype(np.int64), 0, self.times.size - 2)
        s = (t - self.times[idx]) / dt
        y0 = self.values[idx]
        y1 = self.values[idx + 1]
        m0 = self.slopes[idx] * dt
        m1 = self.slopes[idx + 1] * dt
        d = (6 * s * s - 6 * s) * y0 + (3 * s * s - 4 * s + 1) * m0 \
            + (6 * s - 6 * s * s) * y1 + (3 * s * s - 2 * s) * m1
        out = d / dt
        return float(out) if out.ndim == 0 else out

    def max_residual(self) -> float:
        """Max |Theta' - drift(Theta)| at grid midpoints (consistency check)."""
        mids = 0.5 * (self.times[:-1] + self.times[1:])
        lhs = self.derivative(mids)
        rhs = self.profile.drift(self(mids))
        return float(np.max(np.abs(lhs - rhs)))


def solve_averaged(profile: SrbProfile, theta0: float, T: float,
                   dt: float = 1e-4) -> AveragedSolution:
    """Classical RK4 for the averaged ODE on [0, T]."""
    if dt > 1e-2 or dt <= 0:
        raise ValidationError("averaged-ODE step must lie in (0, 1e-2]")
    if T <= 0:
        raise ValidationError("horizon must be positive")
    n = int(math.ceil(T / dt - 1e-12))
    times = np.linspace(0.0, n * dt, n + 1)
    values = np.empty(n + 1)
    slopes = np.empty(n + 1)
    y = float(theta0)
    f = profile.drift
    for i in range(n):
        values[i] = y
        k1 = f(y)
        slopes[i] = k1
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    values[n] = y
    slopes[n] = f(y)
    return AveragedSolution(float(theta0), times, values, slopes, profile)


# ---------------------------------------------------------------------------
# fluctuation ensembles


@dataclass(frozen=True)
class FluctuationEnsemble:
    """Rescaled deviations zeta = (theta_eps - Theta)/sqrt(eps) at fixed times."""

    epsilon: float
    sample_count: int
    times: np.ndarray
    samples: np.ndarray  # (K, n_times)
    theta0: float
    averaged: AveragedSolution

    def at(self, t: float) -> np.ndarray:
        hits = np.nonzero(np.isclose(self.times, t, atol=1e-12))[0]
        if hits.size == 0:
            raise ValidationError(f"t={t} not in ensemble time grid")
        return self.samples[:, hits[0]]

    def sup_bound(self, omega_bound: float) -> float:
        """Coarse a-priori bound on |zeta|."""
        T = float(self.times[-1])
        return 2.0 * omega_bound * T / math.sqrt(self.epsilon)


def fluctuation_ensemble(system: FastSlowSystem, law: InitialLaw,
                         profile: SrbProfile, T: float, K: int, seed: int,
                         eval_times: Sequence[float] | None = None,
                         averaged: AveragedSolution | None = None,
                         stream_offset: int = 0) -> FluctuationEnsemble:
    """K independent slow trajectories converted to fluctuation paths."""
    if K < 100:
        raise ValidationError("ensemble needs K >= 100")
    if averaged is None:
        averaged = solve_averaged(profile, law.theta0, T)
    if eval_times is None:
        eval_times = np.linspace(0.0, T, 21)
    eval_times = np.asarray(eval_times, dtype=np.float64)
    values, _ = ensemble_paths(system, law, T, seed, K, eval_times,
                               stream_offset=stream_offset)
    ref = averaged(eval_times)
    zeta = (values - ref[None, :]) / math.sqrt(system.epsilon)
    return FluctuationEnsemble(system.epsilon, K, eval_times, zeta,
                               law.theta0, averaged)


@dataclass(frozen=True)
class VarianceCurve:
    """Limiting fluctuation variance along the averaged trajectory.

    Solves d(S2)/dt = 2 drift'(Theta(t)) S2 + gk_var(Theta(t)), S2(0) = 0,
    the ODE form of the integral with the exponential damping factor.
    """

    times: np.ndarray
    values: np.ndarray
    theta0: float

    def at(self, t: float) -> float:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValidationError(f"t={t} outside variance curve window")
        return float(np.interp(t, self.times, self.values))


def theoretical_variance(profile: SrbProfile, theta0: float, times,
                         dt: float = 1e-4,
                         averaged: AveragedSolution | None = None
                         ) -> VarianceCurve:
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    T = float(times.max())
    if averaged is None or averaged.times[-1] < T - 1e-12:
        averaged = solve_averaged(profile, theta0, max(T, dt))
    n = int(math.ceil(T / dt - 1e-12)) if T > 0 else 0
    grid = np.linspace(0.0, max(n, 1) * dt, max(n, 1) + 1)
    theta_grid = averaged(np.minimum(grid, averaged.times[-1]))
    gp = profile.drift_prime(theta_grid)
    bb = np.clip(profile.gk_var(theta_grid), 0.0, None)

    # RK4 on the linear variance ODE, coefficients interpolated midstep
    s2 = np.empty(grid.size)
    s2[0] = 0.0
    y = 0.0
    for i in range(grid.size - 1):
        a0, a1 = gp[i], gp[i + 1]
        b0, b1 = bb[i], bb[i + 1]
        am, bm = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
        k1 = 2 * a0 * y + b0
        k2 = 2 * am * (y + 0.5 * dt * k1) + bm
        k3 = 2 * am * (y + 0.5 * dt * k2) + bm
        k4 = 2 * a1 * (y + dt * k3) + b1
        y = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        y = max(y, 0.0)
        s2[i + 1] = y
    vals = np.interp(times, grid, s2)
    return VarianceCurve(times, vals, float(theta0))


@dataclass(frozen=True)
class CltComparison:
    ks: float
    p_value: float
    empirical_var: float
    theoretical_var: float
    sample_count: int
    degenerate: bool = False


def clt_compare(ensemble: FluctuationEnsemble, curve: VarianceCurve,
                t: float) -> CltComparison:
    """KS distance of zeta(t) against the centered limiting Gaussian."""
    z = ensemble.at(t)
    s2 = curve.at(t)
    emp = float(np.var(z))
    if s2 < 1e-12:
        if emp > 1e-6:
            raise DegenerateVarianceError(
                f"limit variance {s2:.2e} degenerate but ensemble variance "
                f"{emp:.2e}")
        return CltComparison(0.0, 1.0, emp, s2, z.size, degenerate=True)
    sd = math.sqrt(s2)
    d = ks_distance(z, lambda v: normal_cdf(v / sd))
    p = ks_p_value(d, z.size)
    return CltComparison(d, p, emp, s2, z.size)


# ---------------------------------------------------------------------------
# Wentzell-Freidlin marginal comparison


@dataclass(frozen=True)
class WfComparison:
    ks: float
    stderr: float
    p_value: float
    t: float
    epsilon: float
    sample_count: int
    map_mean: float
    sde_mean: float


def wf_distributional_distance(system: FastSlowSystem, law: InitialLaw,
                               profile: SrbProfile, t: float, K: int,
                               seed: int, dt: float = 5e-4,
                               stream_offset: int = 0) -> WfComparison:
    """Two-sample KS between slow-map endpoints and endpoints of the
    noise-perturbed averaged equation dX = drift dt + sqrt(eps) sigma dB."""
    from .sde import ScalarSde, euler_ensemble

    if K < 100:
        raise ValidationError("comparison needs K >= 100")
    eps = system.epsilon
    end_map = ensemble_paths(system, law, t, seed, K, [t],
                             stream_offset=stream_offset)[0][:, 0]
    sde = ScalarSde(drift=profile.drift, diffusion=profile.noise_sigma,
                    noise_scale=math.sqrt(eps))
    end_sde = euler_ensemble(sde, law.theta0, t, dt, seed, K,
                             stream_offset=stream_offset + K)
    d = ks_distance_two_sample(end_map, end_sde)
    se = ks_stderr(K, K)
    n_eff = K / 2
    p = ks_p_value(d, int(n_eff))
    return WfComparison(d, se, p, t, eps, K,
                        float(end_map.mean()), float(end_sde.mean()))


# ---------------------------------------------------------------------------
# averaging order


def averaging_order(make_system_at, law: InitialLaw, profile: SrbProfile,
                    eps_list, n_samples: int, seed: int, T: float = 1.0
                    ) -> tuple[np.ndarray, np.ndarray, FitResult]:
    """Median sup-deviation from the averaged path, fitted against eps.

    ``make_system_at(eps)`` must return the system at that eps.  Returns
    (eps array, median sup errors, log-log fit whose slope estimates the
    convergence order).
    """
    eps_arr = np.asarray(sorted(eps_list, reverse=True), dtype=np.float64)
    if eps_arr.size < 3:
        raise ValidationError("order fit needs at least 3 epsilon values")
    averaged = solve_averaged(profile, law.theta0, T)
    medians = np.empty(eps_arr.size)
    for i, eps in enumerate(eps_arr):
        system = make_system_at(float(eps))
        _, sups = ensemble_paths(system, law, T, seed, n_samples, [T],
                                 stream_offset=i * n_samples,
                                 record_sup_against=averaged)
        medians[i] = float(np.median(sups))
    fit = fit_line(np.log(eps_arr), np.log(medians))
    return eps_arr, medians, fit


# ---------------------------------------------------------------------------
# correlation decay

OBSERVABLES = {
    "const": 0,
    "cos-x": 1,
    "sin-theta": 2,
    "cos-theta": 3,
}

_OBS_FUNCS = {
    "const": lambda x, th: np.ones_like(np.asarray(x, dtype=np.float64)),
    "cos-x": lambda x, th: np.cos(2 * np.pi * x),
    "sin-theta": lambda x, th: np.sin(2 * np.pi * th),
    "cos-theta": lambda x, th: np.cos(2 * np.pi * th),
}


@dataclass(frozen=True)
class DecayEstimate:
    epsilon: float
    lags: np.ndarray
    correlations: np.ndarray
    noise_floor: np.ndarray
    rate: float
    fit: FitResult | None
    window: tuple
    below_noise: bool
    observable_a: str
    observable_b: str
    mu_b: float
    diagnostics: dict = field(default_factory=dict)


def correlation_decay(system: FastSlowSystem, observable_a: str,
                      observable_b: str, lag_max: int, sample_count: int,
                      burn_in: int, seed: int, mu_trajectories: int = 256,
                      tail_length: int = 200_000, min_usable: int = 5
                      ) -> DecayEstimate:
    """Lebesgue-started correlations of two smooth observables under the
    full skew product, with the invariant mean of B taken from long-run
    trajectory tails.

    Fits log|C_n| over the lags where |C_n| exceeds three Monte Carlo
    standard errors.  If no lag beyond zero clears the floor the
    estimate is flagged ``below_noise``; one to ``min_usable - 1``
    usable lags raise :class:`WindowTooShortError`.
    """
    if observable_a not in OBSERVABLES or observable_b not in OBSERVABLES:
        raise ValidationError(
            f"observables must be among {sorted(OBSERVABLES)}")
    if sample_count < 1000:
        raise ValidationError("correlation estimate needs >= 1000 samples")
    fa = _OBS_FUNCS[observable_a]
    fb = _OBS_FUNCS[observable_b]
    eps = system.epsilon

    # mu_eps(B) from long-trajectory tails (Lebesgue-started, burned in)
    kargs = _kernels.kernel_args(system)
    rng = RngStream(seed, 0)
    xs = rng.uniform(mu_trajectories)
    ths = rng.uniform(mu_trajectories)
    tail_words = rng.bit_words(
        (mu_trajectories, bit_word_count(burn_in + tail_length))) \
        if system.binary_shift \
        else np.empty((mu_trajectories, 0), dtype=np.uint64)
    if kargs is not None and observable_b in OBSERVABLES:
        kind, p0, p1 = kargs
        tails = _kernels.tail_means(kind, p0, p1, OBSERVABLES[observable_b],
                                    xs, ths, eps, int(burn_in),
                                    int(tail_length), tail_words)
    else:
        tails = _python_tail_means(system, fb, xs, ths, burn_in, tail_length,
                                   tail_words)
    mu_b = float(tails.mean())
    mu_b_se = float(tails.std(ddof=1) / math.sqrt(tails.size))

    # Lebesgue-started ensemble for the lagged products
    rng2 = RngStream(seed, 1)
    x = rng2.uniform(sample_count)
    th = rng2.uniform(sample_count)
    lag_words = rng2.bit_words((sample_count, bit_word_count(lag_max))) \
        if system.binary_shift else None
    stepper = FastStepper(system, x, lag_words)
    a0 = fa(stepper.x, th)
    mean_a = float(a0.mean())
    corr = np.empty(lag_max + 1)
    noise = np.empty(lag_max + 1)
    for n in range(lag_max + 1):
        prod = a0 * fb(stepper.x, th)
        corr[n] = float(prod.mean()) - mean_a * mu_b
        noise[n] = float(prod.std(ddof=1) / math.sqrt(sample_count))
        if n < lag_max:
            w = system.omega(stepper.x, th)
            stepper.step(th)
            th = (th + eps * w) % 1.0

    usable = np.abs(corr) > 3.0 * noise
    usable[0] = False  # lag zero anchors the definition, not the fit
    idx = np.nonzero(usable)[0]
    diagnostics = {"mu_b_stderr": mu_b_se, "mean_a": mean_a,
                   "sample_count": sample_count,
                   "mu_trajectories": mu_trajectories,
                   "usable_lags": int(idx.size)}
    if idx.size == 0:
        return DecayEstimate(eps, np.arange(lag_max + 1), corr, noise,
                             math.nan, None, (0, 0), True,
                             observable_a, observable_b, mu_b, diagnostics)
    if idx.size < min_usable:
        raise WindowTooShortError(
            f"only {idx.size} lags exceed the noise floor; need {min_usable}")
    # restrict to the leading contiguous block so the fit stops at the
    # first excursion below the floor
    first = idx[0]
    run_end = first
    while run_end + 1 <= lag_max and usable[run_end + 1]:
        run_end += 1
    sel = np.arange(first, run_end + 1)
    if sel.size < min_usable:
        sel = idx[:max(min_usable, idx.size)]
    fit = fit_line(sel.astype(float), np.log(np.abs(corr[sel])))
    rate = -fit.slope
    return DecayEstimate(eps, np.arange(lag_max + 1), corr, noise, rate, fit,
                         (int(sel[0]), int(sel[-1])), False,
                         observable_a, observable_b, mu_b, diagnostics)


def _python_tail_means(system, fb, xs, ths, burn_in, tail_length, words):
    eps = system.epsilon
    stepper = FastStepper(system, xs,
                          words if system.binary_shift else None)
    th = ths.copy()
    for _ in range(int(burn_in)):
        w = system.omega(stepper.x, th)
        stepper.step(th)
        th = (th + eps * w) % 1.0
    acc = np.zeros_like(xs)
    for _ in range(int(tail_length)):
        acc += fb(stepper.x, th)
        w = system.omega(stepper.x, th)
        stepper.step(th)
        th = (th + eps * w) % 1.0
    return acc / tail_length


# ---------------------------------------------------------------------------
# metastability


def drift_equilibria(profile: SrbProfile, n_grid: int = 4096,
                     zero_tol: float = 1e-6):
    """Sinks and sources of the drift spline on the slow circle.

    Zeros are located by sign changes on a dense grid refined by Brent's
    method; classification is by the spline derivative's sign.
    """
    zs = np.linspace(0.0, 1.0, n_grid, endpoint=False)
    vals = np.asarray(profile.drift(zs))
    sinks = []
    sources = []
    for i in range(n_grid):
        a, b = zs[i], zs[i] + 1.0 / n_grid
        va = vals[i]
        vb = vals[(i + 1) % n_grid] if i + 1 < n_grid else profile.drift(b)
        if va == 0.0:
            root = a
        elif va * vb < 0:
            root = brentq(lambda z: profile.drift(z), a, b, xtol=1e-14)
        else:
            continue
        if abs(profile.drift(root)) > zero_tol:
            continue
        if profile.drift_prime(root) < 0:
            sinks.append(root % 1.0)
        else:
            sources.append(root % 1.0)
    return np.array(sorted(sinks)), np.array(sorted(sources))


@dataclass(frozen=True)
class MetastabilityStats:
    epsilon: float
    sinks: np.ndarray
    sources: np.ndarray
    basin_of: np.ndarray        # sink index per well (kept for plotting)
    visit_counts: np.ndarray    # completed committed visits per well
    mean_residence: np.ndarray  # macroscopic time units, completed visits
    residence_samples: list     # per-basin arrays of macroscopic durations
    transitions: int
    run_length: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def overall_mean_residence(self) -> float:
        all_runs = np.concatenate([s for s in self.residence_samples
                                   if s.size] or [np.array([])])
        return float(all_runs.mean()) if all_runs.size else math.nan


def commitment_bands(sinks, sources, fraction: float = 0.5):
    """Commitment band per sink: the interval around the sink covering
    ``fraction`` of the circle distance to the nearest unstable zero on
    each side.  Returns (band_lo, band_hi) arrays, entries wrapping mod 1.
    """
    if not 0 < fraction < 1:
        raise ValidationError("band fraction must lie in (0, 1)")
    sinks = np.sort(np.asarray(sinks, dtype=np.float64))
    sources = np.sort(np.asarray(sources, dtype=np.float64))
    lo = np.empty_like(sinks)
    hi = np.empty_like(sinks)
    for i, z in enumerate(sinks):
        up = (sources - z) % 1.0
        down = (z - sources) % 1.0
        hi[i] = (z + fraction * float(up.min())) % 1.0
        lo[i] = (z - fraction * float(down.min())) % 1.0
    return lo, hi


def residence_statistics(system: FastSlowSystem, profile: SrbProfile,
                         run_length: int, seed: int,
                         max_runs: int = 1_000_000,
                         band_fraction: float = 0.5) -> MetastabilityStats:
    """Committed-visit bookkeeping along one long trajectory.

    A visit to a sink's well starts when the trajectory enters the
    sink's commitment band (a fixed fraction of the gap to the adjacent
    unstable zeros) and ends when it enters another sink's band, so
    jitter around an unstable zero never fragments a visit.  The first
    and last (incomplete) visits are dropped from the per-well means.
    """
    sinks, sources = drift_equilibria(profile)
    if sinks.size == 0:
        raise NoSinksError("drift profile has no stable zeros")
    eps = system.epsilon
    rng = RngStream(seed, 0)
    x0 = float(rng.uniform())
    th0 = float(sinks[0])

    if sources.size == 0 or sinks.size == 1:
        # single well; no transitions possible
        return MetastabilityStats(eps, sinks, sources, np.zeros(1, dtype=int),
                                  np.zeros(1, dtype=int), np.full(1, math.nan),
                                  [np.array([])], 0, run_length,
                                  {"note": "single well; no transitions"})

    band_lo, band_hi = commitment_bands(sinks, sources, band_fraction)
    kargs = _kernels.kernel_args(system)
    if kargs is None:
        raise ValidationError(
            "residence bookkeeping requires a preset-backed system")
    kind, p0, p1 = kargs
    basins = np.empty(max_runs, dtype=np.int32)
    lengths = np.empty(max_runs, dtype=np.int64)
    bits = rng.bit_words(bit_word_count(run_length)) if system.binary_shift \
        else np.empty(0, dtype=np.uint64)
    n_runs = _kernels.residence_rle(kind, p0, p1, x0, th0, eps,
                                    int(run_length), band_lo, band_hi,
                                    basins, lengths, bits)
    if n_runs < 0:
        raise ValidationError(
            f"more than {max_runs} committed visits; raise max_runs")
    basins = basins[:n_runs]
    lengths = lengths[:n_runs]

    # drop the incomplete first and last visits
    complete_b = basins[1:-1] if n_runs > 2 else np.empty(0, dtype=np.int32)
    complete_l = lengths[1:-1] if n_runs > 2 else np.empty(0, dtype=np.int64)
    n_wells = sinks.size
    samples = []
    counts = np.zeros(n_wells, dtype=int)
    means = np.full(n_wells, math.nan)
    for j in range(n_wells):
        sel = complete_l[complete_b == j] * eps
        samples.append(np.asarray(sel, dtype=np.float64))
        counts[j] = sel.size
        if sel.size:
            means[j] = float(np.mean(sel))
    return MetastabilityStats(eps, sinks, np.sort(sources),
                              np.arange(n_wells), counts, means, samples,
                              max(n_runs - 1, 0), run_length,
                              {"x0": x0, "theta0": th0,
                               "band_lo": band_lo.tolist(),
                               "band_hi": band_hi.tolist(),
                               "band_fraction": band_fraction})
