"""Deterministic random streams and the small statistics toolbox.

Every stochastic experiment in the package draws its randomness through
:class:`RngStream`, a counter-based (Philox) stream keyed by a ``(seed,
stream)`` pair.  Distinct keys give statistically independent sequences;
the same key reproduces the same bits on any platform and under any
worker partitioning, which is what makes sharded Monte Carlo runs
byte-reproducible.  Gaussian and Gamma variates are produced by inverse
CDF rather than rejection so the number of raw draws consumed per
variate is fixed.

The statistics helpers implement exactly what the experiments need:
Kolmogorov-Smirnov distances, autocorrelation with batch-mean errors,
log-log slope fits, and a Pearson chi-squared goodness-of-fit test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import chdtrc, gammaincinv, kolmogorov, ndtr, ndtri

from .errors import InsufficientSampleError, ValidationError

__all__ = [
    "RngStream",
    "FitResult",
    "ks_distance",
    "ks_distance_two_sample",
    "ks_p_value",
    "normal_cdf",
    "autocorrelation",
    "loglog_slope",
    "fit_line",
    "chi2_test",
    "Chi2Result",
]

_U53 = 2.0 ** -53
_MIX = 0x9E3779B97F4A7C15  # 64-bit golden-ratio increment for substream keys


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Parameters
    ----------
    seed : int
        Experiment-level seed, 0 <= seed < 2**64.
    stream : int
        Stream index within the experiment (replica index by convention;
        auxiliary streams use indices >= 2**62).
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if not 0 <= seed < 2 ** 64:
            raise ValidationError(f"seed must be a u64, got {seed}")
        if not 0 <= stream < 2 ** 64:
            raise ValidationError(f"stream id must be a u64, got {stream}")
        self.seed = seed
        self.stream = stream
        key = np.array([seed, stream], dtype=np.uint64)
        self._gen = Generator(Philox(key=key))
        self._drawn = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, drawn={self._drawn})"

    @property
    def counter(self) -> int:
        """Number of variates drawn so far (all types counted alike)."""
        return self._drawn

    def _count(self, size) -> int:
        return 1 if size is None else int(np.prod(size))

    def uniform(self, size=None):
        """Uniform variates on the open interval (0, 1)."""
        self._drawn += self._count(size)
        raw = self._gen.integers(0, 1 << 53, size=size, dtype=np.uint64)
        return (raw.astype(np.float64) + 0.5) * _U53 if size is not None \
            else (float(raw) + 0.5) * _U53

    def normal(self, size=None):
        """Standard Gaussian variates via inverse CDF (no rejection)."""
        return ndtri(self.uniform(size=size))

    def gamma(self, shape: float, size=None):
        """Gamma(shape, rate=1) variates via inverse CDF."""
        if shape <= 0:
            raise ValidationError("gamma shape must be positive")
        return gammaincinv(shape, self.uniform(size=size))

    def exponential(self, size=None):
        return -np.log(self.uniform(size=size))

    def integers(self, n: int, size=None):
        """Uniform integers on [0, n).  Consumption varies for n not a
        power of two, but is deterministic for a fixed key."""
        self._drawn += self._count(size)
        return self._gen.integers(0, n, size=size)

    def bit_words(self, size=None):
        """Full-range uint64 words (64 fair bits each), for exact
        bit-register simulation of binary-shift maps."""
        self._drawn += self._count(size)
        return self._gen.integers(0, 1 << 64, size=size, dtype=np.uint64)

    def permutation(self, n: int):
        self._drawn += n
        return self._gen.permutation(n)

    def spawn(self, k: int) -> "RngStream":
        """Derived stream with a mixed key; use for auxiliary draws."""
        child = (self.stream * _MIX + k + 1) % (2 ** 64)
        return RngStream(self.seed, child)


# ---------------------------------------------------------------------------
# distribution helpers


def normal_cdf(x, mean=0.0, std=1.0):
    return ndtr((np.asarray(x, dtype=np.float64) - mean) / std)


def ks_distance(sample, cdf) -> float:
    """Exact sup-distance between the empirical CDF of ``sample`` and a
    reference CDF callable."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if n == 0:
        raise InsufficientSampleError("empty sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    if np.any(f < -1e-12) or np.any(f > 1 + 1e-12):
        raise ValidationError("reference cdf must take values in [0, 1]")
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_distance_two_sample(a, b) -> float:
    """Sup-distance between two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise InsufficientSampleError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_p_value(d: float, n: int, m: int | None = None) -> float:
    """Asymptotic Kolmogorov tail probability of a KS statistic.

    For the two-sample case pass both sizes; the effective size is
    n*m/(n+m).
    """
    n_eff = n if m is None else n * m / (n + m)
    return float(kolmogorov(d * (np.sqrt(n_eff) + 0.12 + 0.11 / np.sqrt(n_eff))))


def ks_stderr(n: int, m: int | None = None) -> float:
    """Rough standard error of a KS statistic near its null scale.

    The Kolmogorov distribution has standard deviation ~0.26/sqrt(n_eff);
    used for trend comparisons between KS values, not for testing.
    """
    n_eff = n if m is None else n * m / (n + m)
    return 0.26 / np.sqrt(n_eff)


# ---------------------------------------------------------------------------
# series statistics


def autocorrelation(series, lag_max: int, n_batches: int = 20):
    """Normalized autocorrelation up to ``lag_max`` with batch-mean errors.

    Returns
    -------
    lags : ndarray of int
    corr : ndarray
        Biased-normalization autocorrelation (c_k / c_0).
    stderr : ndarray
        Spread of per-batch estimates over ``n_batches`` contiguous
        batches, divided by sqrt(n_batches).
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 10 * lag_max:
        raise InsufficientSampleError(
            f"series of length {n} too short for lag_max={lag_max} "
            "(need at least 10*lag_max)")
    lags = np.arange(lag_max + 1)

    def _corr(y):
        y = y - y.mean()
        c0 = np.dot(y, y) / y.size
        if c0 == 0:
            return np.array([1.0] + [0.0] * lag_max)
        out = np.empty(lag_max + 1)
        for k in lags:
            out[k] = np.dot(y[: y.size - k], y[k:]) / y.size / c0
        return out

    corr = _corr(x)
    batch_len = n // n_batches
    usable = batch_len > 2 * lag_max
    if usable:
        estimates = np.array([
            _corr(x[i * batch_len:(i + 1) * batch_len]) for i in range(n_batches)
        ])
        stderr = estimates.std(axis=0, ddof=1) / np.sqrt(n_batches)
    else:
        stderr = np.full(lag_max + 1, np.nan)
    return lags, corr, stderr


@dataclass(frozen=True)
class FitResult:
    """Least-squares line fit with basic diagnostics."""

    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float
    r_squared: float
    n_points: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.slope) and self.n_points >= 2)


def fit_line(x, y) -> FitResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 2:
        raise InsufficientSampleError("need at least two points to fit a line")
    A = np.vstack([x, np.ones(n)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if n > 2:
        sigma2 = ss_res / (n - 2)
        sxx = float(np.sum((x - x.mean()) ** 2))
        slope_se = np.sqrt(sigma2 / sxx) if sxx > 0 else np.inf
        inter_se = np.sqrt(sigma2 * (1.0 / n + x.mean() ** 2 / sxx)) if sxx > 0 else np.inf
    else:
        slope_se = inter_se = np.inf
    return FitResult(slope, intercept, float(slope_se), float(inter_se), r2, n)


def loglog_slope(x, y, window=None) -> FitResult:
    """Slope of log(y) against log(x), optionally over an index window.

    ``window`` may be a ``(lo, hi)`` index pair (half-open) or a boolean
    mask.  Raises on non-positive inputs inside the window.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if window is not None:
        if isinstance(window, tuple):
            sl = slice(*window)
            x, y = x[sl], y[sl]
        else:
            mask = np.asarray(window, dtype=bool)
            x, y = x[mask], y[mask]
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("loglog_slope requires positive inputs")
    return fit_line(np.log(x), np.log(y))


# ---------------------------------------------------------------------------
# goodness of fit


@dataclass(frozen=True)
class Chi2Result:
    statistic: float
    dof: int
    p_value: float
    n_bins: int
    n_merged: int
    expected: np.ndarray
    observed: np.ndarray


def chi2_test(sample, density, support, bins: int = 32,
              min_expected: float = 5.0) -> Chi2Result:
    """Pearson chi-squared test of ``sample`` against a reference density.

    The reference is integrated numerically on a fine grid over
    ``support`` and the bin edges are placed at equal reference
    probability.  Adjacent bins are merged until every expected count is
    at least ``min_expected``.  The p-value uses ``bins - 1`` degrees of
    freedom (the reference is fully specified, nothing is fitted).
    """
    x = np.asarray(sample, dtype=np.float64)
    n = x.size
    lo, hi = float(support[0]), float(support[1])
    if not hi > lo:
        raise ValidationError("support must be an increasing interval")
    if n < 8 * bins:
        raise InsufficientSampleError(
            f"sample of size {n} too small for {bins} bins")

    grid = np.linspace(lo, hi, 16 * bins * 8 + 1)
    dens = np.asarray(density(grid), dtype=np.float64)
    if np.any(dens < -1e-12):
        raise ValidationError("reference density must be nonnegative")
    dens = np.clip(dens, 0.0, None)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(grid))])
    total = cdf[-1]
    if total <= 0:
        raise ValidationError("reference density integrates to zero on support")
    cdf /= total

    # equal-probability edges from the numerical inverse CDF
    qs = np.linspace(0.0, 1.0, bins + 1)
    edges = np.interp(qs, cdf, grid)
    edges[0], edges[-1] = lo, hi

    observed, _ = np.histogram(x, bins=edges)
    inside = int(observed.sum())
    if inside < n:
        # tails outside support count against the extreme bins
        observed[0] += int(np.sum(x < lo))
        observed[-1] += int(np.sum(x > hi))
    expected = np.diff(np.interp(edges, grid, cdf)) * n

    # merge adjacent bins until all expected counts clear the floor
    obs = list(observed.astype(float))
    exp = list(expected)
    merged = 0
    i = 0
    while i < len(exp):
        if exp[i] < min_expected and len(exp) > 1:
            j = i + 1 if i + 1 < len(exp) else i - 1
            exp[j] += exp[i]
            obs[j] += obs[i]
            del exp[i], obs[i]
            merged += 1
            i = 0
        else:
            i += 1
    if len(exp) <= 1:
        raise InsufficientSampleError("all bins merged away; sample too small")

    obs_a = np.array(obs)
    exp_a = np.array(exp)
    stat = float(np.sum((obs_a - exp_a) ** 2 / exp_a))
    dof = len(exp) - 1
    p = float(chdtrc(dof, stat))
    return Chi2Result(stat, dof, p, len(exp), merged, exp_a, obs_a)
