"""Fast-slow skew products on the two-torus.

The model is a pair ``(x, theta)`` evolving by

    x'     = f(x, theta)            (mod 1, uniformly expanding in x)
    theta' = theta + eps * w(x, theta)

with ``df/dx >= lambda > 1``.  The fast coordinate ``x`` mixes on a
per-step time scale while ``theta`` moves by O(eps) per step, so over
``1/eps`` steps the slow coordinate traces an ODE driven by the averaged
slow field.  Systems are built either from the named presets below or
from user-supplied lift/field callables, and are certified expanding on
a 512x512 grid at construction.

Circle points are plain floats in [0, 1); ``wrap``/``circle_distance``
are the helpers for working with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import simpson

from .errors import BudgetExceededError, ValidationError
from .stats import RngStream

__all__ = [
    "wrap",
    "circle_distance",
    "ProductState",
    "FastSlowSystem",
    "InitialLaw",
    "SlowPath",
    "PRESET_NAMES",
    "make_preset",
    "step",
    "simulate_slow_path",
    "sample_initial",
]

_TWO_PI = 2.0 * math.pi
_CERT_GRID = 512  # expansion certificate resolution per axis
_TABLE_SIZE = 2 ** 14  # inverse-CDF table resolution for initial laws


def wrap(x):
    """Reduce to the fundamental domain [0, 1)."""
    return np.asarray(x) % 1.0 if np.ndim(x) else float(x) % 1.0


def circle_distance(a, b):
    """Shortest arc distance on the circle of circumference 1."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    out = np.minimum(d, 1.0 - d)
    return float(out) if np.ndim(out) == 0 else out


class ProductState(NamedTuple):
    """A point on the product torus: fast coordinate and slow coordinate."""

    x: float
    theta: float


@dataclass(frozen=True)
class FastSlowSystem:
    """A fast-slow skew product together with its certificates.

    Parameters
    ----------
    fast_lift : callable (x, theta) -> float
        Increasing lift of the fast map to the real line; the fast map
        is its fractional part.  Must be vectorized over numpy arrays.
    omega : callable (x, theta) -> float
        Slow vector field; 1-periodic in both arguments.
    dfdx : callable (x, theta) -> float
        x-derivative of the lift (used by the expansion certificate and
        the transfer-operator module).
    epsilon : float
        Time-scale separation; one map step advances slow time by eps.
    expansion_lambda : float
        Certified lower bound for dfdx on the grid.
    omega_bound : float
        Certified upper bound for |omega|.
    """

    fast_lift: Callable
    omega: Callable
    dfdx: Callable
    epsilon: float
    expansion_lambda: float
    omega_bound: float
    preset_id: str = "custom"
    preset_params: dict = field(default_factory=dict)
    fast_depends_on_theta: bool = True
    kernel_id: int = -1  # >= 0 selects a compiled preset kernel
    kernel_params: tuple = ()
    # Lift is exactly 2x: float iteration collapses to 0 after the 53
    # mantissa bits shift out, so trajectory simulation must use the
    # bit-register realization (fresh fair bit per step), which has the
    # exact joint law of the Lebesgue-started shift.
    binary_shift: bool = False

    def fast(self, x, theta):
        """The fast circle map (lift mod 1)."""
        return self.fast_lift(x, theta) % 1.0

    def slow_increment(self, state: ProductState) -> float:
        """Unwrapped slow increment eps * omega at the given state."""
        return self.epsilon * float(self.omega(state.x, state.theta))

    def with_epsilon(self, epsilon: float) -> "FastSlowSystem":
        if epsilon < 0:
            raise ValidationError("epsilon must be nonnegative")
        return FastSlowSystem(
            self.fast_lift, self.omega, self.dfdx, float(epsilon),
            self.expansion_lambda, self.omega_bound, self.preset_id,
            dict(self.preset_params), self.fast_depends_on_theta,
            self.kernel_id, self.kernel_params, self.binary_shift)


def _certify(fast_lift, omega, dfdx, grid=_CERT_GRID):
    """Grid certificates: min expansion and sup |omega| on a grid with a
    small safety margin.  Returns (lambda_min, omega_bound)."""
    xs = (np.arange(grid) + 0.5) / grid
    ths = (np.arange(grid) + 0.5) / grid
    X, T = np.meshgrid(xs, ths, indexing="ij")
    d = np.asarray(dfdx(X, T), dtype=np.float64)
    if d.shape != X.shape:
        d = np.broadcast_to(d, X.shape)
    lam = float(d.min())
    w = np.abs(np.asarray(omega(X, T), dtype=np.float64))
    if w.shape != X.shape:
        w = np.broadcast_to(w, X.shape)
    wmax = float(w.max())
    return lam, wmax * (1.0 + 1e-6) + 1e-12


def make_system(fast_lift, omega, dfdx, epsilon, preset_id="custom",
                preset_params=None, fast_depends_on_theta=True,
                kernel_id=-1, kernel_params=(),
                binary_shift=False) -> FastSlowSystem:
    """Certify and assemble a :class:`FastSlowSystem`.

    Raises :class:`ValidationError` if the expansion certificate fails
    (min grid derivative <= 1) or epsilon is negative.  Pass
    ``binary_shift=True`` only when the lift is exactly 2x; trajectory
    code then uses the exact-in-law bit-register realization.
    """
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    lam, wmax = _certify(fast_lift, omega, dfdx)
    if lam <= 1.0:
        raise ValidationError(
            f"expansion certificate failed: min df/dx = {lam:.6f} <= 1")
    return FastSlowSystem(fast_lift, omega, dfdx, float(epsilon), lam, wmax,
                          preset_id, dict(preset_params or {}),
                          fast_depends_on_theta, kernel_id,
                          tuple(kernel_params), bool(binary_shift))


# ---------------------------------------------------------------------------
# presets
#
# All presets share the expanding fast family f(x) = 2x + a*sin(2*pi*x)
# (a = 0 for the pure doubling cases).  The slow fields are chosen so the
# averaged drift has the advertised zero structure while the per-step slow
# fluctuation stays bounded away from zero everywhere on the slow circle;
# a field whose x-dependence vanishes at some theta would freeze the slow
# noise there and make the fluctuation/metastability experiments
# degenerate.

PRESET_NAMES = ("doubling-pure", "single-sink", "double-sink", "zero-average")

_KERNEL_IDS = {name: i for i, name in enumerate(PRESET_NAMES)}


def _preset_defs(name, params):
    # returns (lift, omega, dfdx, resolved params, fast-depends-on-theta,
    #          kernel params, lift-is-exact-binary-shift)
    a = float(params.get("a", 0.05))
    if name == "doubling-pure":
        lift = lambda x, th: 2.0 * x
        dfdx = lambda x, th: np.full_like(np.asarray(x, dtype=np.float64), 2.0)
        omega = lambda x, th: np.cos(_TWO_PI * x)
        return lift, omega, dfdx, {"a": 0.0}, False, (0.0, 0.0), True
    if name == "single-sink":
        b = float(params.get("b", 0.7))
        lift = lambda x, th: 2.0 * x + a * np.sin(_TWO_PI * x)
        dfdx = lambda x, th: 2.0 + a * _TWO_PI * np.cos(_TWO_PI * x)
        omega = lambda x, th: (0.3 - np.sin(_TWO_PI * th)
                               * (1.0 + 0.5 * np.cos(_TWO_PI * x))
                               + b * np.cos(_TWO_PI * x))
        return lift, omega, dfdx, {"a": a, "b": b}, False, (a, b), False
    if name == "double-sink":
        amp = float(params.get("amp", 0.15))
        lift = lambda x, th: 2.0 * x + a * np.sin(_TWO_PI * x)
        dfdx = lambda x, th: 2.0 + a * _TWO_PI * np.cos(_TWO_PI * x)
        omega = lambda x, th: (np.cos(_TWO_PI * x)
                               - amp * np.sin(2.0 * _TWO_PI * th)
                               * (1.0 + 0.5 * np.cos(_TWO_PI * x)))
        return lift, omega, dfdx, {"a": a, "amp": amp}, False, (a, amp), False
    if name == "zero-average":
        g = float(params.get("g", 0.5))
        lift = lambda x, th: 2.0 * x
        dfdx = lambda x, th: np.full_like(np.asarray(x, dtype=np.float64), 2.0)
        omega = lambda x, th: np.cos(_TWO_PI * x) * (1.0 + g * np.sin(_TWO_PI * th))
        return lift, omega, dfdx, {"a": 0.0, "g": g}, False, (g, 0.0), True
    raise ValidationError(
        f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def make_preset(name: str, epsilon: float, **params) -> FastSlowSystem:
    """Build a named preset system.

    ``single-sink``
        f = 2x + a sin(2 pi x); slow field 0.3 - sin(2 pi theta)
        (1 + 0.5 cos(2 pi x)) + b cos(2 pi x).  One stable zero of the
        averaged drift (a = 0.05, b = 0.7 by default).
    ``double-sink``
        Same fast map; slow field cos(2 pi x) - amp sin(4 pi theta)
        (1 + 0.5 cos(2 pi x)).  Two stable zeros with finite hopping
        barriers; amp = 0.15 keeps well hopping observable at eps down
        to 1/80 within desk-scale runs.
    ``doubling-pure``
        f = 2x, slow field cos(2 pi x); averaged drift identically zero
        with unit-Lebesgue fast equilibrium.
    ``zero-average``
        f = 2x, slow field cos(2 pi x)(1 + g sin(2 pi theta)); averaged
        drift identically zero at every theta.
    """
    lift, omega, dfdx, resolved, dep, kpar, binary = _preset_defs(name, params)
    known = set(resolved) | {"epsilon"}
    unknown = set(params) - known
    if unknown:
        raise ValidationError(f"unknown parameters for preset {name!r}: {sorted(unknown)}")
    return make_system(lift, omega, dfdx, epsilon, preset_id=name,
                       preset_params=resolved, fast_depends_on_theta=dep,
                       kernel_id=_KERNEL_IDS[name], kernel_params=kpar,
                       binary_shift=binary)


DEFAULT_PRESET = "single-sink"


# ---------------------------------------------------------------------------
# initial laws


class InitialLaw:
    """Product initial law: x ~ rho(x) dx on the circle, theta = theta0.

    ``rho`` must be C^2 with unit integral; the integral is checked by
    composite Simpson quadrature to 1e-10.  Sampling inverts a tabulated
    CDF (2**14 nodes, linear interpolation between nodes).
    """

    def __init__(self, density: Callable | None = None, theta0: float = 0.0):
        self.theta0 = float(theta0)
        grid = np.linspace(0.0, 1.0, _TABLE_SIZE + 1)
        if density is None:
            dens = np.ones_like(grid)
            self.density = lambda x: np.ones_like(np.asarray(x, dtype=np.float64))
        else:
            dens = np.asarray(density(grid), dtype=np.float64)
            if dens.shape != grid.shape:
                dens = np.broadcast_to(dens, grid.shape).copy()
            self.density = density
        if np.any(dens < 0):
            raise ValidationError("initial density must be nonnegative")
        total = float(simpson(dens, x=grid))
        if abs(total - 1.0) > 1e-10:
            raise ValidationError(
                f"initial density must integrate to 1 (got {total:.12f})")
        cdf = np.concatenate([
            [0.0], np.cumsum((dens[1:] + dens[:-1]) / 2.0) / _TABLE_SIZE])
        cdf /= cdf[-1]
        self._grid = grid
        self._cdf = cdf

    @classmethod
    def uniform(cls, theta0: float = 0.0) -> "InitialLaw":
        return cls(None, theta0)

    def ppf(self, u):
        """Inverse CDF by linear interpolation on the table."""
        return np.interp(u, self._cdf, self._grid)

    def sample_x(self, rng: RngStream, size=None):
        return self.ppf(rng.uniform(size=size))


def sample_initial(law: InitialLaw, rng: RngStream, size: int | None = None):
    """Draw initial product states: x by inverse CDF, theta = theta0 exactly.

    With ``size=None`` returns a single :class:`ProductState`; otherwise
    arrays ``(xs, thetas)``.
    """
    if size is None:
        return ProductState(float(law.sample_x(rng)), law.theta0)
    xs = law.sample_x(rng, size=size)
    return xs, np.full(size, law.theta0)


# ---------------------------------------------------------------------------
# evolution


def step(system: FastSlowSystem, state: ProductState) -> ProductState:
    """One map step; both coordinates wrapped to [0, 1).

    The unwrapped slow increment of the same step is available as
    ``system.slow_increment(state)``.  Do not iterate this to build long
    binary-shift trajectories: float doubling loses one bit per step;
    the trajectory APIs use an exact bit-register realization instead.
    """
    x, th = state
    x_new = float(system.fast_lift(x, th)) % 1.0
    th_new = (th + system.epsilon * float(system.omega(x, th))) % 1.0
    return ProductState(x_new, th_new)


@dataclass(frozen=True)
class SlowPath:
    """Continuous-time slow trajectory, linearly interpolated between steps.

    ``values`` holds the unwrapped slow coordinate at slow times
    ``eps * n``; ``__call__`` evaluates the interpolant.
    """

    epsilon: float
    times: np.ndarray
    values: np.ndarray
    x_final: float

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValidationError("evaluation time outside the simulated window")
        out = np.interp(t, self.times, self.values)
        return float(out) if out.ndim == 0 else out

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def wrapped(self):
        return self.values % 1.0


_REG_FILL_BITS = 11  # sub-mantissa register bits randomized at init


def bit_word_count(n_steps: int) -> int:
    """uint64 words needed for the register fill plus one bit per step."""
    return (int(n_steps) + _REG_FILL_BITS + 63) // 64


class FastStepper:
    """Advances an ensemble of fast coordinates one map step at a time.

    For generic lifts this iterates the float map.  For exact binary
    shifts (``system.binary_shift``) it keeps a 64-bit register per
    trajectory, shifting in one fresh fair bit per step from ``words``;
    the resulting sequence has the exact joint law of the Lebesgue- (or
    smooth-density-) started doubling orbit, which float iteration does
    not (it collapses to 0 after 53 steps).  The 11 register bits below
    the float mantissa are filled from the stream as well: left
    deterministic they would surface as a spurious bias once the
    original mantissa bits shift out.
    """

    def __init__(self, system: FastSlowSystem, x0, words=None):
        self.system = system
        arr = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
        self.binary = bool(system.binary_shift)
        self._n = _REG_FILL_BITS
        if self.binary:
            if words is None:
                raise ValidationError(
                    "binary-shift stepping needs pregenerated bit words")
            self.words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
            if self.words.shape[0] != arr.size:
                raise ValidationError("one row of bit words per trajectory")
            if self.words.shape[1] < 1:
                raise ValidationError("need at least one bit word")
            fill = self.words[:, 0] >> np.uint64(64 - _REG_FILL_BITS)
            self.regs = ((arr * 2.0 ** 53).astype(np.uint64)
                         << np.uint64(_REG_FILL_BITS)) | fill
        else:
            self._x = arr

    @property
    def x(self) -> np.ndarray:
        if self.binary:
            # top 53 bits exactly; strictly inside [0, 1)
            return (self.regs >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return self._x

    def step(self, theta_mod):
        """Advance x by one application of the fast map."""
        if self.binary:
            n = self._n
            if (n >> 6) >= self.words.shape[1]:
                raise ValidationError("bit word supply exhausted")
            bit = (self.words[:, n >> 6] >> np.uint64(63 - (n & 63))) \
                & np.uint64(1)
            self.regs = (self.regs << np.uint64(1)) | bit
            self._n = n + 1
        else:
            self._x = self.system.fast_lift(self._x, theta_mod) % 1.0


def simulate_slow_path(system: FastSlowSystem, law: InitialLaw, horizon: float,
                       seed: int, stream: int = 0,
                       max_steps: int = 100_000_000) -> SlowPath:
    """Run one trajectory to slow time ``horizon``; the slow coordinate is
    recorded unwrapped at every step.

    Raises :class:`BudgetExceededError` when ``ceil(horizon/eps)`` would
    exceed ``max_steps``.
    """
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if system.epsilon <= 0:
        raise ValidationError("path simulation needs epsilon > 0")
    n_steps = int(math.ceil(horizon / system.epsilon - 1e-12))
    if n_steps > max_steps:
        raise BudgetExceededError(
            f"trajectory needs {n_steps} steps, cap is {max_steps}")
    rng = RngStream(seed, stream)
    x0 = float(law.sample_x(rng))
    words = rng.bit_words((1, bit_word_count(n_steps))) \
        if system.binary_shift else None
    stepper = FastStepper(system, [x0], words)
    theta_unwrapped = law.theta0
    eps = system.epsilon
    values = np.empty(n_steps + 1)
    values[0] = theta_unwrapped
    for n in range(n_steps):
        th_mod = theta_unwrapped % 1.0
        incr = eps * float(system.omega(stepper.x[0], th_mod))
        stepper.step(th_mod)
        theta_unwrapped += incr
        values[n + 1] = theta_unwrapped
    times = np.arange(n_steps + 1) * eps
    return SlowPath(eps, times, values, float(stepper.x[0]))


def ensemble_paths(system: FastSlowSystem, law: InitialLaw, horizon: float,
                   seed: int, n_samples: int, eval_times,
                   stream_offset: int = 0, max_steps: int = 100_000_000,
                   record_sup_against=None):
    """Vectorized ensemble of slow trajectories.

    Each sample ``k`` draws its initial fast coordinate from stream
    ``(seed, stream_offset + k)`` and then evolves deterministically, so
    any contiguous block of samples reproduces identically under any
    worker partitioning.

    Parameters
    ----------
    eval_times : array-like
        Slow times at which the (unwrapped, linearly interpolated) slow
        coordinate is recorded.
    record_sup_against : callable or None
        Optional reference curve Theta(t); when given, the running sup of
        |theta_eps(t) - Theta(t)| over the whole step grid is returned as
        well.

    Returns
    -------
    values : ndarray (n_samples, len(eval_times))
    sups : ndarray (n_samples,) or None
    """
    if system.epsilon <= 0:
        raise ValidationError("ensemble simulation needs epsilon > 0")
    eval_times = np.asarray(eval_times, dtype=np.float64)
    if np.any(eval_times < 0) or np.any(eval_times > horizon + 1e-12):
        raise ValidationError("evaluation times must lie in [0, horizon]")
    eps = system.epsilon
    n_steps = int(math.ceil(horizon / eps - 1e-12))
    if n_steps > max_steps:
        raise BudgetExceededError(
            f"trajectory needs {n_steps} steps, cap is {max_steps}")

    x = np.empty(n_samples)
    words = np.empty((n_samples, bit_word_count(n_steps)), dtype=np.uint64) \
        if system.binary_shift else None
    for k in range(n_samples):
        rng = RngStream(seed, stream_offset + k)
        x[k] = law.sample_x(rng)
        if words is not None:
            words[k] = rng.bit_words(words.shape[1])
    stepper = FastStepper(system, x, words)
    theta = np.full(n_samples, law.theta0)

    # precompute, per evaluation time, the bracketing step index and weight
    idx = np.minimum((eval_times / eps).astype(np.int64), n_steps - 1)
    idx = np.maximum(idx, 0)
    frac = eval_times / eps - idx

    values = np.empty((n_samples, eval_times.size))
    ref = None
    sups = None
    if record_sup_against is not None:
        ref = record_sup_against(np.arange(n_steps + 1) * eps)
        sups = np.abs(theta - ref[0])

    prev = theta.copy()
    for n in range(n_steps):
        th_mod = theta % 1.0
        w = system.omega(stepper.x, th_mod)
        stepper.step(th_mod)
        prev, theta = theta, theta + eps * w
        if sups is not None:
            np.maximum(sups, np.abs(theta - ref[n + 1]), out=sups)
        hit = idx == n
        if np.any(hit):
            f = frac[hit]
            values[:, hit] = prev[:, None] * (1.0 - f) + theta[:, None] * f
    # times exactly at the final grid point
    at_end = eval_times >= n_steps * eps - 1e-12
    if np.any(at_end):
        values[:, at_end] = theta[:, None]
    return values, sups
