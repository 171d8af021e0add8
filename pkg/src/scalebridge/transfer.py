"""Transfer-operator numerics for the frozen fast maps.

For each frozen slow value z the fast map x -> f(x, z) is uniformly
expanding, and its transfer operator is discretized on N equal cells
(Ulam's method): entry (i, j) is the Lebesgue fraction of cell j whose
image lands in cell i.  Because the lift is strictly increasing, the
fraction boundaries are preimages of cell edges and are resolved by
monotone bisection to far below the requested mass tolerance.

On top of the discretized operator sit the three quantities the
averaging experiments need at every z:

* the fixed density of the operator (the statistical equilibrium of the
  frozen map),
* the averaged slow drift, i.e. the slow field integrated against that
  density,
* the Green-Kubo variance of the centered slow field, the lag sum
  sum_m <w_hat . w_hat o f^m> computed by repeatedly applying the
  operator to the signed measure w_hat * density.

``build_profile`` tabulates drift and variance on a z-grid and wraps
them in periodic cubic splines, verified midway between nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from ._kernels import kernel_args, occupation_birkhoff
from .dynamics import FastStepper, bit_word_count
from .errors import (ConvergenceError, ResolutionError, ValidationError,
                     VerificationError, StepRejectionError)
from .stats import RngStream

__all__ = [
    "ulam_matrix",
    "SrbDensity",
    "srb_density",
    "averaged_drift",
    "GreenKuboResult",
    "green_kubo_variance",
    "trajectory_density",
    "density_l1",
    "SrbProfile",
    "build_profile",
]

_BISECT_ITERS = 48  # resolves edge preimages to ~1e-15 of a cell


def _validate_cells(n_cells: int):
    if n_cells < 2 ** 6 or n_cells > 2 ** 16 or (n_cells & (n_cells - 1)) != 0:
        raise ValidationError(
            f"cell count must be a power of two in [2^6, 2^16], got {n_cells}")


def ulam_matrix(system, z: float, n_cells: int, mass_tol: float = 1e-10):
    """Column-stochastic Ulam discretization of the frozen map at z.

    Returns a ``scipy.sparse.csc_matrix`` P with P[i, j] the fraction of
    cell j mapping into cell i.  Column sums are 1 to within 1e-12.
    """
    _validate_cells(n_cells)
    if mass_tol <= 0 or mass_tol > 1e-6:
        raise ValidationError("mass_tol must lie in (0, 1e-6]")
    lift = system.fast_lift
    N = n_cells
    edges = np.arange(N + 1) / N
    vals = np.asarray(lift(edges, z), dtype=np.float64)
    la, lb = vals[:-1], vals[1:]
    if np.any(lb <= la):
        raise ValidationError("fast lift must be strictly increasing in x")
    degree = vals[-1] - vals[0]
    if abs(degree - round(degree)) > 1e-9 or round(degree) < 1:
        raise ValidationError(
            f"fast lift must close up with positive integer degree, got {degree}")

    # interior cell-edge crossings y = k/N with la_j < y < lb_j
    k_lo = np.floor(la * N + 1e-12).astype(np.int64) + 1
    k_hi = np.ceil(lb * N - 1e-12).astype(np.int64) - 1
    counts = np.maximum(k_hi - k_lo + 1, 0)
    total = int(counts.sum())

    cell_of = np.repeat(np.arange(N), counts)
    offset = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k_idx = k_lo[cell_of] + (np.arange(total) - offset[cell_of])
    targets_y = k_idx / N

    # monotone bisection for the edge preimages inside each source cell
    lo = edges[:-1][cell_of].copy()
    hi = edges[1:][cell_of].copy()
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        below = np.asarray(lift(mid, z), dtype=np.float64) < targets_y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    roots = 0.5 * (lo + hi)

    # assemble segment masses: cell j splits at its sorted roots
    rows = []
    cols = []
    data = []
    h = 1.0 / N
    start = edges[:-1]
    stop = edges[1:]
    # segment s of cell j (s = 0..counts_j) maps into cell k_lo[j]-1+s mod N
    seg_counts = counts + 1
    n_seg = int(seg_counts.sum())
    seg_cell = np.repeat(np.arange(N), seg_counts)
    seg_off = np.concatenate([[0], np.cumsum(seg_counts)[:-1]])
    seg_idx = np.arange(n_seg) - seg_off[seg_cell]

    # segment boundaries: left = start or previous root; right = next root or stop
    left = np.where(seg_idx == 0, start[seg_cell], 0.0)
    right = np.where(seg_idx == counts[seg_cell], stop[seg_cell], 0.0)
    has_left_root = seg_idx > 0
    has_right_root = seg_idx < counts[seg_cell]
    root_base = offset[seg_cell]
    left[has_left_root] = roots[root_base[has_left_root] + seg_idx[has_left_root] - 1]
    right[has_right_root] = roots[root_base[has_right_root] + seg_idx[has_right_root]]

    widths = np.maximum(right - left, 0.0)
    target_cell = (k_lo[seg_cell] - 1 + seg_idx) % N
    keep = widths > 0
    rows = target_cell[keep]
    cols = seg_cell[keep]
    data = widths[keep] / h

    P = sp.csc_matrix((data, (rows, cols)), shape=(N, N))
    P.sum_duplicates()
    col_sums = np.asarray(P.sum(axis=0)).ravel()
    err = float(np.max(np.abs(col_sums - 1.0)))
    if err > 1e-12:
        raise ResolutionError(
            f"column mass defect {err:.3e} exceeds 1e-12 after subdivision")
    if err > mass_tol:
        raise ResolutionError(
            f"column mass defect {err:.3e} exceeds requested {mass_tol:.1e}")
    return P


@dataclass(frozen=True)
class SrbDensity:
    """Fixed density of a discretized transfer operator.

    ``values`` are cell-midpoint density values with unit mean (so the
    corresponding measure has total mass one).
    """

    values: np.ndarray
    n_cells: int
    iterations: int
    residual: float

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values / self.n_cells

    def mean_of(self, observable_values: np.ndarray) -> float:
        """Integral of a cell-midpoint-sampled observable against the density."""
        return float(np.dot(observable_values, self.values) / self.n_cells)


def srb_density(P, tol: float = 1e-13, max_iter: int = 10_000) -> SrbDensity:
    """Power iteration for the fixed density of a column-stochastic matrix.

    Stops when successive iterates differ by less than ``tol`` in L^1
    (density scale).  ``tol`` below 1e-13 is rejected: column-sum
    roundoff makes tighter demands meaningless.
    """
    if tol < 1e-13:
        raise ValidationError("tolerance below 1e-13 is not resolvable")
    N = P.shape[0]
    mass = np.full(N, 1.0 / N)
    it = 0
    residual = np.inf
    while it < max_iter:
        new = P @ mass
        it += 1
        residual = float(np.abs(new - mass).sum())
        mass = new
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration stalled at residual {residual:.3e} "
            f"after {max_iter} iterations")
    if residual >= tol:
        raise ConvergenceError(
            f"power iteration stalled at residual {residual:.3e}")
    mass = np.maximum(mass, 0.0)
    mass /= mass.sum()
    return SrbDensity(mass * N, N, it, residual)


def _midpoints(n_cells: int) -> np.ndarray:
    return (np.arange(n_cells) + 0.5) / n_cells


def averaged_drift(system, z: float, n_cells: int = 4096,
                   operator=None, density: SrbDensity | None = None) -> float:
    """Slow field integrated against the frozen-map equilibrium at z.

    The quadrature pairs cell-midpoint field values with the fixed
    density of the Ulam operator.  ``operator``/``density`` may be passed
    to reuse a previously computed discretization.
    """
    if density is None:
        if operator is None:
            operator = ulam_matrix(system, z, n_cells)
        density = srb_density(operator)
    w = np.asarray(system.omega(_midpoints(density.n_cells), z), dtype=np.float64)
    return density.mean_of(w)


@dataclass(frozen=True)
class GreenKuboResult:
    """Green-Kubo lag sum for the centered slow field at a frozen z."""

    value: float
    drift: float
    truncation_m: int
    last_term: float
    converged: bool
    terms: np.ndarray

    def __float__(self):
        return self.value


def green_kubo_variance(system, z: float, n_cells: int = 4096,
                        m_max: int = 64, tail_tol: float = 1e-9,
                        operator=None, density: SrbDensity | None = None
                        ) -> GreenKuboResult:
    """Lag-sum variance of the slow field under the frozen map at z.

    Computes mu(w_hat^2) + 2 sum_{m>=1} mu(w_hat o f^m . w_hat) where
    w_hat is the slow field centered by the same discretization's drift.
    Each lag term applies the Ulam operator once to the signed measure
    w_hat * density.  Truncates at the first lag whose term falls below
    ``tail_tol`` in absolute value; if that never happens the result is
    flagged ``converged=False`` (reported, not fatal).
    """
    if m_max < 1:
        raise ValidationError("m_max must be at least 1")
    if tail_tol <= 0:
        raise ValidationError("tail_tol must be positive")
    if operator is None:
        operator = ulam_matrix(system, z, n_cells)
    if density is None:
        density = srb_density(operator)
    N = density.n_cells
    mids = _midpoints(N)
    w = np.asarray(system.omega(mids, z), dtype=np.float64)
    drift = density.mean_of(w)
    w_hat = w - drift

    var0 = density.mean_of(w_hat * w_hat)
    signed = w_hat * density.cell_masses  # signed measure, total mass ~ 0
    terms = [var0]
    acc = var0
    truncation_m = m_max
    converged = False
    last = var0
    for m in range(1, m_max + 1):
        signed = operator @ signed
        term = float(np.dot(w_hat, signed))
        terms.append(term)
        last = term
        if abs(term) < tail_tol:
            truncation_m = m
            converged = True
            break
        acc += 2.0 * term
    else:
        truncation_m = m_max
    return GreenKuboResult(acc, drift, truncation_m, last, converged,
                           np.array(terms))


def trajectory_density(system, z: float, n_steps: int, n_bins: int,
                       seed: int, stream: int = 0) -> np.ndarray:
    """Occupation density of one long frozen-map orbit at slow value z.

    Starts from a Lebesgue draw and iterates the fast map with the slow
    coordinate pinned; returns unit-mean density values on ``n_bins``
    equal cells, directly comparable to :func:`srb_density` output on
    the same grid.  Binary-shift systems consume one fresh stream bit
    per step so the orbit realizes the exact Bernoulli law instead of
    collapsing onto the float fixed point.  No burn-in is applied: the
    frozen maps mix exponentially fast, so the transient weighs
    O(log(n_bins)/n_steps) in the histogram.
    """
    if n_steps < 1:
        raise ValidationError("trajectory needs at least one step")
    if n_bins < 2 or n_bins > 2 ** 20:
        raise ValidationError("bin count must lie in [2, 2^20]")
    rng = RngStream(seed, stream)
    x0 = float(rng.uniform())
    ka = kernel_args(system)
    if ka is not None:
        kind, p0, p1 = ka
        if system.binary_shift:
            bits = rng.bit_words(bit_word_count(n_steps))
        else:
            bits = np.empty(0, dtype=np.uint64)
        hist, _, _, _ = occupation_birkhoff(
            kind, p0, p1, x0, float(z) % 1.0, 0.0, n_steps, n_bins, bits)
    else:
        hist = np.zeros(n_bins, dtype=np.int64)
        frozen = system.with_epsilon(0.0) if system.epsilon != 0.0 else system
        words = rng.bit_words((1, bit_word_count(n_steps))) \
            if system.binary_shift else None
        stepper = FastStepper(frozen, np.array([x0]), words)
        zmod = float(z) % 1.0
        for _ in range(n_steps):
            idx = min(int(stepper.x[0] * n_bins), n_bins - 1)
            hist[idx] += 1
            stepper.step(np.array([zmod]))
    return hist.astype(np.float64) * (n_bins / n_steps)


def density_l1(a, b) -> float:
    """L^1 distance between two unit-mean densities on matching grids.

    Accepts :class:`SrbDensity` instances or raw density-value arrays.
    """
    va = a.values if isinstance(a, SrbDensity) else np.asarray(a)
    vb = b.values if isinstance(b, SrbDensity) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValidationError(
            f"density grids differ: {va.shape} vs {vb.shape}")
    return float(np.abs(va - vb).mean())


# ---------------------------------------------------------------------------
# profiles over the slow circle


@dataclass
class SrbProfile:
    """Averaged drift and Green-Kubo variance tabulated over slow values.

    Values live on ``z_grid`` and are interpolated by cubic splines
    (periodic on the circle).  ``metadata`` records the discretization
    parameters, truncation diagnostics and the staggered-grid
    verification error.
    """

    z_grid: np.ndarray
    drift_bar: np.ndarray
    gk_variance: np.ndarray
    truncation_m: np.ndarray
    last_term: np.ndarray
    periodic: bool = True
    z_range: tuple = (0.0, 1.0)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z_grid = np.asarray(self.z_grid, dtype=np.float64)
        self.drift_bar = np.asarray(self.drift_bar, dtype=np.float64)
        self.gk_variance = np.asarray(self.gk_variance, dtype=np.float64)
        if self.periodic:
            lo, hi = self.z_range
            xs = np.concatenate([self.z_grid, [self.z_grid[0] + (hi - lo)]])
            dr = np.concatenate([self.drift_bar, [self.drift_bar[0]]])
            gk = np.concatenate([self.gk_variance, [self.gk_variance[0]]])
            self._drift_spline = CubicSpline(xs, dr, bc_type="periodic")
            self._gk_spline = CubicSpline(xs, gk, bc_type="periodic")
        else:
            self._drift_spline = CubicSpline(self.z_grid, self.drift_bar)
            self._gk_spline = CubicSpline(self.z_grid, self.gk_variance)
        self._drift_prime = self._drift_spline.derivative()

    def _map_in(self, z):
        z = np.asarray(z, dtype=np.float64)
        lo, hi = self.z_range
        if self.periodic:
            return lo + (z - lo) % (hi - lo)
        if np.any(z < lo - 1e-12) or np.any(z > hi + 1e-12):
            raise StepRejectionError(
                f"evaluation at z={z} outside certified range [{lo}, {hi}]")
        return z

    def drift(self, z):
        out = self._drift_spline(self._map_in(z))
        return float(out) if np.ndim(out) == 0 else out

    def drift_prime(self, z):
        out = self._drift_prime(self._map_in(z))
        return float(out) if np.ndim(out) == 0 else out

    def gk_var(self, z):
        out = self._gk_spline(self._map_in(z))
        return float(out) if np.ndim(out) == 0 else out

    def noise_sigma(self, z):
        return np.sqrt(np.clip(self.gk_var(z), 0.0, None))

    def sign_changes(self) -> int:
        """Number of sign changes of the drift around the sampled circle."""
        v = self.drift_bar
        s = np.sign(v)
        s = s[s != 0]
        if s.size == 0:
            return 0
        cyc = np.concatenate([s, s[:1]]) if self.periodic else s
        return int(np.sum(cyc[1:] != cyc[:-1]))

    @classmethod
    def from_callables(cls, drift_fn: Callable, gk_fn: Callable,
                       n_nodes: int = 64, z_range=(0.0, 1.0),
                       periodic: bool = True, metadata: dict | None = None
                       ) -> "SrbProfile":
        """Synthetic profile from closed-form drift/variance curves."""
        lo, hi = z_range
        if periodic:
            zs = lo + (hi - lo) * np.arange(n_nodes) / n_nodes
        else:
            zs = np.linspace(lo, hi, n_nodes)
        dr = np.asarray(drift_fn(zs), dtype=np.float64)
        gk = np.asarray(gk_fn(zs), dtype=np.float64)
        if dr.shape != zs.shape:
            dr = np.broadcast_to(dr, zs.shape).copy()
        if gk.shape != zs.shape:
            gk = np.broadcast_to(gk, zs.shape).copy()
        meta = {"synthetic": True}
        meta.update(metadata or {})
        return cls(zs, dr, gk, np.zeros(n_nodes, dtype=int),
                   np.zeros(n_nodes), periodic, (float(lo), float(hi)), meta)


def build_profile(system, n_cells: int = 4096, n_nodes: int = 64,
                  m_max: int = 64, tail_tol: float = 1e-9,
                  node_tol: float = 1e-3, verify: bool = True) -> SrbProfile:
    """Tabulate drift and Green-Kubo variance on an equispaced z-grid.

    When the fast map does not depend on the slow coordinate the Ulam
    operator and its fixed density are computed once and reused for all
    nodes.  The splines are verified at staggered midpoints against
    direct recomputation; a discrepancy above ``10 * node_tol`` raises
    :class:`VerificationError` (the maximum error is always recorded in
    ``metadata['verification_error']``).
    """
    if n_nodes < 16:
        raise ValidationError("profile needs at least 16 nodes")
    zs = np.arange(n_nodes) / n_nodes

    shared_op = shared_dens = None
    if not system.fast_depends_on_theta:
        shared_op = ulam_matrix(system, 0.0, n_cells)
        shared_dens = srb_density(shared_op)

    def node_values(z):
        op, dens = shared_op, shared_dens
        if op is None:
            op = ulam_matrix(system, z, n_cells)
            dens = srb_density(op)
        gk = green_kubo_variance(system, z, n_cells, m_max, tail_tol,
                                 operator=op, density=dens)
        return gk.drift, gk.value, gk.truncation_m, gk.last_term

    drift = np.empty(n_nodes)
    gk = np.empty(n_nodes)
    trunc = np.empty(n_nodes, dtype=int)
    last = np.empty(n_nodes)
    for i, z in enumerate(zs):
        drift[i], gk[i], trunc[i], last[i] = node_values(z)

    profile = SrbProfile(zs, drift, gk, trunc, last, periodic=True,
                         metadata={
                             "preset": system.preset_id,
                             "preset_params": dict(system.preset_params),
                             "epsilon": system.epsilon,
                             "n_cells": n_cells,
                             "n_nodes": n_nodes,
                             "m_max": m_max,
                             "tail_tol": tail_tol,
                             "node_tol": node_tol,
                         })

    stagger = zs + 0.5 / n_nodes
    max_err = 0.0
    for z in stagger:
        d_direct, g_direct, _, _ = node_values(z)
        max_err = max(max_err,
                      abs(d_direct - profile.drift(z)),
                      abs(g_direct - profile.gk_var(z)))
    profile.metadata["verification_error"] = max_err
    if verify and max_err > 10.0 * node_tol:
        raise VerificationError(
            f"staggered-grid interpolation error {max_err:.3e} exceeds "
            f"{10 * node_tol:.1e}")
    return profile
