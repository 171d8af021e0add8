"""Compiled inner loops.

Every kernel here is RNG-free: randomness arrives as pregenerated arrays
so that draw order (and hence reproducibility) is controlled entirely by
the callers' stream bookkeeping.  The preset map formulas are duplicated
from :mod:`scalebridge.dynamics` under integer kind codes; the unit tests
pin the two implementations against each other pointwise.

Kind codes (must match dynamics.PRESET_NAMES order):
    0 doubling-pure, 1 single-sink, 2 double-sink, 3 zero-average.
Observable codes:
    0 constant 1, 1 cos(2 pi x), 2 sin(2 pi theta), 3 cos(2 pi theta).
"""

from __future__ import annotations

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi


def kernel_args(system):
    """(kind, p0, p1) triple for a preset-backed system, or None."""
    if system.kernel_id < 0:
        return None
    p = tuple(system.kernel_params) + (0.0, 0.0)
    return int(system.kernel_id), float(p[0]), float(p[1])


@njit(cache=True)
def _lift_k(kind, x, th, p0, p1):
    if kind == 1 or kind == 2:
        return 2.0 * x + p0 * np.sin(TWO_PI * x)
    return 2.0 * x


@njit(cache=True)
def _omega_k(kind, x, th, p0, p1):
    if kind == 0:
        return np.cos(TWO_PI * x)
    if kind == 1:
        return (0.3 - np.sin(TWO_PI * th) * (1.0 + 0.5 * np.cos(TWO_PI * x))
                + p1 * np.cos(TWO_PI * x))
    if kind == 2:
        return (np.cos(TWO_PI * x)
                - p1 * np.sin(2.0 * TWO_PI * th) * (1.0 + 0.5 * np.cos(TWO_PI * x)))
    return np.cos(TWO_PI * x) * (1.0 + p0 * np.sin(TWO_PI * th))


@njit(cache=True)
def _observable_k(obs, x, th):
    if obs == 0:
        return 1.0
    if obs == 1:
        return np.cos(TWO_PI * x)
    if obs == 2:
        return np.sin(TWO_PI * th)
    return np.cos(TWO_PI * th)


@njit(cache=True)
def eval_map_point(kind, x, th, p0, p1):
    """One step of the skew product sans the epsilon factor (for tests)."""
    return _lift_k(kind, x, th, p0, p1) % 1.0, _omega_k(kind, x, th, p0, p1)


_IS_BINARY = (True, False, False, True)  # lifts that are exactly 2x

# Register layout: top 53 bits hold the float mantissa of x, the bottom
# 11 are filled from the bit stream at init (left deterministic they
# would surface as bias once the mantissa shifts out).  Step n consumes
# stream bit n + 11, MSB first within each word.
_FILL = 11


@njit(cache=True)
def _reg_init(x, bits):
    fill = bits[0] >> np.uint64(64 - _FILL)
    return (np.uint64(x * 9007199254740992.0) << np.uint64(_FILL)) | fill


@njit(cache=True)
def _reg_x(reg):
    # top 53 bits exactly representable; strictly inside [0, 1)
    return np.float64(reg >> np.uint64(11)) * 1.1102230246251565e-16  # 2**-53


@njit(cache=True)
def _reg_step(reg, bits, n):
    m = n + _FILL
    bit = (bits[m >> 6] >> np.uint64(63 - (m & 63))) & np.uint64(1)
    return (reg << np.uint64(1)) | bit


@njit(cache=True)
def occupation_birkhoff(kind, p0, p1, x0, th0, eps, n_steps, n_bins, bits):
    """Occupation histogram of x and Birkhoff sum of the slow field.

    Observables are sampled at the pre-step point; eps = 0 freezes the
    slow coordinate (frozen-map statistics).  For binary-shift kinds
    ``bits`` must hold dynamics.bit_word_count(n_steps) fresh uint64
    words (register fill plus one bit per step); other kinds ignore it
    (pass an empty array).
    """
    binary = kind == 0 or kind == 3
    hist = np.zeros(n_bins, dtype=np.int64)
    acc = 0.0
    reg = _reg_init(x0, bits) if binary else np.uint64(0)
    x = x0
    th = th0
    for n in range(n_steps):
        if binary:
            x = _reg_x(reg)
        idx = int(x * n_bins)
        if idx >= n_bins:
            idx = n_bins - 1
        hist[idx] += 1
        w = _omega_k(kind, x, th, p0, p1)
        acc += w
        if binary:
            reg = _reg_step(reg, bits, n)
        else:
            x = _lift_k(kind, x, th, p0, p1) % 1.0
        th = (th + eps * w) % 1.0
    if binary:
        x = _reg_x(reg)
    return hist, acc, x, th


@njit(cache=True)
def _band_of(th, band_lo, band_hi):
    """Index of the commitment band containing th, or -1 (bands may wrap)."""
    for j in range(band_lo.shape[0]):
        lo = band_lo[j]
        hi = band_hi[j]
        if lo <= hi:
            if lo <= th <= hi:
                return j
        elif th >= lo or th <= hi:
            return j
    return -1


@njit(cache=True)
def residence_rle(kind, p0, p1, x0, th0, eps, n_steps, band_lo, band_hi,
                  basins_out, lengths_out, bits):
    """Committed visits to sink wells along one trajectory.

    ``band_lo``/``band_hi`` delimit one commitment band per sink (wrapping
    allowed).  The visit to well j lasts from the step the trajectory
    enters band j until it first enters a different band, so jitter
    around an unstable zero cannot fragment runs.  Steps before the
    first band entry are discarded.  Returns the number of runs written
    (the final, incomplete visit included), or -1 on overflow.  ``bits``
    feeds binary-shift kinds as in :func:`occupation_birkhoff`.
    """
    binary = kind == 0 or kind == 3
    max_runs = basins_out.shape[0]
    reg = _reg_init(x0, bits) if binary else np.uint64(0)
    x = x0
    th = th0
    cur = _band_of(th, band_lo, band_hi)
    n_runs = 0
    cur_len = 0
    for n in range(n_steps):
        if binary:
            x = _reg_x(reg)
        w = _omega_k(kind, x, th, p0, p1)
        if binary:
            reg = _reg_step(reg, bits, n)
        else:
            x = _lift_k(kind, x, th, p0, p1) % 1.0
        th = (th + eps * w) % 1.0
        cur_len += 1
        nb = _band_of(th, band_lo, band_hi)
        if nb >= 0 and cur < 0:
            cur = nb          # first commitment: discard the lead-in
            cur_len = 0
        elif nb >= 0 and nb != cur:
            if n_runs >= max_runs:
                return -1
            basins_out[n_runs] = cur
            lengths_out[n_runs] = cur_len
            n_runs += 1
            cur = nb
            cur_len = 0
    if cur < 0:
        return 0
    if n_runs >= max_runs:
        return -1
    basins_out[n_runs] = cur
    lengths_out[n_runs] = cur_len
    return n_runs + 1


@njit(cache=True)
def tail_means(kind, p0, p1, obs, xs, ths, eps, n_burn, n_tail, bits):
    """Per-trajectory tail averages of an observable after burn-in.

    ``bits`` is (n_traj, n_words) for binary-shift kinds, one fresh bit
    per step per trajectory; other kinds take an empty (n_traj, 0) view.
    """
    binary = kind == 0 or kind == 3
    n_traj = xs.shape[0]
    out = np.empty(n_traj)
    for k in range(n_traj):
        x = xs[k]
        th = ths[k]
        reg = _reg_init(x, bits[k]) if binary else np.uint64(0)
        acc = 0.0
        for n in range(n_burn + n_tail):
            if binary:
                x = _reg_x(reg)
            if n >= n_burn:
                acc += _observable_k(obs, x, th)
            w = _omega_k(kind, x, th, p0, p1)
            if binary:
                reg = _reg_step(reg, bits[k], n)
            else:
                x = _lift_k(kind, x, th, p0, p1) % 1.0
            th = (th + eps * w) % 1.0
        out[k] = acc / n_tail
    return out


@njit(cache=True)
def jump_mode_series(energies, waits, bonds, angles, sample_dt, n_samples,
                     weights, out):
    """Energy-rotation jump chain, recording a weighted mode at fixed times.

    ``waits`` must already be scaled to total-rate units (Exp(1)/n_bonds
    for a uniform bond clock).  The configuration is updated in place.
    Returns the number of events consumed, or -1 if the event buffers
    were exhausted before the last sample time.
    """
    n_sites = energies.shape[0]
    n_events = waits.shape[0]
    t = 0.0
    k = 0
    for s in range(n_samples):
        t_target = s * sample_dt
        while k < n_events and t + waits[k] <= t_target:
            t += waits[k]
            b = bonds[k]
            j = b + 1
            if j == n_sites:
                j = 0
            si = np.sqrt(energies[b])
            sj = np.sqrt(energies[j])
            c = np.cos(angles[k])
            sn = np.sin(angles[k])
            ri = c * si + sn * sj
            rj = -sn * si + c * sj
            energies[b] = ri * ri
            energies[j] = rj * rj
            k += 1
        if k >= n_events:
            # cannot certify the state at t_target without the next wait
            return -1
        m = 0.0
        for i in range(n_sites):
            m += weights[i] * energies[i]
        out[s] = m
    return k


@njit(cache=True)
def jump_run(energies, waits, bonds, angles, n_events):
    """Apply n_events rotations; returns max relative defect of pair sums."""
    n_sites = energies.shape[0]
    worst = 0.0
    for k in range(n_events):
        b = bonds[k]
        j = b + 1
        if j == n_sites:
            j = 0
        pair = energies[b] + energies[j]
        si = np.sqrt(energies[b])
        sj = np.sqrt(energies[j])
        c = np.cos(angles[k])
        sn = np.sin(angles[k])
        ri = c * si + sn * sj
        rj = -sn * si + c * sj
        energies[b] = ri * ri
        energies[j] = rj * rj
        if pair > 0.0:
            defect = abs((energies[b] + energies[j]) - pair) / pair
            if defect > worst:
                worst = defect
    return worst


@njit(cache=True)
def exchange_chunk(p, bond_i, bond_j, cos_b, sin_b, order, xi, site_amp):
    """Velocity-exchange noise over one chunk of steps, in place.

    p: (n_sites, n_comp) velocities.  cos_b/sin_b: (steps, n_bonds)
    rotation entries.  order: (steps, n_bonds) bond visit order.  xi:
    (steps, n_sites, n_comp) standard normals for the on-sphere kicks,
    scaled by ``site_amp``.  Bond rotations are exact isometries of each
    endpoint pair; the site update preserves |p| exactly by construction.
    """
    steps = cos_b.shape[0]
    n_bonds = bond_i.shape[0]
    n_sites = p.shape[0]
    n_comp = p.shape[1]
    tmp = np.empty(n_comp)
    for s in range(steps):
        for pos in range(n_bonds):
            b = order[s, pos]
            i = bond_i[b]
            j = bond_j[b]
            c = cos_b[s, b]
            sn = sin_b[s, b]
            for m in range(n_comp):
                a = p[i, m]
                q = p[j, m]
                p[i, m] = c * a + sn * q
                p[j, m] = -sn * a + c * q
        for i in range(n_sites):
            r2 = 0.0
            for m in range(n_comp):
                r2 += p[i, m] * p[i, m]
            if r2 <= 0.0:
                continue
            dot = 0.0
            for m in range(n_comp):
                dot += xi[s, i, m] * p[i, m]
            dot /= r2
            q2 = 0.0
            for m in range(n_comp):
                tmp[m] = p[i, m] + site_amp * (xi[s, i, m] - dot * p[i, m])
                q2 += tmp[m] * tmp[m]
            scale = np.sqrt(r2 / q2)
            for m in range(n_comp):
                p[i, m] = tmp[m] * scale
