"""Compiled Monte Carlo chunk kernel.

This mirrors the reference walk in :mod:`slabhybrid.engine` statement by
statement: identical random-stream arithmetic, identical floating-point
operation order, identical tally accumulation order.  Any change here must be
matched there (and vice versa); tests/test_engine.py pins bit-for-bit
equality between the two paths.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PYMASK64 = (1 << 64) - 1

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MC1 = np.uint64(0xBF58476D1CE4E5B9)
_MC2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)
_TWO_M52 = 2.0**-52


@njit(cache=True, nogil=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MC1
    z = (z ^ (z >> _S27)) * _MC2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, inline="always")
def _uniform(state):
    state = state + _GAMMA
    z = _mix64(state)
    return (np.float64(z >> _S12) + 0.5) * _TWO_M52, state


@njit(cache=True, nogil=True, inline="always")
def _bisect_right(arr, x):
    lo = 0
    hi = arr.size
    while lo < hi:
        mid = (lo + hi) // 2
        if x < arr[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, nogil=True)
def run_chunk(
    seed,
    n0,
    count,
    edges,
    sig_t,
    sig_s,
    q_cell,
    reg_left,
    reg_q,
    reg_cum,
    total_source,
    implicit,
    w_cut,
    survival,
    mu_floor,
    max_events,
    t_sum,
    u_sum,
    t2_sum,
    u2_sum,
    tu_sum,
    f_flux,
    f_curr,
    f_mu,
    counters,
):
    """Simulate histories n0 .. n0+count-1 into the provided partial tallies."""
    ncells = sig_t.size
    nreg = reg_q.size
    hist_wl = np.zeros(ncells)
    hist_mu2 = np.zeros(ncells)

    for n in range(n0, n0 + count):
        state = _mix64(seed + _GAMMA * np.uint64(n + 1))

        # birth: position from the source CDF, direction isotropic
        u, state = _uniform(state)
        target = u * total_source
        r = 0
        while r < nreg - 1 and (reg_q[r] == 0.0 or target >= reg_cum[r + 1]):
            r += 1
        x = reg_left[r] + (target - reg_cum[r]) / reg_q[r]
        u, state = _uniform(state)
        mu = 2.0 * u - 1.0
        while mu == 0.0:
            u, state = _uniform(state)
            mu = 2.0 * u - 1.0
        w = 1.0

        i = _bisect_right(edges, x) - 1
        last = ncells - 1
        if i > last:
            i = last
        if i < 0:
            i = 0
        if x == edges[i] and mu < 0.0 and i > 0:
            i -= 1
        imin = i
        imax = i

        alive = True
        events = 0
        while alive:
            events += 1
            if events > max_events:
                counters[1] += 1
                alive = False
                break
            u, state = _uniform(state)
            tau = -math.log(u)

            # flight: spend optical depth tau cell by cell
            amu = abs(mu)
            while True:
                if mu > 0.0:
                    x_face = edges[i + 1]
                    d_face = (x_face - x) / mu
                else:
                    x_face = edges[i]
                    d_face = (x - x_face) / (-mu)
                if d_face < 0.0:
                    raise ValueError("negative segment length in flight")
                sig = sig_t[i]
                tau_cell = sig * d_face
                if tau_cell >= tau:
                    ell = tau / sig
                    wl = w * ell
                    hist_wl[i] += wl
                    hist_mu2[i] += mu * mu * wl
                    if i < imin:
                        imin = i
                    if i > imax:
                        imax = i
                    x = x + mu * ell
                    break
                wl = w * d_face
                hist_wl[i] += wl
                hist_mu2[i] += mu * mu * wl
                if i < imin:
                    imin = i
                if i > imax:
                    imax = i
                tau = tau - tau_cell
                x = x_face
                if mu > 0.0:
                    face = i + 1
                    f_curr[face] += w
                else:
                    face = i
                    f_curr[face] -= w
                f_flux[face] += w / max(amu, mu_floor)
                f_mu[face] += amu * w
                if mu > 0.0:
                    i += 1
                    if i >= ncells:
                        alive = False
                        break
                else:
                    i -= 1
                    if i < 0:
                        alive = False
                        break
            if not alive:
                break

            # collision
            ratio = sig_s[i] / sig_t[i]
            if implicit:
                w = w * ratio
                if w <= 0.0:
                    alive = False
                else:
                    u, state = _uniform(state)
                    mu = 2.0 * u - 1.0
                    while mu == 0.0:
                        u, state = _uniform(state)
                        mu = 2.0 * u - 1.0
                    if w < w_cut:
                        u, state = _uniform(state)
                        if u < survival:
                            w = w / survival
                        else:
                            alive = False
            else:
                u, state = _uniform(state)
                if u < ratio:
                    u, state = _uniform(state)
                    mu = 2.0 * u - 1.0
                    while mu == 0.0:
                        u, state = _uniform(state)
                        mu = 2.0 * u - 1.0
                else:
                    alive = False

        for j in range(imin, imax + 1):
            t = hist_wl[j]
            uu = hist_mu2[j]
            if t != 0.0 or uu != 0.0:
                t_sum[j] += t
                u_sum[j] += uu
                t2_sum[j] += t * t
                u2_sum[j] += uu * uu
                tu_sum[j] += t * uu
            hist_wl[j] = 0.0
            hist_mu2[j] = 0.0
        counters[0] += 1
