"""Compiled stepping loops shared by every simulation mode."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..rng import feller_transition, normal, step_key, stream_key

FTE = 0
SPLIT = 1

INFLOW_KERNEL = 0
INFLOW_MEAN = 1
INFLOW_CONST = 2

DONE = 0
ABSORBED = 1
NAN = 2
BLOWUP = 3
GROW = 4


@njit(cache=True, inline="always")
def poly(c, x):
    r = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        r = r * x + c[k]
    return r


@njit(cache=True)
def _inflow(x, mode, indptr, indices, weights, theta, out):
    n = x.shape[0]
    if mode == INFLOW_KERNEL:
        for i in range(n):
            s = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                s += weights[p] * x[indices[p]]
            out[i] = s
    elif mode == INFLOW_MEAN:
        m = 0.0
        for i in range(n):
            m += x[i]
        m /= n
        for i in range(n):
            out[i] = m
    else:
        for i in range(n):
            out[i] = theta


@njit(cache=True, inline="always")
def fte_step(x, inflow, alpha, hc, gc, dt, z):
    """One full-truncation Euler-Maruyama step for a single site."""
    xp = x if x > 0.0 else 0.0
    g = poly(gc, xp)
    if g < 0.0:
        g = 0.0
    y = x + (alpha * (inflow - x) + poly(hc, xp)) * dt + math.sqrt(2.0 * g * dt) * z
    return 0.0 if y < 0.0 else y


@njit(cache=True, inline="always")
def drift_half_step(x, inflow, alpha, hc, half_dt):
    y = x + (alpha * (inflow - x) + poly(hc, x)) * half_dt
    return 0.0 if y < 0.0 else y


@njit(cache=True)
def advance(
    x, key, step0, step1, site_ids, mode, indptr, indices, weights, theta,
    alpha, hc, gc, dt, scheme, rec_steps, rec_ptr, out, mean_only,
    sigma, guard, band, leak, scratch,
):
    """Advance one path in place from step0 to step1.

    Records x (or its mean) into ``out`` whenever the current step equals the
    next entry of ``rec_steps``. Returns (status, step, site, rec_ptr).
    """
    n = x.shape[0]
    n_rec = rec_steps.shape[0]
    beta_dt = gc[1] * dt if gc.shape[0] > 1 else 0.0
    half = 0.5 * dt
    s = step0
    while True:
        while rec_ptr < n_rec and rec_steps[rec_ptr] == s:
            if mean_only:
                out[rec_ptr, 0] = x.mean()
            else:
                out[rec_ptr, :] = x
            rec_ptr += 1
        if s >= step1:
            return DONE, s, -1, rec_ptr
        total = 0.0
        for i in range(n):
            total += x[i]
        if total == 0.0 and mode != INFLOW_CONST:
            # zero is absorbing: fill remaining records and stop
            while rec_ptr < n_rec:
                if mean_only:
                    out[rec_ptr, 0] = 0.0
                else:
                    out[rec_ptr, :] = 0.0
                rec_ptr += 1
            return ABSORBED, s, -1, rec_ptr
        skey = step_key(key, s)
        _inflow(x, mode, indptr, indices, weights, theta, scratch)
        if scheme == FTE:
            for i in range(n):
                x[i] = fte_step(x[i], scratch[i], alpha, hc, gc, dt, normal(skey, site_ids[i], 0))
        else:
            for i in range(n):
                x[i] = drift_half_step(x[i], scratch[i], alpha, hc, half)
            for i in range(n):
                x[i], _ = feller_transition(x[i], beta_dt, skey, site_ids[i], 0)
            _inflow(x, mode, indptr, indices, weights, theta, scratch)
            for i in range(n):
                x[i] = drift_half_step(x[i], scratch[i], alpha, hc, half)
        s += 1
        norm = 0.0
        for i in range(n):
            if not (x[i] == x[i]):
                return NAN, s, i, rec_ptr
            norm += sigma[i] * x[i]
        if norm > guard:
            return BLOWUP, s, -1, rec_ptr
        if band.shape[0] > 0:
            bm = 0.0
            tm = 0.0
            for i in range(n):
                tm += x[i]
                if band[i]:
                    bm += x[i]
            if bm > leak * tm:
                return GROW, s, -1, rec_ptr


@njit(cache=True)
def run_batch(
    x0, reps, seed, n_steps, site_ids, mode, indptr, indices, weights, theta,
    alpha, hc, gc, dt, scheme, rec_steps, mean_only, sigma, guard,
):
    """Run independent replicates; returns records and per-replicate events."""
    n_r, n = x0.shape
    n_rec = rec_steps.shape[0]
    width = 1 if mean_only else n
    out = np.full((n_r, n_rec, width), np.nan)
    status = np.zeros(n_r, dtype=np.int64)
    ev_step = np.full(n_r, -1, dtype=np.int64)
    ev_site = np.full(n_r, -1, dtype=np.int64)
    band = np.zeros(0, dtype=np.bool_)
    scratch = np.empty(n)
    for r in range(n_r):
        x = x0[r].copy()
        key = stream_key(seed, reps[r])
        st, step, site, _ = advance(
            x, key, 0, n_steps, site_ids, mode, indptr, indices, weights, theta,
            alpha, hc, gc, dt, scheme, rec_steps, 0, out[r], mean_only,
            sigma, guard, band, 0.0, scratch,
        )
        status[r] = st
        if st != DONE:
            ev_step[r] = step
            ev_site[r] = site
        if st == NAN or st == BLOWUP:
            break
    return out, status, ev_step, ev_site
