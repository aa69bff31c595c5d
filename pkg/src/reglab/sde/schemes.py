"""Single-step updates for one site, exposed for testing and composition."""
from __future__ import annotations

import numpy as np
from numba import njit

from ..core import DiffusionSpec, DriftSpec, ModelError
from ..rng import check_seed, feller_transition, step_key, stream_key
from ._kernels import drift_half_step, fte_step


@njit(cache=True)
def _fte_many(x, inflow, alpha, hc, gc, dt, z):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = fte_step(x[i], inflow[i], alpha, hc, gc, dt, z[i])
    return out


@njit(cache=True)
def _split_many(x, inflow, alpha, hc, beta, dt, seed, reps, step, sites):
    out = np.empty(x.shape[0])
    half = 0.5 * dt
    for i in range(x.shape[0]):
        skey = step_key(stream_key(seed, reps[i]), step)
        y = drift_half_step(x[i], inflow[i], alpha, hc, half)
        y, _ = feller_transition(y, beta * dt, skey, sites[i], 0)
        # inflow is frozen over the step for an isolated site
        out[i] = drift_half_step(y, inflow[i], alpha, hc, half)
    return out


def step_site(
    x,
    inflow,
    alpha: float,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    dt: float,
    normal_draw=None,
    scheme: str = "full_truncation_em",
    key: tuple[int, int, int] | None = None,
    sites=None,
):
    """Advance site values by one step of length dt.

    full_truncation_em uses the supplied standard normal draws;
    split_exact_feller needs ``key = (seed, replicate, step)`` (``replicate``
    may be an array) and draws its Poisson/Gamma variates from the counter
    stream. Inputs broadcast; the result is always >= 0.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0):
        raise ModelError("step_site needs x >= 0")
    if not dt > 0:
        raise ModelError("dt must be positive")
    inflow = np.broadcast_to(np.asarray(inflow, dtype=float), x.shape).copy()
    hc = drift.coeffs.astype(float)
    if scheme == "full_truncation_em":
        if normal_draw is None:
            raise ModelError("full_truncation_em needs normal draws")
        z = np.broadcast_to(np.asarray(normal_draw, dtype=float), x.shape).copy()
        return _fte_many(x, inflow, float(alpha), hc, diffusion.coeffs.astype(float), float(dt), z)
    if scheme == "split_exact_feller":
        beta = diffusion.linear_rate
        if key is None:
            raise ModelError("split_exact_feller needs key=(seed, replicate, step)")
        seed, rep, step = key
        reps = np.broadcast_to(np.asarray(rep, dtype=np.int64), x.shape).copy()
        sites = np.zeros(x.shape, np.int64) if sites is None else np.broadcast_to(
            np.asarray(sites, dtype=np.int64), x.shape).copy()
        return _split_many(x, inflow, float(alpha), hc, float(beta), float(dt), check_seed(seed), reps, int(step), sites)
    raise ModelError(f"unknown scheme {scheme!r}")
