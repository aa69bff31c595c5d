"""Log-Laplace dual equation for the system without competition.

For gamma = 0 the lattice process satisfies

    E^x exp(-<X_t, y>) = exp(-<x, v_t>),

where v solves dv(j)/dt = alpha (sum_i m(i, j) v(i) - v(j)) - beta v(j)^2
with v_0 = y. Mass enters site j from i at rate m(i, j), so the dual sums
over the first index: the equation is driven by the transpose of m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MigrationKernel, ModelError, as_configuration

DUAL_STEP = 1e-4


@dataclass
class DualPath:
    times: np.ndarray
    values: np.ndarray  # (len(times), n_sites)

    def at(self, t: float) -> np.ndarray:
        k = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0]
        if k.size == 0:
            raise ModelError(f"time {t} was not recorded")
        return self.values[k[0]]


def dual_ode_solve(y0, alpha: float, kernel: MigrationKernel, beta: float, t_end: float,
                   record_times=None, step: float = DUAL_STEP) -> DualPath:
    """Integrate the dual equation by classical RK4 with a fixed step.

    ``kernel`` is the migration kernel of the forward process; its transpose
    is applied internally. Record times are hit exactly by shortening the
    step that would cross them.
    """
    y = as_configuration(y0, kernel.n_sites)
    if alpha < 0 or beta < 0:
        raise ModelError("alpha and beta must be nonnegative")
    if t_end < 0:
        raise ModelError("t_end must be nonnegative")
    rec = np.array([0.0, t_end] if record_times is None else sorted(float(t) for t in record_times))
    if rec.size and (rec[0] < 0 or rec[-1] > t_end + 1e-12):
        raise ModelError("record_times must lie in [0, t_end]")
    mt = kernel.matrix.T.tocsr()

    def rhs(v):
        return alpha * (mt @ v - v) - beta * v * v

    out = np.empty((rec.size, y.size))
    v = y.copy()
    t = 0.0
    for k, tr in enumerate(rec):
        while t < tr - 1e-13:
            h = min(step, tr - t)
            k1 = rhs(v)
            k2 = rhs(v + 0.5 * h * k1)
            k3 = rhs(v + 0.5 * h * k2)
            k4 = rhs(v + h * k3)
            v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out[k] = v
    return DualPath(rec, out)
