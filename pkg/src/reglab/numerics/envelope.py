"""Level reached at time t by the drift ODE started from infinity."""
from __future__ import annotations

import math

from scipy.optimize import brentq

from ..core import DriftSpec, ModelError, _largest_zero
from .density import DEFAULT_QUAD, _quad, _zero_search_range


def _tail_time(h, y: float) -> float:
    """int_y^inf 1/(-h(z)) dz."""
    return _quad(lambda z: -1.0 / h(z), y, math.inf, DEFAULT_QUAD)[0]


def envelope_from_infinity(t: float, drift: DriftSpec, majorant: DriftSpec | None = None) -> float:
    """y*(t) solving t = int_{y*}^inf dz / (-h_hat(z)).

    ``h_hat`` is ``majorant`` if given, else the drift itself, which must then
    be concave. The expected mass of the process entering from infinity is
    bounded by y*(t). The logistic case uses K / (1 - exp(-gamma K t)).
    """
    if not t > 0:
        raise ModelError("t must be positive")
    h = majorant if majorant is not None else drift
    if majorant is None and not drift.concave:
        raise ModelError("drift is not concave; pass a concave majorant")
    if h.kind == "logistic":
        g, k = h.gamma, h.capacity
        if g <= 0:
            raise ModelError("gamma = 0: the tail integral diverges")
        if k == 0:
            return 1.0 / (g * t)
        return k / -math.expm1(-g * k * t)
    c = h.coeffs
    if len(c) < 3 or c[-1] >= 0:
        raise ModelError("int^inf 1/(-h) diverges; the process does not come down from infinity")
    y0 = _largest_zero(h, _zero_search_range(h))
    # the tail time decreases from +inf at y0 to 0 at infinity
    hi = max(2.0 * y0, 1.0)
    while _tail_time(h, hi) > t:
        hi *= 2.0
        if hi > 1e300:
            raise ModelError("could not bracket the envelope")
    lo = hi
    while _tail_time(h, lo) <= t:
        lo = y0 + 0.5 * (lo - y0)
        if lo - y0 <= 1e-15 * max(1.0, y0):
            return float(lo)
    return float(brentq(lambda y: _tail_time(h, y) - t, lo, hi, xtol=1e-14, rtol=1e-13))
