"""Extinction criteria, critical capacity and the mean-field fixed point."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from ..core import ModelError, ModelParams
from .density import DEFAULT_QUAD, Profile, QuadratureError, QuadratureSpec, _quad, f_of_theta, profile_for

K_MAX = 1e3


@dataclass(frozen=True)
class CriterionResult:
    """Value of a decision integral and the resulting verdict.

    ``extinct`` is ``integral_value <= threshold``; ``indeterminate`` flags a
    value closer to the threshold than the quadrature error.
    """

    integral_value: float
    extinct: bool
    error_estimate: float
    threshold: float
    form: str
    indeterminate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(value, err, threshold, form) -> CriterionResult:
    return CriterionResult(
        float(value), bool(value <= threshold), float(err), float(threshold), form,
        bool(abs(value - threshold) < err),
    )


def check_sign_condition(prof: Profile, n_grid: int = 10_000) -> None:
    """Require h >= 0 below its largest zero y0 and h <= 0 (not identically) above.

    The degenerate case y0 = 0 (h <= 0 everywhere) is accepted: every
    population then dies out and the decision integrals are negative.
    """
    c = prof.drift.coeffs
    if len(c) < 2 or c[-1] >= 0:
        raise ModelError("drift must be eventually negative (h <= 0 and not identically 0 beyond its zero)")
    y0 = prof.y0
    hi = max(4.0 * y0, 4.0)
    x = np.linspace(0.0, hi, n_grid + 1)
    hx = prof.drift(x)
    scale = max(1.0, float(np.abs(hx).max()))
    tol = 1e-9 * scale
    below = x <= y0
    if np.any(hx[below] < -tol) or np.any(hx[~below] > tol):
        raise ModelError("drift changes sign more than once; the sign condition fails")


def extinction_criterion_general(params: ModelParams, drift=None, diffusion=None, form: str = "h",
                                 quad: QuadratureSpec = DEFAULT_QUAD) -> CriterionResult:
    """Mean-field extinction criterion for general (h, g).

    ``form="h"`` evaluates int_0^inf (h/g) exp(B) with B referenced at the
    zero y0 of h; extinction iff the value is <= 0. ``form="alpha"``
    evaluates int_0^inf (alpha y / g) exp(int_0^y (h - alpha x)/g); extinction
    iff the value is <= 1. The two are equivalent whenever B(0) is finite.
    """
    prof = profile_for(params, drift, diffusion, quad=quad)
    check_sign_condition(prof)
    if form == "h":
        v, e, s = prof.integrate(prof.B, lambda y: prof.h(y) / prof.g(y))
        scale = math.exp(s)
        return _verdict(v * scale, e * scale, 0.0, "h")
    if form == "alpha":
        b0 = prof.B_at_zero()
        if not np.isfinite(b0):
            raise ModelError("int_0^{y0} (h - alpha x)/g diverges; use form='h'")
        v, e, s = prof.integrate(lambda y: prof.B(y) - b0, lambda y: prof.alpha * y / prof.g(y))
        scale = math.exp(s)
        return _verdict(v * scale, e * scale, 1.0, "alpha")
    raise ModelError(f"unknown form {form!r}")


def _logistic_log_integral(alpha, beta, gamma, K, quad: QuadratureSpec = DEFAULT_QUAD):
    """log of int_0^inf exp(K gamma y - gamma beta y^2 / 2) alpha exp(-alpha y) dy, with error."""
    a = gamma * K - alpha
    c = 0.5 * gamma * beta
    peak = max(a / (2 * c), 0.0)
    shift = a * peak - c * peak * peak
    width = math.sqrt((shift + quad.tail_drop + 50.0) / c)
    cut = peak + width
    f = lambda y: alpha * math.exp(a * y - c * y * y - shift)
    v, e = 0.0, 0.0
    lo = 0.0
    for b in ([peak] if peak > 0 else []) + [cut]:
        vi, ei = _quad(f, lo, b, quad)
        v += vi
        e += ei
        lo = b
    return math.log(v) + shift, e / v


def _check_rates(alpha, beta, gamma):
    for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not (np.isfinite(v) and v > 0):
            raise ModelError(f"{name} must be positive, got {v}")


def extinction_criterion_logistic(params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD) -> CriterionResult:
    """Logistic/Feller criterion: extinction iff
    int_0^inf exp(K gamma y - gamma beta y^2/2) alpha exp(-alpha y) dy <= 1."""
    _check_rates(params.alpha, params.beta, params.gamma)
    lv, rel = _logistic_log_integral(params.alpha, params.beta, params.gamma, params.capacity, quad)
    v = math.exp(lv) if lv < 709 else math.inf
    return _verdict(v, rel * v if np.isfinite(v) else 0.0, 1.0, "logistic")


@dataclass(frozen=True)
class CapacityResult:
    k_bar: float
    iterations: int
    residual: float

    def to_dict(self) -> dict:
        return asdict(self)


def critical_capacity(alpha: float, beta: float, gamma: float, xtol: float = 1e-10,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> CapacityResult:
    """Unique K at which the logistic criterion integral equals 1.

    The bracket [0, K_hi] doubles K_hi from 1 until the integral exceeds 1;
    failure below K = 1e3 raises :class:`ModelError`.
    """
    _check_rates(alpha, beta, gamma)
    F = lambda K: _logistic_log_integral(alpha, beta, gamma, K, quad)[0]
    if F(0.0) >= 0:
        raise ModelError("integral exceeds 1 at K = 0")
    hi = 1.0
    while F(hi) <= 0:
        hi *= 2.0
        if hi > K_MAX:
            raise ModelError(f"no critical capacity below K = {K_MAX:g}")
    k, info = brentq(F, 0.0, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, full_output=True)
    return CapacityResult(float(k), int(info.iterations), float(math.expm1(F(k))))


@dataclass(frozen=True)
class FixedPointResult:
    theta: float
    residual: float
    iterations: int
    bracket: tuple[float, float]


def meanfield_fixed_point(params: ModelParams, drift=None, diffusion=None, xtol: float = 1e-10,
                          theta_min: float = 1e-6, quad: QuadratureSpec = DEFAULT_QUAD) -> FixedPointResult | None:
    """Positive zero of f(theta), or None when the criterion predicts extinction.

    Raises
    ------
    QuadratureError
        if the criterion says survival but f has no sign change below
        2^20 times the zero of h.
    """
    crit = extinction_criterion_general(params, drift, diffusion, quad=quad)
    if crit.extinct:
        return None
    prof = profile_for(params, drift, diffusion, quad=quad)
    f = lambda th: f_of_theta(th, params, drift, diffusion, quad=quad)
    lo = theta_min
    f_lo = f(lo)
    if f_lo <= 0:
        raise QuadratureError(f"f({lo:g}) = {f_lo:g} <= 0 although the criterion says survival")
    base = prof.y0 if prof.y0 > 0 else 1.0
    hi = base
    while f(hi) >= 0:
        hi *= 2.0
        if hi > base * 2.0**20:
            raise QuadratureError("no sign change of f below 2^20 times the zero of h")
    th, info = brentq(f, lo, hi, xtol=xtol, full_output=True)
    return FixedPointResult(float(th), float(f(th)), int(info.iterations), (lo, hi))
