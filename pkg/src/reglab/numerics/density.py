"""Equilibrium density of the immigration diffusion and the fixed-point function.

For the scalar diffusion

    dV = alpha (theta - V) dt + h(V) dt + sqrt(2 g(V)) dB

the unnormalized stationary density is

    Phi_theta(y) = exp(theta * A(y) + B(y)) / g(y),
    A(y) = int_{y_ref}^y alpha / g,   B(y) = int_{y_ref}^y (h(x) - alpha x) / g(x) dx,

with ``y_ref`` the largest zero of h (or 1 when h has no positive zero).
For g(x) = beta x both antiderivatives are closed-form polynomials plus a
logarithm; otherwise they are computed by adaptive quadrature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from ..core import DiffusionSpec, DriftSpec, ModelError, ModelParams, _largest_zero


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the adaptive quadratures.

    ``tail_drop`` is the log-scale drop (relative to the peak) beyond which
    the integrand of a semi-infinite integral is cut off.
    """

    abs_tol: float = 1e-13
    rel_tol: float = 1e-11
    max_subdivisions: int = 500
    tail_drop: float = 60.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.max_subdivisions > 0 and self.tail_drop > 0):
            raise ModelError("quadrature tolerances must be positive")


DEFAULT_QUAD = QuadratureSpec()


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not converge."""


def _quad(f, a, b, spec: QuadratureSpec, points=None):
    pts = None
    if points is not None:
        pts = sorted(p for p in set(points) if a < p < b) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                f, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions, points=pts
            )
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a:g}, {b:g}] did not converge: {exc}") from None
    return val, err


def _defaults(params: ModelParams, drift, diffusion):
    if drift is None:
        drift = DriftSpec.logistic(params.gamma, params.capacity)
    if diffusion is None:
        diffusion = DiffusionSpec.feller(params.beta)
    return drift, diffusion


class Profile:
    """Log-weights A and B of the stationary density for given (alpha, h, g).

    ``method`` is "closed" (g linear only), "quad" or "auto".
    """

    def __init__(self, alpha: float, drift: DriftSpec, diffusion: DiffusionSpec, method: str = "auto",
                 quad: QuadratureSpec = DEFAULT_QUAD):
        if method not in ("auto", "closed", "quad"):
            raise ModelError(f"unknown method {method!r}")
        if method == "closed" and not diffusion.is_linear:
            raise ModelError("closed forms need g(x) = beta x")
        self.alpha = float(alpha)
        self.drift = drift
        self.diffusion = diffusion
        self.quad = quad
        self.closed = diffusion.is_linear and method != "quad"
        if drift.kind == "logistic":
            self.y0 = float(drift.capacity) if drift.gamma > 0 else 0.0
        elif len(drift.coeffs) > 1 and drift.coeffs[-1] < 0:
            self.y0 = _largest_zero(drift, _zero_search_range(drift))
        else:
            self.y0 = 0.0
        self.y_ref = self.y0 if self.y0 > 0 else 1.0
        if self.closed:
            beta = diffusion.linear_rate
            c = drift.coeffs.copy()
            c = np.concatenate([c, np.zeros(max(0, 2 - c.size))])
            # (h(x) - alpha x) / (beta x) integrated termwise
            q = c[1:].copy()
            q[0] -= self.alpha
            self._bpoly = P.polyint(q / beta)
            self._beta = beta

    # pointwise pieces -------------------------------------------------------
    def g(self, y):
        return self.diffusion(y)

    def h(self, y):
        return self.drift(y)

    def A(self, y):
        y = np.asarray(y, dtype=float)
        if self.closed:
            with np.errstate(divide="ignore"):
                return (self.alpha / self._beta) * np.log(y / self.y_ref)
        return self._vec(lambda x: self.alpha / self.g(x), y)

    def B(self, y):
        y = np.asarray(y, dtype=float)
        if self.closed:
            return P.polyval(y, self._bpoly) - P.polyval(self.y_ref, self._bpoly)
        return self._vec(lambda x: (self.h(x) - self.alpha * x) / self.g(x), y)

    def B_at_zero(self) -> float:
        """B(0) = -int_0^{y_ref} (h - alpha x)/g, which must be finite."""
        if self.closed:
            return float(self.B(0.0))
        val, _ = _quad(lambda x: (self.h(x) - self.alpha * x) / self.g(x), 0.0, self.y_ref, self.quad)
        return -val

    def _vec(self, f, y):
        out = np.empty(y.shape)
        for idx, v in np.ndenumerate(y):
            if v <= 0:
                raise ModelError("log-weights need y > 0")
            out[idx] = _quad(f, self.y_ref, float(v), self.quad)[0]
        return out if out.ndim else float(out)

    def log_phi(self, y, theta: float):
        return theta * self.A(y) + self.B(y) - np.log(self.g(y))

    # integration ------------------------------------------------------------
    def integrate(self, log_weight, factor=None, scan_points: int = 2001):
        """int_0^inf factor(y) * exp(log_weight(y)) dy as (value, error, log_shift).

        The returned ``value`` and ``error`` are scaled by exp(-log_shift);
        the integral itself is ``value * exp(log_shift)``.
        """
        if factor is None:
            factor = _one
        cut, shift, peak = self._scan(log_weight, scan_points)

        def f(y):
            return factor(y) * math.exp(log_weight(y) - shift)

        pts = [p for p in (self.y0, peak) if 0 < p < cut]
        lo = 0.0
        total = err = 0.0
        for b in sorted(pts) + [cut]:
            if b <= lo:
                continue
            v, e = _quad(f, lo, b, self.quad)
            total += v
            err += e
            lo = b
        return total, err, shift

    def _scan(self, log_weight, n: int):
        y_hi = max(4.0 * self.y_ref, 4.0 * self.y0, 4.0)
        n = n if self.closed else min(n, 201)
        for _ in range(64):
            grid = np.linspace(0.0, y_hi, n)[1:]
            lw = np.asarray(log_weight(grid), dtype=float)
            finite = np.isfinite(lw)
            m = lw[finite].max() if finite.any() else -np.inf
            if lw[-1] < m - self.quad.tail_drop and lw[-1] < lw[-2]:
                k = int(np.argmax(np.where(finite, lw, -np.inf)))
                return y_hi, float(m), float(grid[k])
            y_hi *= 2.0
        raise QuadratureError("integrand does not decay; the semi-infinite integral may diverge")


def _one(y):
    return 1.0


def _zero_search_range(drift: DriftSpec) -> float:
    # Cauchy bound on the positive roots of the polynomial
    c = drift.coeffs
    return float(1.0 + np.max(np.abs(c[:-1] / c[-1]))) * 1.01


def profile_for(params: ModelParams, drift=None, diffusion=None, method: str = "auto",
                quad: QuadratureSpec = DEFAULT_QUAD) -> Profile:
    drift, diffusion = _defaults(params, drift, diffusion)
    return Profile(params.alpha, drift, diffusion, method, quad)


def phi_density(y, theta: float, params: ModelParams, drift=None, diffusion=None, method: str = "auto"):
    """Unnormalized equilibrium density Phi_theta(y) of the immigration diffusion.

    Parameters
    ----------
    y : float or array, y > 0
    theta : immigration level, >= 0
    params : rates; ``drift`` and ``diffusion`` default to the logistic/Feller
        pair built from them.
    method : "auto" uses closed forms when g(x) = beta x, "quad" forces
        adaptive quadrature of the inner integrals.
    """
    if theta < 0:
        raise ModelError("theta must be nonnegative")
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ModelError("phi_density needs y > 0")
    prof = profile_for(params, drift, diffusion, method)
    gy = prof.g(y)
    if np.any(gy <= 0):
        raise ModelError("g vanishes inside the domain")
    val = np.exp(prof.log_phi(y, theta))
    return float(val) if val.ndim == 0 else val


@dataclass
class GammaTheta:
    """Normalized equilibrium law of the immigration diffusion at level theta."""

    theta: float
    normalizer: float
    mean: float
    variance: float
    error_estimate: float
    profile: Profile

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(y > 0, self.normalizer * np.exp(self.profile.log_phi(np.where(y > 0, y, 1.0), self.theta)), 0.0)
        return out

    def expect(self, fn) -> float:
        """E[fn(Y)] for Y ~ Gamma_theta."""
        lw = lambda y: self.profile.log_phi(y, self.theta)
        v, _, s = self.profile.integrate(lw, fn)
        return float(v * math.exp(s) * self.normalizer)

    @cached_property
    def _cdf_spline(self):
        prof = self.profile
        lw = lambda y: prof.log_phi(y, self.theta)
        cut, _, _ = prof._scan(lw, 2001)
        nodes = np.linspace(0.0, cut, 801)
        pieces = [0.0]
        f = lambda y: float(self.pdf(y))
        for a, b in zip(nodes[:-1], nodes[1:]):
            pieces.append(_quad(f, a, b, prof.quad)[0])
        cdf = np.cumsum(pieces)
        cdf_total = cdf[-1]
        cdf /= cdf_total
        dens = self.pdf(nodes)
        # pdf(0) is 0 by convention; use the right limit, or the secant if it is infinite
        d0 = float(self.pdf(nodes[1] * 1e-9))
        dens[0] = d0 if np.isfinite(d0) and d0 < 1e3 * dens[1] else (cdf[1] - cdf[0]) / nodes[1]
        return CubicHermiteSpline(nodes, cdf, dens), cut, nodes[1], cdf_total

    def cdf(self, y):
        spline, cut, first, total = self._cdf_spline
        y = np.asarray(y, dtype=float)
        out = np.clip(spline(np.clip(y, 0.0, cut)), 0.0, 1.0)
        # the density may be singular at 0: integrate the first cell directly
        near = (y > 0) & (y < first)
        if np.any(near):
            f = lambda v: float(self.pdf(v))
            exact = [_quad(f, 0.0, v, self.profile.quad)[0] for v in np.atleast_1d(y[near])]
            out = np.array(out, dtype=float)
            out[near] = np.clip(np.array(exact) / total, 0.0, 1.0)
        return np.where(y <= 0, 0.0, np.where(y >= cut, 1.0, out))


def gamma_theta_stats(theta: float, params: ModelParams, drift=None, diffusion=None,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> GammaTheta:
    """Normalizer C_theta, mean and variance of the equilibrium law Gamma_theta.

    Raises
    ------
    QuadratureError
        if an adaptive quadrature exhausts its subdivisions.
    """
    if not theta > 0:
        raise ModelError("theta must be positive")
    prof = profile_for(params, drift, diffusion, quad=quad)
    lw = lambda y: prof.log_phi(y, theta)
    z, ez, s = prof.integrate(lw)
    m1, e1, _ = prof.integrate(lw, lambda y: y)
    m2, e2, _ = prof.integrate(lw, lambda y: y * y)
    mean = m1 / z
    var = m2 / z - mean * mean
    total = z * math.exp(s)
    if not (np.isfinite(total) and total > 0):
        raise QuadratureError("normalizing integral is not finite")
    err = ez / z + e1 / max(abs(m1), 1e-300) + e2 / max(abs(m2), 1e-300)
    return GammaTheta(float(theta), 1.0 / total, float(mean), float(var), float(err), prof)


def f_of_theta(theta: float, params: ModelParams, drift=None, diffusion=None, form: str = "direct",
               quad: QuadratureSpec = DEFAULT_QUAD, with_error: bool = False):
    """Fixed-point function whose positive zero is the mean-field equilibrium level.

    ``form="direct"`` integrates (h/g) exp(theta A + B), split at the zero
    of h; ``form="by_parts"`` integrates alpha (y - theta) Phi_theta. Both
    are unnormalized with the same reference point and agree for theta > 0.
    """
    if not theta > 0:
        raise ModelError("theta must be positive")
    prof = profile_for(params, drift, diffusion, quad=quad)
    if form == "direct":
        lw = lambda y: theta * prof.A(y) + prof.B(y)
        fac = lambda y: prof.h(y) / prof.g(y)
    elif form == "by_parts":
        lw = lambda y: prof.log_phi(y, theta)
        fac = lambda y: prof.alpha * (y - theta)
    else:
        raise ModelError(f"unknown form {form!r}")
    v, e, s = prof.integrate(lw, fac)
    scale = math.exp(s)
    return (v * scale, e * scale) if with_error else v * scale
