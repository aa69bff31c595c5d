import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import erfcx

from reglab.core import DiffusionSpec, DriftSpec, Lattice, ModelError, ModelParams, build_kernel, nearest_neighbor_stencil
from reglab.numerics import (
    critical_capacity, dual_ode_solve, envelope_from_infinity, extinction_criterion_general,
    extinction_criterion_logistic, f_of_theta, gamma_theta_stats, meanfield_fixed_point, phi_density,
)

UNIT = ModelParams(1.0, 1.0, 1.0, 1.0)
GRID = [(a, b, g) for a in (0.5, 1, 2) for b in (0.5, 1, 2) for g in (0.5, 1, 2)]
K_GRID = [0.25 * k for k in range(9)]

# Critical capacities from an independent oracle: composite Simpson with 10^6
# nodes on [0, 40] for the logistic decision integral, then 60 bisection
# steps on {integral = 1}. The erfcx closed form agrees to 1e-15.
K_BAR_ORACLE = {
    (0.5, 1, 1): 1.0179127159921797,
    (1, 1, 1): 0.6973691592884272,
    (2, 1, 1): 0.42814231162290584,
    (4, 1, 1): 0.2372023984349857,
}


def logistic_integral_erfcx(a, b, g, K):
    """int_0^inf alpha e^{-alpha y} e^{K g y - g b y^2 / 2} dy by completing the square."""
    return a * math.sqrt(math.pi / (2 * g * b)) * erfcx(-(g * K - a) / math.sqrt(2 * g * b))


def h_form_simpson(a, b, g, K, n=10**6, L=40.0):
    """int_0^inf (h/g) exp(int_K^y (-a x + h) / g dx) dy for the logistic/Feller pair."""
    y = np.linspace(0.0, L, n + 1)
    f = (g / b) * (K - y) * np.exp(((g * K - a) / b) * (y - K) - g / (2 * b) * (y * y - K * K))
    step = L / n
    return step / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())


# -- equilibrium density ------------------------------------------------------

def test_phi_at_reference_point():
    assert phi_density(1.0, 0.7, UNIT) == pytest.approx(1.0)  # 1 / g(K) with beta = K = 1
    p = ModelParams(1.0, 2.0, 1.0, 1.5)
    assert phi_density(1.5, 0.3, p) == pytest.approx(1.0 / (2.0 * 1.5))


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
def test_phi_closed_form_matches_quadrature(theta):
    a, b, g, K = 1.0, 1.0, 1.0, 1.0
    y = np.array([0.05, 0.4, 1.0, 1.7, 3.0, 6.0])
    closed = (1 / (b * y)) * np.exp((a * theta / b) * np.log(y / K) + ((g * K - a) / b) * (y - K)
                                    - g / (2 * b) * (y * y - K * K))
    np.testing.assert_allclose(phi_density(y, theta, UNIT, method="closed"), closed, rtol=1e-12)
    np.testing.assert_allclose(phi_density(y, theta, UNIT, method="quad"), closed, rtol=1e-8)


def test_phi_gaussian_tail():
    y = np.array([10.0, 20.0, 40.0])
    v = phi_density(y, 1.0, UNIT) * y**10
    assert v[0] > v[1] > v[2] and v[1] < 1e-60


def test_phi_rejects_nonpositive_y():
    with pytest.raises(ModelError):
        phi_density(0.0, 1.0, UNIT)


def test_gamma_one_is_half_normal():
    # alpha = beta = gamma = K = theta = 1 gives Phi(y) = exp((1 - y^2) / 2)
    gt = gamma_theta_stats(1.0, UNIT)
    assert gt.normalizer == pytest.approx(1.0 / (math.exp(0.5) * math.sqrt(math.pi / 2)), rel=1e-10)
    assert gt.mean == pytest.approx(math.sqrt(2 / math.pi), rel=1e-10)
    assert gt.variance == pytest.approx(1 - 2 / math.pi, rel=1e-9)
    y = np.linspace(0.01, 4, 50)
    np.testing.assert_allclose(gt.pdf(y), stats.halfnorm.pdf(y), rtol=1e-10)
    np.testing.assert_allclose(gt.cdf(y), stats.halfnorm.cdf(y), atol=1e-8)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_gamma_normalized(theta):
    gt = gamma_theta_stats(theta, ModelParams(1.0, 0.5, 2.0, 1.3))
    assert gt.expect(lambda y: np.ones_like(y)) == pytest.approx(1.0, rel=1e-10)


def test_gamma_mean_increasing_in_theta():
    means = [gamma_theta_stats(t, UNIT).mean for t in (0.5, 1, 2, 4)]
    assert all(a < b for a, b in zip(means, means[1:]))


@pytest.mark.parametrize("theta", [0.5, 1.0, 3.0])
def test_gamma_stationarity(theta):
    p = ModelParams(1.0, 1.0, 1.0, 1.0)
    gt = gamma_theta_stats(theta, p)
    h, g = DriftSpec.logistic(1, 1), DiffusionSpec.feller(1)
    gen = lambda y: (p.alpha * (theta - y) + h(y)) * (-np.exp(-y)) + g(y) * np.exp(-y)
    assert abs(gt.expect(gen)) < 1e-6


def test_gamma_requires_positive_theta():
    with pytest.raises(ModelError):
        gamma_theta_stats(0.0, UNIT)


# -- f(theta) ------------------------------------------------------------------

def test_f_strictly_decreasing():
    f = [f_of_theta(t, UNIT) for t in (0.5, 1.0, 2.0)]
    assert f[0] > f[1] > f[2]


def test_f_tends_to_minus_infinity():
    assert f_of_theta(8.0, UNIT) < -10 * abs(f_of_theta(1.0, UNIT))


@pytest.mark.parametrize("K", [0.3, 1.0, 2.0])
def test_f_limit_at_zero_equals_criterion_integral(K):
    p = ModelParams(1.0, 1.0, 1.0, K)
    lim = extinction_criterion_general(p).integral_value
    assert f_of_theta(1e-9, p) == pytest.approx(lim, rel=1e-6)
    assert lim == pytest.approx(h_form_simpson(1, 1, 1, K), rel=1e-8)


@pytest.mark.parametrize("theta", [0.2, 1.0, 3.0])
def test_f_forms_agree(theta):
    p = ModelParams(0.5, 2.0, 1.0, 1.5)
    assert f_of_theta(theta, p, form="by_parts") == pytest.approx(f_of_theta(theta, p), rel=1e-8, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.05, 6.0), min_size=2, max_size=6, unique=True),
       st.sampled_from([(1, 1, 1, 1), (2, 0.5, 1, 2), (0.5, 2, 2, 0.5)]))
def test_f_pairwise_decreasing(thetas, rates):
    p = ModelParams(*rates)
    ts = sorted(thetas)
    vals = [f_of_theta(t, p) for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# -- criteria -------------------------------------------------------------------

def test_general_criterion_examples():
    assert extinction_criterion_general(ModelParams(1, 1, 1, 0.3)).extinct
    assert h_form_simpson(1, 1, 1, 0.3) < 0
    assert not extinction_criterion_general(ModelParams(1, 1, 1, 1.0)).extinct
    kb = critical_capacity(1, 1, 1).k_bar
    r = extinction_criterion_general(ModelParams(1, 1, 1, kb))
    assert abs(r.integral_value) < 1e-6


def test_logistic_criterion_examples():
    r0 = extinction_criterion_logistic(ModelParams(1, 1, 1, 0.0))
    assert r0.extinct and r0.integral_value < 1
    assert r0.integral_value == pytest.approx(logistic_integral_erfcx(1, 1, 1, 0.0), rel=1e-10)
    r = extinction_criterion_logistic(ModelParams(1, 1, 1, 0.6973))
    assert r.integral_value == pytest.approx(1.0, abs=5e-4)
    vals = [extinction_criterion_logistic(ModelParams(1, 1, 1, k)).integral_value for k in (0, 0.25, 0.5, 0.75, 1)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("rates", GRID)
def test_logistic_integral_matches_erfcx(rates):
    for K in K_GRID:
        r = extinction_criterion_logistic(ModelParams(*rates, K))
        assert r.integral_value == pytest.approx(logistic_integral_erfcx(*rates, K), rel=1e-9)
        assert r.error_estimate < 1e-8 * max(1.0, r.integral_value)


@pytest.mark.parametrize("rates", GRID)
def test_criteria_agree_on_grid(rates):
    for K in K_GRID:
        p = ModelParams(*rates, K)
        lg = extinction_criterion_logistic(p)
        h = extinction_criterion_general(p, form="h")
        al = extinction_criterion_general(p, form="alpha")
        assert lg.extinct == h.extinct == al.extinct
        assert al.integral_value == pytest.approx(lg.integral_value, rel=1e-9)


def test_criterion_rejects_bad_rates():
    with pytest.raises(ModelError):
        extinction_criterion_logistic(ModelParams(1, 0, 1, 1))


def test_criterion_rejects_sign_condition_violation():
    # h(x) = x (1 - x)(x - 2) is negative on (1, 2): condition fails
    with pytest.raises(ModelError):
        extinction_criterion_general(ModelParams(1, 1, 1, 1), DriftSpec.polynomial([0, -2, 3, -1]),
                                     DiffusionSpec.feller(1))


def test_general_criterion_custom_diffusion_runs():
    r = extinction_criterion_general(ModelParams(1, 1, 1, 1), DriftSpec.logistic(1, 2), DiffusionSpec.polynomial([0, 1, 0.5]))
    assert np.isfinite(r.integral_value)


# -- critical capacity ---------------------------------------------------------

def test_critical_capacity_reference_value():
    assert critical_capacity(1, 1, 1).k_bar == pytest.approx(0.6973, abs=5e-4)


@pytest.mark.parametrize("rates", list(K_BAR_ORACLE))
def test_critical_capacity_matches_oracle(rates):
    r = critical_capacity(*rates)
    assert r.k_bar == pytest.approx(K_BAR_ORACLE[rates], abs=1e-9)
    assert abs(r.residual) < 1e-9


def test_critical_capacity_decreasing_in_alpha():
    ks = [critical_capacity(a, 1, 1).k_bar for a in (0.5, 1, 2, 4)]
    oracle = [K_BAR_ORACLE[(a, 1, 1)] for a in (0.5, 1, 2, 4)]
    assert all(a > b for a, b in zip(ks, ks[1:]))
    assert all(a > b for a, b in zip(oracle, oracle[1:]))


@pytest.mark.parametrize("rates", GRID[::4])
def test_flag_flips_across_critical_capacity(rates):
    kb = critical_capacity(*rates).k_bar
    assert extinction_criterion_logistic(ModelParams(*rates, kb - 1e-3)).extinct
    assert not extinction_criterion_logistic(ModelParams(*rates, kb + 1e-3)).extinct


def test_critical_capacity_errors():
    with pytest.raises(ModelError):
        critical_capacity(1, 1, 0)


# -- fixed point --------------------------------------------------------------

def test_fixed_point_none_when_extinct():
    assert meanfield_fixed_point(ModelParams(1, 1, 1, 0.5)) is None
    assert meanfield_fixed_point(ModelParams(1, 1, 1, 0.0)) is None


@pytest.mark.parametrize("K", [1.0, 2.0, 4.0])
def test_fixed_point_root_and_self_consistency(K):
    p = ModelParams(1, 1, 1, K)
    fp = meanfield_fixed_point(p)
    f, err = f_of_theta(fp.theta, p, with_error=True)
    assert abs(f) <= 1e-6
    # theta* is the mean of its own equilibrium law
    assert gamma_theta_stats(fp.theta, p).mean == pytest.approx(fp.theta, rel=1e-8)


# -- envelope ---------------------------------------------------------------------

def test_envelope_large_t_tends_to_capacity():
    assert envelope_from_infinity(50.0, DriftSpec.logistic(1, 1)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("t", [1e-3, 1e-4])
def test_envelope_small_t(t):
    y = envelope_from_infinity(t, DriftSpec.logistic(1, 1))
    assert y * t == pytest.approx(1.0, abs=2 * t)


@pytest.mark.parametrize("t", [0.1, 0.5, 2.0, 5.0])
def test_envelope_numeric_matches_closed_forms(t):
    assert envelope_from_infinity(t, DriftSpec.polynomial([0, 0, -1.0])) == pytest.approx(1 / t, rel=1e-8)
    # logistic coefficients entered as a generic polynomial take the numeric route
    num = envelope_from_infinity(t, DriftSpec.polynomial([0, 2.0, -1.0]))
    assert num == pytest.approx(2.0 / (-math.expm1(-2.0 * t)), rel=1e-8)


def test_envelope_errors():
    with pytest.raises(ModelError):
        envelope_from_infinity(1.0, DriftSpec.polynomial([0, -1.0]))
    with pytest.raises(ModelError):
        envelope_from_infinity(0.0, DriftSpec.logistic(1, 1))


# -- dual equation ---------------------------------------------------------------

def _k(n=3, stencil=None):
    return build_kernel(stencil or nearest_neighbor_stencil(1), Lattice((n,)))


def test_dual_zero():
    p = dual_ode_solve(np.zeros(3), 1.0, _k(), 1.0, 1.0)
    assert np.all(p.values == 0)


def test_dual_riccati():
    k = build_kernel({(0,): 1.0}, Lattice((1,)))
    t = np.array([0.1, 0.5, 1.0, 3.0])
    p = dual_ode_solve([2.0], 0.0, k, 1.0, 3.0, record_times=t)
    np.testing.assert_allclose(p.values[:, 0], 2.0 / (1 + 2.0 * t), rtol=1e-8)


def test_dual_uses_transposed_kernel():
    # beta = 0 leaves the linear flow v' = alpha (m^T v - v); with m = shift +1 mass moves to the left
    k = _k(4, {(1,): 1.0})
    p = dual_ode_solve([0, 1.0, 0, 0], 1.0, k, 0.0, 0.5)
    mt = k.matrix.T.toarray()
    from scipy.linalg import expm
    np.testing.assert_allclose(p.values[-1], expm(0.5 * (mt - np.eye(4))) @ [0, 1.0, 0, 0], rtol=1e-10)


def test_dual_rejects_negative():
    with pytest.raises(ModelError):
        dual_ode_solve([-1.0, 0, 0], 1.0, _k(), 1.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=3, max_size=3), st.lists(st.floats(0, 3), min_size=3, max_size=3),
       st.floats(0, 3), st.floats(0, 3))
def test_dual_nonnegative_and_monotone_in_data(a, extra, alpha, beta):
    k = _k(3, {(1,): 0.7, (-1,): 0.3})
    small = np.array(a)
    large = small + np.array(extra)
    ps = dual_ode_solve(small, alpha, k, beta, 1.0, record_times=(0.25, 0.5, 1.0), step=1e-3)
    pl = dual_ode_solve(large, alpha, k, beta, 1.0, record_times=(0.25, 0.5, 1.0), step=1e-3)
    assert np.all(ps.values >= 0)
    assert np.all(ps.values <= pl.values + 1e-12)


def test_dual_constant_data_nonincreasing():
    p = dual_ode_solve(np.full(3, 2.0), 1.0, _k(), 1.0, 2.0, record_times=np.linspace(0, 2, 9))
    assert np.all(np.diff(p.values, axis=0) <= 1e-15)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.0])
def test_gamma_cdf_matches_direct_quadrature(theta):
    from scipy.integrate import quad
    gt = gamma_theta_stats(theta, UNIT)
    y = np.array([1e-4, 1e-2, 0.3, 1.0, 2.5])
    direct = [quad(gt.pdf, 0, v, limit=200)[0] for v in y]
    np.testing.assert_allclose(gt.cdf(y), direct, atol=1e-8)
