"""Stationary densities, extinction criteria, critical capacity, envelope and dual ODE."""
from .criteria import (
    CapacityResult,
    CriterionResult,
    FixedPointResult,
    critical_capacity,
    extinction_criterion_general,
    extinction_criterion_logistic,
    meanfield_fixed_point,
)
from .density import (
    GammaTheta,
    QuadratureError,
    QuadratureSpec,
    f_of_theta,
    gamma_theta_stats,
    phi_density,
)
from .dual_ode import DualPath, dual_ode_solve
from .envelope import envelope_from_infinity

__all__ = [
    "CapacityResult", "CriterionResult", "DualPath", "FixedPointResult", "GammaTheta",
    "QuadratureError", "QuadratureSpec", "critical_capacity", "dual_ode_solve",
    "envelope_from_infinity", "extinction_criterion_general", "extinction_criterion_logistic",
    "f_of_theta", "gamma_theta_stats", "meanfield_fixed_point", "phi_density",
]
