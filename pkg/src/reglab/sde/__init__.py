"""Time integration of lattice, mean-field, immigration and finite-mass systems."""
from .finite_mass import (
    FiniteMassResult,
    absorption_frequency,
    finite_mass_replicates,
    point_mass,
    simulate_finite_mass,
)
from .meanfield import MeanFieldEnsemble, immigration_replicates, simulate_immigration_diffusion, simulate_meanfield_particles
from .schemes import step_site
from .simulate import (
    BLOWUP_GUARD,
    BlowUpError,
    Ensemble,
    NumericalError,
    PathRecord,
    SimConfig,
    maximal_process_run,
    simulate_coupled_pair,
    simulate_coupled_replicates,
    simulate_lattice,
    simulate_replicates,
    with_records,
)

__all__ = [
    "BLOWUP_GUARD", "BlowUpError", "Ensemble", "FiniteMassResult", "MeanFieldEnsemble",
    "NumericalError", "PathRecord", "SimConfig", "absorption_frequency", "finite_mass_replicates", "immigration_replicates",
    "maximal_process_run", "point_mass", "simulate_coupled_pair", "simulate_coupled_replicates",
    "simulate_finite_mass", "simulate_immigration_diffusion", "simulate_lattice",
    "simulate_meanfield_particles", "simulate_replicates", "step_site", "with_records",
]
