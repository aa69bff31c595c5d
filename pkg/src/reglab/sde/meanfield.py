"""Mean-field particle system and the scalar immigration diffusion.

The mean-field dynamics replace the migration inflow by the expectation of
the process itself; here the expectation is approximated by the empirical
mean of M exchangeable particles, recomputed every step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Model, ModelError, ModelParams, DriftSpec, DiffusionSpec, as_configuration
from ..rng import derive_seed
from . import _kernels as K
from .simulate import PathRecord, SimConfig, _check_a1, _run


@dataclass
class MeanFieldEnsemble:
    """Particle values at each record time and their empirical means."""

    particle_count: int
    times: np.ndarray
    means: np.ndarray
    particles: np.ndarray | None
    seed: int

    def final(self) -> np.ndarray:
        if self.particles is None:
            raise ModelError("particles were not kept")
        return self.particles[-1]


class _Local:
    """Duck-typed stand-in for Model when no lattice is involved."""

    def __init__(self, params: ModelParams, drift: DriftSpec, diffusion: DiffusionSpec):
        self.params = params
        self.drift = drift
        self.diffusion = diffusion


def _local(model) -> _Local:
    return _Local(model.params, model.drift, model.diffusion)


def simulate_meanfield_particles(
    M: int,
    initial,
    model: Model | _Local,
    config: SimConfig,
    keep_particles: bool = True,
) -> MeanFieldEnsemble:
    """Evolve M particles coupled only through their empirical mean.

    ``initial`` is a scalar, an array of length M, or a callable
    ``sampler(rng, M)`` drawing i.i.d. starting values; the sampler receives a
    numpy Generator seeded from ``config.seed``.
    """
    if M < 2:
        raise ModelError("mean-field ensemble needs M >= 2")
    loc = _local(model)
    _check_a1(loc)
    if callable(initial):
        gen = np.random.default_rng(derive_seed(config.seed, "meanfield-initial", config.replicate_index))
        x0 = as_configuration(initial(gen, M), M)
    else:
        x0 = as_configuration(initial, M)
    out, _ = _run(
        x0[None, :], [config.replicate_index], loc, config, K.INFLOW_MEAN,
        mean_only=not keep_particles, sigma=np.full(M, 1.0 / M),
    )
    rec = out[0]
    means = rec[:, 0] if not keep_particles else rec.mean(axis=1)
    return MeanFieldEnsemble(M, np.array(config.record_times), means, rec if keep_particles else None, config.seed)


def simulate_immigration_diffusion(theta: float, model: Model | _Local, config: SimConfig, v0: float = 0.0) -> PathRecord:
    """Scalar diffusion dV = alpha (theta - V) dt + h(V) dt + sqrt(2 g(V)) dB."""
    if theta < 0:
        raise ModelError("theta must be nonnegative")
    loc = _local(model)
    _check_a1(loc)
    x0 = as_configuration([v0], 1)
    out, _ = _run(x0[None, :], [config.replicate_index], loc, config, K.INFLOW_CONST, theta=theta, sigma=np.ones(1))
    rec = out[0]
    return PathRecord(np.array(config.record_times), rec, None, None, config.seed, config.replicate_index,
                      {"theta": theta})


def immigration_replicates(theta: float, model, config: SimConfig, replicates: int, v0: float = 0.0,
                           workers: int = 1) -> np.ndarray:
    """Independent immigration-diffusion paths; returns (replicates, len(record_times))."""
    if theta < 0:
        raise ModelError("theta must be nonnegative")
    loc = _local(model)
    _check_a1(loc)
    x0 = np.full((replicates, 1), float(as_configuration([v0], 1)[0]))
    reps = np.arange(config.replicate_index, config.replicate_index + replicates)
    out, _ = _run(x0, reps, loc, config, K.INFLOW_CONST, theta=theta, sigma=np.ones(1), workers=workers)
    return out[:, :, 0]
