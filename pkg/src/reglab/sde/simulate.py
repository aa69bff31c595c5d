"""Lattice, coupled-pair and maximal-process simulation.

All randomness comes from :mod:`reglab.rng`: the normal increment used at
(step, site) of replicate ``r`` depends only on ``(seed, r, step, site)``, so
results do not depend on how replicates are split across workers, and two
runs sharing a seed share their Brownian increments.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from ..core import DriftSpec, Model, ModelError, as_configuration, validate_assumptions
from ..rng import check_seed
from . import _kernels as K

Scheme = Literal["full_truncation_em", "split_exact_feller"]
SCHEMES = {"full_truncation_em": K.FTE, "split_exact_feller": K.SPLIT}

BLOWUP_GUARD = 1e6


class NumericalError(RuntimeError):
    """A NaN appeared during integration."""

    def __init__(self, message, step=None, site=None):
        super().__init__(message)
        self.step = step
        self.site = site


class BlowUpError(RuntimeError):
    """The sigma-norm guard tripped; ``partial`` holds what was recorded."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SimConfig:
    """Time grid, scheme and random stream of a run.

    ``record_times`` must lie on the step grid; they default to
    ``(0, t_end)``. ``(seed, replicate_index)`` fixes every draw of a path.
    """

    dt: float = 1e-3
    t_end: float = 10.0
    record_times: tuple[float, ...] | None = None
    scheme: Scheme = "full_truncation_em"
    seed: int = 0
    replicate_index: int = 0
    guard: float = BLOWUP_GUARD

    def __post_init__(self):
        if not (0 < self.dt <= self.t_end):
            raise ModelError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        if self.scheme not in SCHEMES:
            raise ModelError(f"unknown scheme {self.scheme!r}")
        check_seed(self.seed)
        rt = (0.0, float(self.t_end)) if self.record_times is None else tuple(float(t) for t in self.record_times)
        if any(t < 0 or t > self.t_end + 1e-12 for t in rt):
            raise ModelError("record_times must lie in [0, t_end]")
        if list(rt) != sorted(rt):
            raise ModelError("record_times must be sorted")
        object.__setattr__(self, "record_times", rt)
        self.record_steps  # validates the grid

    @property
    def n_steps(self) -> int:
        return _on_grid(self.t_end, self.dt, "t_end")

    @property
    def record_steps(self) -> np.ndarray:
        return np.array([_on_grid(t, self.dt, "record time") for t in self.record_times], dtype=np.int64)


def _on_grid(t: float, dt: float, what: str) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ModelError(f"{what} {t} is not a multiple of dt={dt}")
    return k


@dataclass
class PathRecord:
    """One trajectory sampled at ``times``; row k of ``configurations`` is X at times[k]."""

    times: np.ndarray
    configurations: np.ndarray
    absorbed_at: float | None = None
    exceeded_at: float | None = None
    seed: int = 0
    replicate_index: int = 0
    meta: dict = field(default_factory=dict)


@dataclass
class Ensemble:
    """Independent replicates of one run.

    ``values`` has shape (replicates, len(times), n_sites). ``absorbed_at``
    holds NaN for paths still alive at the horizon.
    """

    times: np.ndarray
    values: np.ndarray
    replicate_indices: np.ndarray
    absorbed_at: np.ndarray
    seed: int
    config: SimConfig
    label: str = ""

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    def path(self, k: int) -> PathRecord:
        a = self.absorbed_at[k]
        return PathRecord(
            self.times, self.values[k], None if np.isnan(a) else float(a),
            None, self.seed, int(self.replicate_indices[k]),
        )

    def at(self, t: float) -> np.ndarray:
        """(replicates, n_sites) configurations at record time t."""
        idx = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))[0]
        if idx.size == 0:
            raise ModelError(f"time {t} was not recorded")
        return self.values[:, idx[0], :]


def _check_a1(model: Model):
    rep = validate_assumptions(model.drift, model.diffusion)
    if not rep.a1 and not (not model.diffusion.coeffs.any() and np.isfinite(model.drift.lipschitz_up)):
        # g = 0 leaves a deterministic ODE, which is well posed under upward Lipschitz h
        raise ModelError(f"assumption A1 fails: {', '.join(rep.notes)}")


def _scheme_code(model: Model, config: SimConfig) -> int:
    code = SCHEMES[config.scheme]
    if code == K.SPLIT and not model.diffusion.is_linear:
        raise ModelError("split_exact_feller needs g(x) = beta x")
    return code


def _kernel_arrays(model: Model):
    m = model.kernel.matrix
    return (
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.float64),
    )


def _batch_worker(args):
    return K.run_batch(*args)


def _run(x0, reps, model, config, mode, theta=0.0, mean_only=False, sigma=None, site_ids=None, workers=1):
    n = x0.shape[1]
    indptr, indices, weights = _kernel_arrays(model) if mode == K.INFLOW_KERNEL else (
        np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0)
    )
    if site_ids is None:
        site_ids = np.arange(n, dtype=np.int64)
    if sigma is None:
        sigma = model.weights.sigma if mode == K.INFLOW_KERNEL else np.full(n, 1.0 / n)
    common = (
        config.seed, config.n_steps, site_ids, mode, indptr, indices, weights, float(theta),
        float(model.params.alpha), model.drift.coeffs.astype(float), model.diffusion.coeffs.astype(float),
        float(config.dt), _scheme_code(model, config), config.record_steps, mean_only, sigma, float(config.guard),
    )
    reps = np.asarray(reps, dtype=np.int64)
    if workers <= 1 or len(reps) < 2:
        out, status, ev_step, ev_site = K.run_batch(x0, reps, *common)
    else:
        chunks = np.array_split(np.arange(len(reps)), min(workers, len(reps)))
        jobs = [(x0[c], reps[c]) + common for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_batch_worker, jobs))
        out = np.concatenate([p[0] for p in parts])
        status = np.concatenate([p[1] for p in parts])
        ev_step = np.concatenate([p[2] for p in parts])
        ev_site = np.concatenate([p[3] for p in parts])
    bad = np.nonzero(status == K.NAN)[0]
    if bad.size:
        r = bad[0]
        raise NumericalError(
            f"NaN in replicate {reps[r]} at step {ev_step[r]}, site {ev_site[r]}", int(ev_step[r]), int(ev_site[r])
        )
    absorbed = np.where(status == K.ABSORBED, ev_step * config.dt, np.nan)
    blown = np.nonzero(status == K.BLOWUP)[0]
    if blown.size:
        r = blown[0]
        partial = PathRecord(
            np.array(config.record_times), out[r], None, float(ev_step[r] * config.dt),
            config.seed, int(reps[r]),
        )
        raise BlowUpError(
            f"sigma-norm exceeded {config.guard:g} in replicate {reps[r]} at t={ev_step[r] * config.dt:g}",
            partial,
        )
    return out, absorbed


def simulate_replicates(
    initial,
    model: Model,
    config: SimConfig,
    replicates: int,
    first_replicate: int | None = None,
    workers: int = 1,
    label: str = "",
) -> Ensemble:
    """Run ``replicates`` independent lattice paths.

    ``initial`` is one configuration shared by all replicates or an array of
    shape (replicates, n_sites). Replicate indices run from
    ``first_replicate`` (default ``config.replicate_index``).
    """
    _check_a1(model)
    n = model.kernel.n_sites
    x0 = np.asarray(initial, dtype=float)
    if x0.ndim <= 1:
        x0 = np.broadcast_to(as_configuration(x0, n), (replicates, n))
    if x0.shape != (replicates, n) or np.any(x0 < 0) or not np.all(np.isfinite(x0)):
        raise ModelError(f"initial configurations must be nonnegative with shape ({replicates}, {n})")
    start = config.replicate_index if first_replicate is None else first_replicate
    reps = np.arange(start, start + replicates, dtype=np.int64)
    out, absorbed = _run(np.ascontiguousarray(x0), reps, model, config, K.INFLOW_KERNEL, workers=workers)
    return Ensemble(np.array(config.record_times), out, reps, absorbed, config.seed, config, label)


def simulate_lattice(initial, model: Model, config: SimConfig) -> PathRecord:
    """Integrate the lattice system for replicate ``config.replicate_index``."""
    ens = simulate_replicates(initial, model, config, 1)
    return ens.path(0)


def simulate_coupled_replicates(
    x1, x2, drift1: DriftSpec, drift2: DriftSpec, model: Model, config: SimConfig,
    replicates: int, workers: int = 1,
) -> tuple[Ensemble, Ensemble]:
    """Two systems differing only in drift and start, driven by the same noise."""
    n = model.kernel.n_sites
    a = as_configuration(x1, n)
    b = as_configuration(x2, n)
    e1 = simulate_replicates(a, model.with_drift(drift1), config, replicates, workers=workers, label="coupled-1")
    e2 = simulate_replicates(b, model.with_drift(drift2), config, replicates, workers=workers, label="coupled-2")
    return e1, e2


def simulate_coupled_pair(x1, x2, drift1: DriftSpec, drift2: DriftSpec, model: Model, config: SimConfig):
    """Single coupled pair for replicate ``config.replicate_index``."""
    if np.shape(x1) != np.shape(x2):
        raise ModelError("coupled paths need matching lattice shapes")
    e1, e2 = simulate_coupled_replicates(x1, x2, drift1, drift2, model, config, 1)
    return e1.path(0), e2.path(0)


def maximal_process_run(N: float, model: Model, config: SimConfig, replicates: int, workers: int = 1) -> Ensemble:
    """Replicates started from the constant configuration N everywhere.

    Runs for different N with the same ``config`` share their noise, which is
    the monotone coupling under which X^N increases with N.
    """
    if not N > 0:
        raise ModelError("N must be positive")
    n = model.kernel.n_sites
    return simulate_replicates(np.full(n, float(N)), model, config, replicates, workers=workers, label=f"maximal N={N:g}")


def with_records(config: SimConfig, times: Sequence[float]) -> SimConfig:
    return replace(config, record_times=tuple(times))

