"""Monte Carlo estimators built on the self-duality of the logistic system.

With duality weight c = gamma / beta the logistic lattice system X and its
counterpart X' driven by the transposed kernel satisfy

    E^x exp(-c <X_t, y>) = E^y exp(-c <x, X'_t>).

Letting x grow to infinity shows that the Laplace transform of the upper
invariant measure at a finitely supported lambda equals the probability
that X' started from lambda dies out. Both sides are estimated here by
independent replicate ensembles.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import (
    Lattice, Model, ModelError, ModelParams, as_configuration, build_kernel, transpose_kernel,
)
from .rng import derive_seed
from .sde.finite_mass import absorption_frequency, finite_mass_replicates
from .sde.simulate import SimConfig, simulate_replicates


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with its standard error."""

    estimate: float
    standard_error: float
    replicates: int
    seed: int

    def __post_init__(self):
        if self.standard_error < 0 or not np.isfinite(self.standard_error):
            raise ModelError("standard error must be finite and nonnegative")
        if self.replicates < 2:
            raise ModelError("an estimate needs at least 2 replicates")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["se"] = d.pop("standard_error")
        return d


def _estimate(samples, seed) -> McEstimate:
    s = np.asarray(samples, dtype=float)
    se = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
    return McEstimate(float(s.mean()), se, int(s.size), int(seed))


def duality_weight(params: ModelParams) -> float:
    """gamma / beta; both rates must be positive."""
    if not isinstance(params, ModelParams):
        raise ModelError("expected ModelParams")
    if not (params.gamma > 0 and params.beta > 0):
        raise ModelError("self-duality needs gamma > 0 and beta > 0; for gamma = 0 use dual_ode_solve")
    return params.gamma / params.beta


def _require_logistic(model: Model) -> None:
    if not model.is_logistic:
        raise ModelError("self-duality holds for the logistic drift with g(x) = beta x only")


def laplace_mc(initial, y, t: float, model: Model, config: SimConfig, replicates: int,
               workers: int = 1) -> McEstimate:
    """Estimate E^x exp(-<X_t, y>) for an arbitrary nonnegative test configuration y."""
    n = model.kernel.n_sites
    x = as_configuration(initial, n)
    y = as_configuration(y, n)
    if replicates < 2:
        raise ModelError("need at least 2 replicates")
    if t < 0:
        raise ModelError("t must be nonnegative")
    if t == 0 or not x.any() or not y.any():
        # no randomness enters: zero is absorbing and t = 0 is the initial state
        return McEstimate(float(math.exp(-x @ y)), 0.0, replicates, config.seed)
    cfg = replace(config, t_end=t, record_times=(t,))
    ens = simulate_replicates(x, model, cfg, replicates, workers=workers)
    return _estimate(np.exp(-ens.values[:, 0, :] @ y), config.seed)


def laplace_functional_mc(initial, lam, t: float, model: Model, config: SimConfig, replicates: int,
                          workers: int = 1) -> McEstimate:
    """Estimate E^x exp(-(gamma/beta) <X_t, lambda>)."""
    _require_logistic(model)
    c = duality_weight(model.params)
    lam = as_configuration(lam, model.kernel.n_sites)
    return laplace_mc(initial, c * lam, t, model, config, replicates, workers)


@dataclass(frozen=True)
class DualityGap:
    gap: float
    combined_se: float
    forward: McEstimate
    dual: McEstimate

    @property
    def passed(self) -> bool:
        return abs(self.gap) <= 3.0 * self.combined_se


def self_duality_gap(x, y, t: float, model: Model, config: SimConfig, replicates: int,
                     workers: int = 1) -> DualityGap:
    """Difference of the two sides of the self-duality identity.

    The forward side runs from x with the model kernel and weights y; the
    dual side runs from y with the transposed kernel and weights x, on a
    seed derived from ``config.seed`` so that the two ensembles are
    independent.
    """
    fwd = laplace_functional_mc(x, y, t, model, config, replicates, workers)
    dual_model = model.with_kernel(transpose_kernel(model.kernel))
    dual_cfg = replace(config, seed=derive_seed(config.seed, "dual-side"))
    dual = laplace_functional_mc(y, x, t, dual_model, dual_cfg, replicates, workers)
    return DualityGap(fwd.estimate - dual.estimate, math.hypot(fwd.standard_error, dual.standard_error), fwd, dual)


def feller_extinction_bound(total_mass: float, params: ModelParams) -> float:
    """exp(-gamma K m / beta): extinction probability of the dominating Feller diffusion."""
    if total_mass < 0:
        raise ModelError("total mass must be nonnegative")
    if not params.beta > 0:
        raise ModelError("beta must be positive")
    return math.exp(-params.gamma * params.capacity * total_mass / params.beta)


def _as_point_masses(lam, model: Model) -> dict:
    if isinstance(lam, dict):
        return {tuple(int(c) for c in np.atleast_1d(k)): float(v) for k, v in lam.items()}
    arr = as_configuration(lam, model.kernel.n_sites)
    coords = model.kernel.lattice.coords()
    return {tuple(int(c) for c in coords[i]): float(arr[i]) for i in np.nonzero(arr)[0]}


@dataclass(frozen=True)
class DualExtinction:
    """Absorption frequency of the dual finite-mass process.

    ``half`` is the frequency by T_max / 2; ``stabilized`` is false when the
    estimate still rose by more than 2 SE over the second half.
    """

    estimate: McEstimate
    half: McEstimate
    t_max: float
    stabilized: bool
    exceeded: int

    def to_dict(self) -> dict:
        d = self.estimate.to_dict()
        d.update(t_max=self.t_max, stabilized=self.stabilized, half_estimate=self.half.estimate,
                 exceeded=self.exceeded)
        return d


def extinction_prob_dual(lam, model: Model, config: SimConfig, replicates: int, t_max: float = 200.0,
                         leak: float = 1e-6, max_sites: int | None = None) -> DualExtinction:
    """Estimate the Laplace transform of the upper invariant measure at lambda.

    Runs finite-mass paths from lambda with the transposed migration stencil
    on a growing box and counts those absorbed by ``t_max``. ``lam`` is a
    mapping from lattice coordinates to masses or a configuration on the
    model lattice. Only ``dt``, ``scheme`` and ``seed`` of ``config`` are
    used. split_exact_feller is required in practice: see
    :mod:`reglab.sde.finite_mass`.
    """
    _require_logistic(model)
    duality_weight(model.params)
    items = {k: v for k, v in _as_point_masses(lam, model).items() if v != 0}
    if any(v < 0 for v in items.values()):
        raise ModelError("lambda must be nonnegative")
    if not items:
        return DualExtinction(McEstimate(1.0, 0.0, replicates, config.seed),
                              McEstimate(1.0, 0.0, replicates, config.seed), t_max, True, 0)
    # only the stencil matters: the finite-mass runner realizes it on its own box
    st = transpose_kernel(model.kernel).stencil
    reach = max(max(abs(o) for o in off) for off in st)
    dual_kernel = build_kernel(st, Lattice((2 * reach + 1,) * model.kernel.lattice.dim, "truncate"))
    dual_model = model.with_kernel(dual_kernel)
    cfg = SimConfig(dt=config.dt, t_end=t_max, record_times=(0.0, t_max / 2, t_max), scheme=config.scheme,
                    seed=config.seed, guard=config.guard)
    kw = {} if max_sites is None else {"max_sites": max_sites}
    res = finite_mass_replicates(items, dual_model, cfg, replicates, leak=leak, **kw)
    p, se = absorption_frequency(res, t_max)
    p2, se2 = absorption_frequency(res, t_max / 2)
    exceeded = sum(r.exceeded_at is not None for r in res)
    return DualExtinction(
        McEstimate(p, se, replicates, config.seed), McEstimate(p2, se2, replicates, config.seed),
        float(t_max), bool(p - p2 <= 2.0 * se), exceeded,
    )


@dataclass(frozen=True)
class BatteryInstance:
    sides: tuple[int, ...]
    stencil: dict
    x: np.ndarray
    y: np.ndarray
    t: float


def random_battery(n: int, seed: int, max_side: int = 4) -> list[BatteryInstance]:
    """Random (lattice, asymmetric stencil, x, y, t) instances on tori up to max_side^2.

    Stencils put positive weight on every unit step (so the torus kernel is
    irreducible) plus random extra diagonal or longer jumps.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        dim = int(rng.integers(1, 3))
        sides = tuple(int(s) for s in rng.integers(2, max_side + 1, size=dim))
        offsets = []
        for ax in range(dim):
            for sgn in (-1, 1):
                o = [0] * dim
                o[ax] = sgn
                offsets.append(tuple(o))
        extra = [tuple(int(v) for v in rng.integers(-2, 3, size=dim)) for _ in range(int(rng.integers(0, 3)))]
        offsets += [e for e in extra if any(e) and e not in offsets]
        w = rng.dirichlet(np.ones(len(offsets)))
        stencil = {o: float(v) for o, v in zip(offsets, w)}
        # exact unit sum after float rounding
        last = offsets[-1]
        stencil[last] = 1.0 - sum(v for o, v in stencil.items() if o != last)
        n_sites = int(np.prod(sides))
        x = np.round(rng.uniform(0.0, 2.0, n_sites) * (rng.random(n_sites) < 0.7), 3)
        y = np.zeros(n_sites)
        k = rng.choice(n_sites, size=int(rng.integers(1, min(3, n_sites) + 1)), replace=False)
        y[k] = np.round(rng.uniform(0.2, 2.0, k.size), 3)
        if not x.any():
            x[0] = 1.0
        t = float(np.round(rng.uniform(0.1, 1.0), 2))
        out.append(BatteryInstance(sides, stencil, x, y, t))
    return out
