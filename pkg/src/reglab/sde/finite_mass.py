"""Finite-mass runs on a truncated box that grows with the population.

The box approximates Z^d: whenever the mass within two sites of its faces
exceeds ``leak`` times the total mass, every axis is enlarged by 25% (at
least two sites per side). A run ends when the total mass is exactly zero,
at the horizon, or when the box would exceed ``max_sites``.

Under full_truncation_em an empty site next to an occupied one is refilled
deterministically by migration, so on a lattice with alpha > 0 the total
mass cannot reach zero; use split_exact_feller, whose exact noise step has
an atom at zero, for absorption studies.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..core import Lattice, Model, ModelError, build_kernel
from ..rng import stream_key
from . import _kernels as K
from .simulate import NumericalError, PathRecord, SimConfig, _check_a1, _scheme_code

_ID_SHIFT = 1 << 20
_ID_BASE = 1 << 21

DEFAULT_MAX_SITES = 200_000


@dataclass
class _Box:
    lo: np.ndarray  # global coordinate of the first site on each axis
    sides: tuple[int, ...]

    @property
    def n(self) -> int:
        return int(np.prod(self.sides))

    def coords(self) -> np.ndarray:
        return np.indices(self.sides).reshape(len(self.sides), -1).T + self.lo

    def site_ids(self) -> np.ndarray:
        c = self.coords() + _ID_SHIFT
        ids = np.zeros(c.shape[0], dtype=np.int64)
        for axis in range(c.shape[1]):
            ids += c[:, axis].astype(np.int64) * (_ID_BASE**axis)
        return ids

    def band(self, width: int = 2) -> np.ndarray:
        idx = np.indices(self.sides).reshape(len(self.sides), -1).T
        sides = np.array(self.sides)
        return np.any((idx < width) | (idx >= sides - width), axis=1)


def _as_sparse(initial, dim: int) -> dict[tuple[int, ...], float]:
    if isinstance(initial, Mapping):
        items = {tuple(int(c) for c in np.atleast_1d(k)): float(v) for k, v in initial.items()}
    else:
        raise ModelError("finite-mass initial state must map coordinates to masses")
    for k, v in items.items():
        if len(k) != dim:
            raise ModelError(f"coordinate {k} has wrong dimension")
        if not np.isfinite(v) or v < 0:
            raise ModelError("masses must be finite and nonnegative")
    return items


def point_mass(mass: float, dim: int = 1) -> dict[tuple[int, ...], float]:
    return {(0,) * dim: float(mass)}


def _stencil_reach(stencil) -> int:
    return max((max(abs(o) for o in off) for off, w in stencil.items() if w > 0), default=0)


def _initial_box(items, reach: int) -> _Box:
    coords = np.array(list(items.keys()))
    margin = 2 + 2 * max(reach, 1)
    lo = coords.min(axis=0) - margin
    hi = coords.max(axis=0) + margin
    return _Box(lo, tuple(int(s) for s in hi - lo + 1))


def _grown(box: _Box, growth: float) -> _Box:
    sides = np.array(box.sides)
    extra = np.maximum(2, np.ceil(growth * sides / 2.0).astype(int))
    return _Box(box.lo - extra, tuple(int(s) for s in sides + 2 * extra))


def _embed(x: np.ndarray, old: _Box, new: _Box) -> np.ndarray:
    y = np.zeros(new.sides)
    sl = tuple(slice(o - n, o - n + s) for o, n, s in zip(old.lo, new.lo, old.sides))
    y[sl] = x.reshape(old.sides)
    return y.ravel()


@dataclass
class FiniteMassResult:
    """Outcome of one finite-mass path."""

    absorbed_at: float | None
    exceeded_at: float | None
    total_mass: np.ndarray
    times: np.ndarray
    final_box: tuple[tuple[int, ...], tuple[int, ...]]
    growths: int

    def absorbed_by(self, t: float) -> bool:
        return self.absorbed_at is not None and self.absorbed_at <= t + 1e-12


def _run_one(items, model: Model, config: SimConfig, replicate: int, leak: float, growth: float,
             max_sites: int, keep_configs: bool):
    stencil = model.kernel.stencil
    box = _initial_box(items, _stencil_reach(stencil))
    x = np.zeros(box.n)
    coords_index = {tuple(c): i for i, c in enumerate(box.coords())}
    for c, v in items.items():
        x[coords_index[c]] += v
    scheme = _scheme_code(model, config)
    key = np.uint64(stream_key(config.seed, replicate))
    rec_steps = config.record_steps
    n_rec = rec_steps.size
    totals = np.full(n_rec, np.nan)
    configs = []
    empty_rec = np.zeros(0, np.int64)
    dummy_out = np.zeros((0, 1))

    def setup(b: _Box):
        k = build_kernel(stencil, Lattice(b.sides, "truncate"))
        m = k.matrix
        return (m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64),
                b.site_ids(), b.band())

    indptr, indices, weights, ids, band = setup(box)
    hc = model.drift.coeffs.astype(float)
    gc = model.diffusion.coeffs.astype(float)
    alpha = float(model.params.alpha)
    scratch = np.empty(box.n)
    sigma = np.zeros(box.n)
    step = 0
    rp = 0
    absorbed = exceeded = None
    growths = 0
    n_steps = config.n_steps
    while True:
        while rp < n_rec and rec_steps[rp] == step:
            totals[rp] = x.sum()
            if keep_configs:
                configs.append((box.lo.copy(), box.sides, x.copy()))
            rp += 1
        if step >= n_steps or absorbed is not None or exceeded is not None:
            break
        target = rec_steps[rp] if rp < n_rec else n_steps
        target = min(target, n_steps)
        st, s, site, _ = K.advance(
            x, key, step, target, ids, K.INFLOW_KERNEL, indptr, indices, weights, 0.0,
            alpha, hc, gc, float(config.dt), scheme, empty_rec, 0, dummy_out, False,
            sigma, np.inf, band, leak, scratch,
        )
        step = s
        if st == K.NAN:
            raise NumericalError(f"NaN at step {s}, site {site}", s, site)
        if st == K.ABSORBED:
            absorbed = s * config.dt
            totals[rp:] = 0.0
            if keep_configs:
                configs.extend((box.lo.copy(), box.sides, np.zeros(box.n)) for _ in range(n_rec - rp))
            rp = n_rec
        elif st == K.GROW:
            new = _grown(box, growth)
            if new.n > max_sites:
                exceeded = s * config.dt
                continue
            x = _embed(x, box, new)
            box = new
            indptr, indices, weights, ids, band = setup(box)
            scratch = np.empty(box.n)
            sigma = np.zeros(box.n)
            growths += 1
    res = FiniteMassResult(absorbed, exceeded, totals, np.array(config.record_times),
                           (tuple(int(v) for v in box.lo), box.sides), growths)
    return res, configs, box


def simulate_finite_mass(
    initial: Mapping,
    model: Model,
    config: SimConfig,
    leak: float = 1e-6,
    growth: float = 0.25,
    max_sites: int = DEFAULT_MAX_SITES,
) -> PathRecord:
    """Run one finite-mass path; configurations are embedded in the final box.

    ``initial`` maps lattice coordinates to masses, e.g. ``{(0,): 1.0}``.
    The stencil of ``model.kernel`` is used on Z^d; the kernel's own lattice
    is ignored.
    """
    _check_a1(model)
    items = _as_sparse(initial, model.kernel.lattice.dim)
    if sum(items.values()) == 0.0:
        n = 1
        times = np.array(config.record_times)
        return PathRecord(times, np.zeros((times.size, n)), 0.0, None, config.seed, config.replicate_index,
                          {"box_lo": (0,), "box_sides": (1,)})
    res, configs, box = _run_one(items, model, config, config.replicate_index, leak, growth, max_sites, True)
    rows = [_embed(x, _Box(lo, sides), box) for lo, sides, x in configs]
    n_rec = len(config.record_times)
    while len(rows) < n_rec:
        rows.append(np.full(box.n, np.nan))
    return PathRecord(
        np.array(config.record_times), np.array(rows), res.absorbed_at, res.exceeded_at,
        config.seed, config.replicate_index,
        {"box_lo": tuple(int(v) for v in box.lo), "box_sides": box.sides, "growths": res.growths,
         "total_mass": res.total_mass},
    )


def finite_mass_replicates(
    initial: Mapping,
    model: Model,
    config: SimConfig,
    replicates: int,
    leak: float = 1e-6,
    growth: float = 0.25,
    max_sites: int = DEFAULT_MAX_SITES,
    first_replicate: int = 0,
    workers: int = 1,
) -> list[FiniteMassResult]:
    """Independent finite-mass paths, keeping only absorption times and total mass.

    Results are ordered by replicate index whatever the worker count.
    """
    _check_a1(model)
    items = _as_sparse(initial, model.kernel.lattice.dim)
    if sum(items.values()) == 0.0:
        times = np.array(config.record_times)
        return [FiniteMassResult(0.0, None, np.zeros(times.size), times, ((0,), (1,)), 0) for _ in range(replicates)]
    reps = list(range(first_replicate, first_replicate + replicates))
    if workers <= 1 or replicates < 2:
        return _chunk(items, model, config, reps, leak, growth, max_sites)
    chunks = [list(c) for c in np.array_split(reps, min(workers, replicates))]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(_chunk, *zip(*[(items, model, config, c, leak, growth, max_sites) for c in chunks]))
        return [r for part in parts for r in part]


def _chunk(items, model, config, reps, leak, growth, max_sites):
    return [_run_one(items, model, config, int(r), leak, growth, max_sites, False)[0] for r in reps]


def absorption_frequency(results: list[FiniteMassResult], t: float) -> tuple[float, float]:
    """Fraction of paths absorbed by time t and its binomial standard error."""
    hits = np.array([r.absorbed_by(t) for r in results], dtype=float)
    n = hits.size
    p = hits.mean()
    se = math.sqrt(max(p * (1 - p), 0.0) / n) if n > 1 else 0.0
    return float(p), se
