"""Statistical post-processing of simulation output.

Every verdict compares a difference of Monte Carlo means against a multiple
of its standard error computed from the samples themselves.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DriftSpec, ModelError
from .duality import McEstimate
from .numerics.envelope import envelope_from_infinity
from .sde.output import config_dict
from .sde.simulate import Ensemble, PathRecord

MIN_ORDER_SAMPLES = 1000
_ROUNDING = 64 * np.finfo(float).eps


def mc_stats(samples, seed: int = 0) -> McEstimate:
    """Sample mean and its standard error s / sqrt(n) with the unbiased s."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 2:
        raise ModelError("mc_stats needs at least 2 samples")
    return McEstimate(float(s.mean()), float(s.std(ddof=1) / math.sqrt(s.size)), int(s.size), int(seed))


def config_hash(config) -> str:
    blob = json.dumps(config_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(*runs) -> list[dict]:
    out = []
    for r in runs:
        if isinstance(r, Ensemble):
            out.append({"label": r.label, "seed": r.seed, "config_hash": config_hash(r.config)})
    return out


def _per_replicate(samples, fn) -> np.ndarray:
    """fn applied to X_t(0) samples; a (replicates, sites) array is site-averaged per replicate.

    On a torus every site has the law of X_t(0), so the per-replicate site
    average is an unbiased, lower-variance sample of E fn(X_t(0)).
    """
    a = np.asarray(samples, dtype=float)
    if a.ndim == 1:
        return fn(a)
    if a.ndim == 2:
        return fn(a).mean(axis=1)
    raise ModelError("samples must be 1-d (one site) or 2-d (replicates, sites)")


@dataclass(frozen=True)
class OrderTestEntry:
    function: str
    lhs: float
    rhs: float
    combined_se: float
    passed: bool


@dataclass
class OrderTestReport:
    entries: list[OrderTestEntry]
    provenance: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "entries": [asdict(e) for e in self.entries], "provenance": self.provenance}


def icv_test_functions(lambdas, capacity: float):
    """The fixed menu of increasing concave test functions."""
    fns = [(f"1-exp(-{lam:g}x)", (lambda x, lam=lam: -np.expm1(-lam * x))) for lam in lambdas]
    for c in (capacity / 2, capacity, 2 * capacity):
        fns.append((f"min(x,{c:g})", (lambda x, c=c: np.minimum(x, c))))
    return fns


def icv_order_test(lattice_samples, meanfield_samples, lambdas=(0.5, 2.0), capacity: float = 1.0,
                   min_samples: int = MIN_ORDER_SAMPLES, runs=()) -> OrderTestReport:
    """Check E f(X_t(0)) <= E f(V_t) + 3 SE for increasing concave f.

    The menu is 1 - exp(-lambda x) for each lambda and min(x, c) for
    c in {K/2, K, 2K}. Both inputs must come from the same time t and from
    a deterministic or i.i.d. initial law.
    """
    a = np.asarray(lattice_samples, dtype=float)
    b = np.asarray(meanfield_samples, dtype=float)
    if a.shape[0] < min_samples or b.shape[0] < min_samples:
        raise ModelError(f"need at least {min_samples} samples on each side")
    if any(lam <= 0 for lam in lambdas):
        raise ModelError("lambdas must be positive")
    entries = []
    for name, fn in icv_test_functions(lambdas, capacity):
        fa = mc_stats(_per_replicate(a, fn))
        fb = mc_stats(_per_replicate(b, fn))
        se = math.hypot(fa.standard_error, fb.standard_error)
        # rounding allowance so that equal laws computed by different summation orders tie
        ulp = _ROUNDING * max(abs(fa.estimate), abs(fb.estimate))
        entries.append(OrderTestEntry(name, fa.estimate, fb.estimate, se, fa.estimate <= fb.estimate + 3 * se + ulp))
    return OrderTestReport(entries, provenance(*runs))


@dataclass(frozen=True)
class CouplingReport:
    max_violation: float
    q999_violation: float
    fraction_positive: float


def _values(x) -> np.ndarray:
    if isinstance(x, (PathRecord,)):
        return np.asarray(x.configurations, dtype=float)
    if isinstance(x, Ensemble):
        return x.values
    return np.asarray(x, dtype=float)


def coupling_violation_report(first, second) -> CouplingReport:
    """Statistics of (X1 - X2)^+ pooled over replicates, record times and sites."""
    a, b = _values(first), _values(second)
    if a.shape != b.shape:
        raise ModelError(f"shape mismatch {a.shape} vs {b.shape}")
    v = np.maximum(a - b, 0.0).ravel()
    return CouplingReport(float(v.max()), float(np.quantile(v, 0.999)), float(np.mean(v > 0)))


@dataclass
class TrendReport:
    times: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    nondecreasing: bool
    terminal: float
    verdict: str
    threshold: float = 0.95

    @property
    def consistent_with_extinction(self) -> bool:
        return self.verdict == "consistent with extinction"

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(), "values": self.values.tolist(),
            "se": self.standard_errors.tolist(), "nondecreasing": self.nondecreasing,
            "terminal": self.terminal, "verdict": self.verdict, "threshold": self.threshold,
        }


def local_extinction_trend(times, samples, threshold: float = 0.95) -> TrendReport:
    """Trend of E exp(-X_t(0)) toward 1.

    ``samples`` has shape (replicates, len(times)) with X_t(0), or
    (replicates, len(times), sites) on a torus, in which case each
    replicate contributes its site average. Consecutive estimates may dip by
    at most 2 SE of their paired difference.
    """
    times = np.asarray(times, dtype=float)
    a = np.asarray(samples, dtype=float)
    if times.size < 3:
        raise ModelError("need at least 3 time points")
    if a.shape[1] != times.size:
        raise ModelError("samples do not match times")
    e = np.exp(-a)
    per = e if e.ndim == 2 else e.mean(axis=2)
    vals = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(per.shape[0])
    d = np.diff(per, axis=1)
    d_se = d.std(axis=0, ddof=1) / math.sqrt(per.shape[0])
    nondec = bool(np.all(d.mean(axis=0) >= -2.0 * d_se))
    terminal = float(vals[-1])
    verdict = "consistent with extinction" if terminal >= threshold else "not consistent with extinction"
    return TrendReport(times, vals, se, nondec, terminal, verdict, threshold)


@dataclass
class UpperInvariantReport:
    """Marginal statistics of the maximal-process runs and three verdicts.

    ``table`` rows are (N, t, mean, var, se, envelope). Each ``*_violations``
    list names the offending grid cells.
    """

    table: np.ndarray
    n_monotone: bool
    n_violations: list
    t_monotone: bool
    t_violations: list
    envelope_ok: bool
    envelope_violations: list
    nu_bar_mean: float
    nu_bar_se: float
    provenance: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "columns": ["N", "t", "mean", "var", "se", "envelope"],
            "table": self.table.tolist(),
            "n_monotone": self.n_monotone, "n_violations": self.n_violations,
            "t_monotone": self.t_monotone, "t_violations": self.t_violations,
            "envelope_ok": self.envelope_ok, "envelope_violations": self.envelope_violations,
            "nu_bar_mean": self.nu_bar_mean, "nu_bar_se": self.nu_bar_se, "provenance": self.provenance,
        }


def _site_means(run, times) -> np.ndarray:
    """(replicates, len(times)) per-replicate site averages at the given times."""
    if isinstance(run, Ensemble):
        cols = [run.at(t).mean(axis=1) for t in times]
        return np.column_stack(cols)
    a = np.asarray(run, dtype=float)
    return a.mean(axis=2) if a.ndim == 3 else a


def _paired(d: np.ndarray) -> tuple[float, float]:
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def upper_invariant_estimate(runs: dict, times, drift: DriftSpec | None = None,
                             tol_se: float = 2.0, envelope_se: float = 3.0) -> UpperInvariantReport:
    """Analyse maximal-process runs over a grid of starting levels N and times t.

    ``runs`` maps N to an :class:`Ensemble` (or an array of shape
    (replicates, len(times), sites)). Verdicts: means nondecreasing in N at
    every t; means nonincreasing in t from their maximum on, at the largest
    N; means below the envelope plus 3 SE everywhere (needs ``drift``).
    Monotonicity allows a dip of ``tol_se`` paired standard errors.
    """
    ns = sorted(runs)
    times = [float(t) for t in times]
    if len(ns) < 3 or len(times) < 3:
        raise ModelError("need at least 3 grid points in N and in t")
    means = {n: _site_means(runs[n], times) for n in ns}
    rows, env_viol = [], []
    for n in ns:
        s = means[n]
        for k, t in enumerate(times):
            m = float(s[:, k].mean())
            var = float(s[:, k].var(ddof=1))
            se = math.sqrt(var / s.shape[0])
            env = envelope_from_infinity(t, drift) if drift is not None else math.nan
            if drift is not None and m > env + envelope_se * se:
                env_viol.append({"N": n, "t": t, "mean": m, "envelope": env, "se": se})
            rows.append((n, t, m, var, se, env))
    n_viol = []
    for lo, hi in zip(ns[:-1], ns[1:]):
        a, b = means[lo], means[hi]
        for k, t in enumerate(times):
            if a.shape == b.shape:
                d, se = _paired(b[:, k] - a[:, k])
            else:
                d = b[:, k].mean() - a[:, k].mean()
                se = math.hypot(b[:, k].std(ddof=1) / math.sqrt(len(b)), a[:, k].std(ddof=1) / math.sqrt(len(a)))
            if d < -tol_se * se:
                n_viol.append({"N": (lo, hi), "t": t, "difference": d, "se": se})
    top = means[ns[-1]]
    mu = top.mean(axis=0)
    k0 = int(np.argmax(mu))
    t_viol = []
    for k in range(k0, len(times) - 1):
        d, se = _paired(top[:, k + 1] - top[:, k])
        if d > tol_se * se:
            t_viol.append({"N": ns[-1], "t": (times[k], times[k + 1]), "difference": d, "se": se})
    last = top[:, -1]
    return UpperInvariantReport(
        np.array(rows, dtype=float), not n_viol, n_viol, not t_viol, t_viol, not env_viol, env_viol,
        float(last.mean()), float(last.std(ddof=1) / math.sqrt(last.size)),
        provenance(*[runs[n] for n in ns]),
    )


@dataclass(frozen=True)
class PositivityReport:
    all_positive: bool
    zero_site_fraction: float


def positivity_check(path, t0: float) -> PositivityReport:
    """Whether every site is strictly positive at t0, and the fraction of exact zeros."""
    if isinstance(path, Ensemble):
        x = path.at(t0)
    elif isinstance(path, PathRecord):
        idx = np.nonzero(np.isclose(path.times, t0, rtol=0, atol=1e-9))[0]
        if idx.size == 0:
            raise ModelError(f"time {t0} was not recorded")
        x = path.configurations[idx[0]]
    else:
        raise ModelError("expected a PathRecord or Ensemble")
    x = np.asarray(x)
    return PositivityReport(bool(np.all(x > 0)), float(np.mean(x == 0)))
