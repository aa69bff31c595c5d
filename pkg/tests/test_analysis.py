import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reglab.analysis import (
    coupling_violation_report, icv_order_test, icv_test_functions, local_extinction_trend, mc_stats,
    positivity_check, upper_invariant_estimate,
)
from reglab.core import DiffusionSpec, DriftSpec, Lattice, Model, ModelError, ModelParams, build_kernel, nearest_neighbor_stencil
from reglab.sde import SimConfig, maximal_process_run, simulate_lattice, simulate_meanfield_particles, simulate_replicates


def test_mc_stats_examples():
    e = mc_stats(np.full(10, 3.0))
    assert e.estimate == 3.0 and e.standard_error == 0.0
    e = mc_stats([0.0, 1.0])
    assert e.estimate == 0.5 and e.standard_error == pytest.approx(0.5)
    b = np.random.default_rng(0).integers(0, 2, 100_000)
    assert mc_stats(b).standard_error == pytest.approx(0.5 / math.sqrt(b.size), rel=1e-3)
    with pytest.raises(ModelError):
        mc_stats([1.0])


def test_icv_menu_is_increasing_and_concave():
    x = np.linspace(0, 10, 2001)
    for name, f in icv_test_functions((0.5, 2.0), 1.0):
        v = f(x)
        assert np.all(np.diff(v) >= 0), name
        assert np.all(np.diff(v, 2) <= 1e-12), name
    assert len(icv_test_functions((0.5, 2.0), 1.0)) == 5


def test_icv_identical_samples_pass():
    s = np.random.default_rng(1).exponential(1.0, 2000)
    r = icv_order_test(s, s)
    assert r.passed and all(e.lhs == e.rhs for e in r.entries)


def test_icv_detects_reversed_order():
    rng = np.random.default_rng(2)
    big = rng.exponential(2.0, 5000)
    small = rng.exponential(0.5, 5000)
    assert not icv_order_test(big, small).passed


def test_icv_minimum_sample_size():
    with pytest.raises(ModelError):
        icv_order_test(np.ones(999), np.ones(5000))


def test_icv_deterministic_case_equality():
    k = build_kernel(nearest_neighbor_stencil(1), Lattice((8,)))
    m = Model(ModelParams(1, 0, 1, 1), DriftSpec.logistic(1, 1), DiffusionSpec.feller(0.0), k)
    cfg = SimConfig(dt=1e-3, t_end=1.0, record_times=(1.0,))
    lat = simulate_replicates(0.4, m, cfg, 1000).at(1.0)
    mf = simulate_meanfield_particles(1000, 0.4, m, cfg).final()
    r = icv_order_test(lat, mf, capacity=1.0)
    assert r.passed
    for e in r.entries:
        assert abs(e.lhs - e.rhs) < 1e-6


def test_icv_report_carries_provenance():
    k = build_kernel(nearest_neighbor_stencil(1), Lattice((4,)))
    m = Model.logistic(1, 1, 1, 1, k)
    ens = simulate_replicates(1.0, m, SimConfig(dt=0.01, t_end=0.5, seed=9), 1000, label="lattice")
    r = icv_order_test(ens.at(0.5), ens.at(0.5), runs=[ens])
    d = r.to_dict()
    assert d["provenance"][0]["seed"] == 9 and len(d["provenance"][0]["config_hash"]) == 16


def test_coupling_report_identical_and_mismatch():
    a = np.random.default_rng(3).random((5, 4, 3))
    r = coupling_violation_report(a, a)
    assert r.max_violation == r.q999_violation == r.fraction_positive == 0.0
    with pytest.raises(ModelError):
        coupling_violation_report(a, a[:, :3])


def test_coupling_report_values():
    a = np.zeros((1, 1, 1000))
    b = np.zeros((1, 1, 1000))
    a[0, 0, -1] = 0.5
    r = coupling_violation_report(a, b)
    assert r.max_violation == 0.5 and r.fraction_positive == pytest.approx(1e-3)


def test_trend_all_zero():
    t = [1.0, 2.0, 3.0]
    r = local_extinction_trend(t, np.zeros((10, 3)))
    assert r.terminal == 1.0 and r.consistent_with_extinction and r.nondecreasing


def test_trend_needs_three_points():
    with pytest.raises(ModelError):
        local_extinction_trend([1.0, 2.0], np.zeros((10, 2)))


def test_trend_survival_verdict():
    rng = np.random.default_rng(4)
    s = rng.exponential(1.5, (200, 4))
    r = local_extinction_trend([1, 2, 3, 4], s)
    assert r.verdict == "not consistent with extinction"


def _synthetic_runs(break_cell=None):
    rng = np.random.default_rng(5)
    times = [0.25, 0.5, 1.0, 2.0]
    noise = rng.normal(0, 0.01, (400, len(times), 4))
    runs = {}
    for n in (1, 2, 4, 8):
        level = np.array([min(n, 1.0 / (-math.expm1(-t))) * 0.9 for t in times])
        runs[n] = np.clip(level[None, :, None] + noise, 0, None)
    if break_cell:
        n, k = break_cell
        runs[n][:, k, :] *= 0.5
    return runs, times


def test_upper_invariant_synthetic_verdicts():
    runs, times = _synthetic_runs()
    r = upper_invariant_estimate(runs, times, DriftSpec.logistic(1, 1))
    assert r.n_monotone and r.t_monotone and r.envelope_ok
    assert r.table.shape == (16, 6)


def test_upper_invariant_names_violating_cell():
    runs, times = _synthetic_runs(break_cell=(4, 2))
    r = upper_invariant_estimate(runs, times, DriftSpec.logistic(1, 1))
    assert not r.n_monotone
    assert {"N": (2, 4), "t": 1.0} == {k: r.n_violations[0][k] for k in ("N", "t")}
    assert r.envelope_ok


def test_upper_invariant_grid_too_small():
    runs, times = _synthetic_runs()
    with pytest.raises(ModelError):
        upper_invariant_estimate({1: runs[1], 2: runs[2]}, times)


def test_upper_invariant_on_simulated_runs():
    k = build_kernel(nearest_neighbor_stencil(1), Lattice((8,)))
    m = Model.logistic(1, 1, 1, 1, k)
    times = (0.25, 0.5, 1.0, 2.0)
    cfg = SimConfig(dt=1e-3, t_end=2.0, record_times=times, seed=12)
    runs = {n: maximal_process_run(n, m, cfg, 1000) for n in (1, 2, 4, 8)}
    r = upper_invariant_estimate(runs, times, m.drift)
    assert r.n_monotone and r.t_monotone and r.envelope_ok
    assert len(r.to_dict()["provenance"]) == 4


def _torus(K):
    return Model.logistic(1, 1, 1, K, build_kernel(nearest_neighbor_stencil(1), Lattice((8,))))


def test_positivity_from_one():
    ens = simulate_replicates(1.0, _torus(1.0), SimConfig(dt=1e-3, t_end=1.0, seed=1), 1000)
    r = positivity_check(ens, 1.0)
    assert r.zero_site_fraction <= 0.01


def test_positivity_zero_fraction_decreases_with_dt():
    fr = [positivity_check(simulate_replicates(1.0, _torus(0.3), SimConfig(dt=dt, t_end=1.0, seed=1), 1000), 1.0)
          .zero_site_fraction for dt in (1e-1, 1e-2, 1e-3)]
    assert fr[0] > fr[1] > fr[2]


def test_positivity_from_zero_and_unrecorded_time():
    p = simulate_lattice(np.zeros(8), _torus(1.0), SimConfig(dt=0.01, t_end=1.0))
    r = positivity_check(p, 1.0)
    assert not r.all_positive and r.zero_site_fraction == 1.0
    with pytest.raises(ModelError):
        positivity_check(p, 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 50), st.floats(-5, 5))
def test_mc_stats_shift_invariance(n, c):
    x = np.random.default_rng(n).normal(size=n)
    a, b = mc_stats(x), mc_stats(x + c)
    assert b.estimate == pytest.approx(a.estimate + c, abs=1e-9)
    assert b.standard_error == pytest.approx(a.standard_error, rel=1e-6, abs=1e-12)
