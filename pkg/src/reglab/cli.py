"""Command-line interface.

Exit codes: 0 success, 2 usage or model error, 3 numerical failure.
``REGLAB_SEED`` in the environment overrides ``--seed``.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import upper_invariant_estimate
from .core import DriftSpec, Model, ModelError
from .duality import extinction_prob_dual, self_duality_gap
from .modelfile import ModelFile, parse_model_text
from .numerics import (
    QuadratureError, critical_capacity, extinction_criterion_general, extinction_criterion_logistic, f_of_theta,
    gamma_theta_stats,
)
from .rng import derive_seed
from .sde import (
    BlowUpError, NumericalError, SimConfig, finite_mass_replicates, immigration_replicates,
    maximal_process_run, simulate_meanfield_particles, simulate_replicates,
)
from .sde.output import (
    CSV_SCHEMA_VERSION, config_dict, file_sha256, summary_rows, trajectory_rows, write_csv, write_json,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

DEFAULT_DT = 1e-3
DEFAULT_T_END = 10.0
DEFAULT_REPLICATES = 10_000
DEFAULT_PARTICLES = 10_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- helpers --

def _emit(obj, out: str | None = None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _seed(args) -> int:
    env = os.environ.get("REGLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"REGLAB_SEED must be an integer, got {env!r}") from None
    return int(args.seed)


def _load(args) -> ModelFile:
    text = getattr(args, "_model_text", None)
    if text is None:
        try:
            text = Path(args.model).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read model file {args.model}: {exc.strerror}") from None
    return parse_model_text(text, args.model)


def _times(spec: str | None, t_end: float) -> tuple[float, ...]:
    if spec is None:
        return tuple(t_end * k / 10 for k in range(11))
    try:
        vals = sorted({float(v) for v in spec.split(",") if v.strip()})
    except ValueError:
        raise UsageError(f"--record expects comma separated times, got {spec!r}") from None
    return tuple(vals)


def _config_from(path: str, kind: str, n: int, origin: int) -> np.ndarray:
    """Parse a configuration: 'const:C', 'delta:M' (point mass at the origin) or 'v0,v1,...'."""
    try:
        if kind == "const" or path.startswith("const:"):
            return np.full(n, float(path.split(":", 1)[-1]))
        if path.startswith("delta:"):
            x = np.zeros(n)
            x[origin] = float(path.split(":", 1)[1])
            return x
        vals = np.array([float(v) for v in path.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse configuration {path!r}") from None
    if vals.size == 1:
        return np.full(n, vals[0])
    if vals.size != n:
        raise UsageError(f"configuration needs {n} values, got {vals.size}")
    return vals


def _manifest(args, command: str, mf: ModelFile | None, seed: int | None, extra: dict, outputs: dict,
              started: float) -> dict:
    resolved = {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"}
    return {
        "tool": "reglab",
        "version": __version__,
        "command": command,
        "args": resolved,
        "seed": seed,
        "model_file": None if mf is None else mf.path,
        "model_sha256": None if mf is None else mf.sha256,
        "model_text": None if mf is None else mf.text,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "outputs": outputs,
        "duration_s": round(time.perf_counter() - started, 3),
        **extra,
    }


def _write_outputs(out_dir: Path, files: dict[str, list]) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, rows in files.items():
        p = out_dir / name
        write_csv(p, rows)
        hashes[name] = file_sha256(p)
    return hashes


# --------------------------------------------------------------- commands --

def cmd_capacity(args) -> int:
    rates = list(args.rates)
    if rates and len(rates) != 3:
        raise UsageError("capacity takes ALPHA BETA GAMMA or --alpha/--beta/--gamma")
    alpha, beta, gamma = rates if rates else (args.alpha, args.beta, args.gamma)
    if None in (alpha, beta, gamma):
        raise UsageError("capacity needs alpha, beta and gamma")
    res = critical_capacity(float(alpha), float(beta), float(gamma))
    _emit(res.to_dict(), args.out)
    return EXIT_OK


def _criterion(model: Model, form: str) -> dict:
    if form == "auto":
        form = "logistic" if model.is_logistic else "h"
    if form == "logistic":
        if not model.is_logistic:
            raise ModelError("the logistic form needs a logistic drift with Feller diffusion")
        return extinction_criterion_logistic(model.params).to_dict()
    return extinction_criterion_general(model.params, model.drift, model.diffusion, form=form).to_dict()


def cmd_criterion(args) -> int:
    mf = _load(args)
    _emit(_criterion(mf.model, args.form), args.out)
    return EXIT_OK


def _sim_config(args, seed: int, scheme: str | None = None) -> SimConfig:
    return SimConfig(
        dt=args.dt, t_end=args.t_end, record_times=_times(args.record, args.t_end),
        scheme=scheme or args.scheme, seed=seed,
    )


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    mf = _load(args)
    seed = _seed(args)
    cfg = _sim_config(args, seed)
    model = mf.model
    times = np.array(cfg.record_times)
    files: dict[str, list] = {}
    extra: dict = {}
    if args.replicates < 2:
        raise UsageError("--replicates must be at least 2")
    if args.mode == "lattice":
        ens = simulate_replicates(mf.initial, model, cfg, args.replicates, workers=args.workers)
        files["summary.csv"] = list(summary_rows(times, ens.values.mean(axis=2)))
        for r in range(min(args.trajectories, ens.replicates)):
            files[f"trajectory_{r}.csv"] = list(trajectory_rows(times, ens.values[r]))
        absorbed = ens.absorbed_at
        extra["absorbed_fraction"] = float(np.mean(~np.isnan(absorbed)))
    elif args.mode == "meanfield":
        m = args.particles
        x0 = float(np.mean(mf.initial))
        ens = simulate_meanfield_particles(m, x0, model, cfg, keep_particles=True)
        # rows are particles, columns record times
        files["summary.csv"] = list(summary_rows(times, ens.particles.T))
    elif args.mode == "immigration":
        if args.theta is None:
            raise UsageError("--mode immigration needs --theta")
        v0 = float(np.mean(mf.initial))
        vals = immigration_replicates(args.theta, model, cfg, args.replicates, v0=v0, workers=args.workers)
        files["summary.csv"] = list(summary_rows(times, vals))
    elif args.mode == "finite-mass":
        coords = model.kernel.lattice.coords()
        items = {tuple(int(c) for c in coords[i]): float(mf.initial[i]) for i in np.nonzero(mf.initial)[0]}
        if not items:
            items = {tuple(int(c) for c in coords[model.kernel.lattice.origin_index]): 0.0}
        res = finite_mass_replicates(items, model, cfg, args.replicates, max_sites=args.max_sites,
                                     workers=args.workers)
        tot = np.array([r.total_mass for r in res])
        files["summary.csv"] = list(summary_rows(times, tot))
        files["absorption.csv"] = [["replicate", "absorbed_at", "exceeded_at"]] + [
            [str(k), "" if r.absorbed_at is None else repr(float(r.absorbed_at)),
             "" if r.exceeded_at is None else repr(float(r.exceeded_at))]
            for k, r in enumerate(res)
        ]
        extra["absorbed_fraction"] = float(np.mean([r.absorbed_at is not None for r in res]))
    elif args.mode == "maximal":
        grid = _n_grid(args.n_grid)
        for n in grid:
            ens = maximal_process_run(n, model, cfg, args.replicates, workers=args.workers)
            sm = ens.values.mean(axis=2)
            tag = f"{n:g}"
            files[f"summary_N{tag}.csv"] = list(summary_rows(times, sm))
            rows = [["replicate", "time", "site_mean"]]
            for r in range(sm.shape[0]):
                for k, t in enumerate(times):
                    rows.append([str(r), repr(float(t)), repr(float(sm[r, k]))])
            files[f"sitemeans_N{tag}.csv"] = rows
        extra["n_grid"] = grid
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown mode {args.mode}")
    out_dir = Path(args.out)
    hashes = _write_outputs(out_dir, files)
    extra.update(mode=args.mode, scheme=cfg.scheme, sim_config=config_dict(cfg))
    manifest = _manifest(args, "simulate", mf, seed, extra, hashes, started)
    write_json(out_dir / "manifest.json", manifest)
    print(json.dumps({"out": str(out_dir), "files": sorted(hashes), **{k: v for k, v in extra.items() if k != "sim_config"}},
                     sort_keys=True))
    return EXIT_OK


def _n_grid(spec: str) -> list[float]:
    try:
        grid = sorted({float(v) for v in spec.split(",") if v.strip()})
    except ValueError:
        raise UsageError(f"--n-grid expects comma separated levels, got {spec!r}") from None
    if not grid or grid[0] <= 0:
        raise UsageError("--n-grid levels must be positive")
    return grid


def _duality_result(mf: ModelFile, args, seed: int) -> dict:
    lat = mf.model.kernel.lattice
    x = _config_from(args.x, "", lat.n_sites, lat.origin_index)
    y = _config_from(args.y, "", lat.n_sites, lat.origin_index)
    cfg = SimConfig(dt=args.dt, t_end=args.t, scheme=args.scheme, seed=seed)
    g = self_duality_gap(x, y, args.t, mf.model, cfg, args.replicates, workers=args.workers)
    return {
        "gap": g.gap, "combined_se": g.combined_se, "passed": g.passed,
        "forward": g.forward.to_dict(), "dual": g.dual.to_dict(), "t": args.t, "seed": seed,
    }


def cmd_duality(args) -> int:
    mf = _load(args)
    _emit(_duality_result(mf, args, _seed(args)), args.out)
    return EXIT_OK


def _nu_bar_result(mf: ModelFile, args, seed: int) -> dict:
    lat = mf.model.kernel.lattice
    lam = _config_from(args.lam, "", lat.n_sites, lat.origin_index)
    cfg = SimConfig(dt=args.dt, t_end=args.t_max, scheme=args.scheme, seed=seed)
    res = extinction_prob_dual(lam, mf.model, cfg, args.replicates, t_max=args.t_max)
    d = res.to_dict()
    d["seed"] = seed
    return d


def cmd_nu_bar(args) -> int:
    mf = _load(args)
    _emit(_nu_bar_result(mf, args, _seed(args)), args.out)
    return EXIT_OK


_SWEEP_FIELDS = {
    "criterion": ["integral_value", "extinct", "error_estimate", "indeterminate", "form"],
    "capacity": ["k_bar", "iterations", "residual"],
    "nu-bar": ["estimate", "se", "replicates", "stabilized"],
    "duality": ["gap", "combined_se", "passed"],
}


def _with_param(text: str, name: str, value: float) -> str:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), delimiters=("=",))
    cp.optionxform = str
    cp.read_string(text)
    cp["params"][name] = repr(float(value))
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
        lines.append("")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    mf = _load(args)
    master = _seed(args)
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    values = [args.start] if args.steps == 1 else list(np.linspace(args.start, args.stop, args.steps))
    fields = _SWEEP_FIELDS[args.inner]
    rows = [["param", "value", "seed"] + fields + ["error"]]
    for k, v in enumerate(values):
        seed = derive_seed(master, "sweep", k)
        row = [args.param, repr(float(v)), str(seed)]
        try:
            pm = parse_model_text(_with_param(mf.text, args.param, v), mf.path)
            p = pm.model.params
            if args.inner == "criterion":
                res = _criterion(pm.model, args.form)
            elif args.inner == "capacity":
                res = critical_capacity(p.alpha, p.beta, p.gamma).to_dict()
            elif args.inner == "nu-bar":
                res = _nu_bar_result(pm, args, seed)
            else:
                res = _duality_result(pm, args, seed)
            row += [_cell(res[f]) for f in fields] + [""]
        except (ModelError, QuadratureError, NumericalError, BlowUpError, UsageError) as exc:
            row += [""] * len(fields) + [f"{type(exc).__name__}: {exc}"]
        rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, rows)
    manifest = _manifest(args, "sweep", mf, master, {"values": [float(v) for v in values]},
                         {out.name: file_sha256(out)}, started)
    write_json(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    print(json.dumps({"out": str(out), "rows": len(rows) - 1}))
    return EXIT_OK


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_table(args) -> int:
    mf = _load(args)
    m = mf.model
    if args.steps < 2 or not 0 < args.start < args.stop:
        raise UsageError("table needs 0 < --from < --to and --steps >= 2")
    grid = np.linspace(args.start, args.stop, args.steps)
    if args.kind == "f":
        rows = [["theta", "f"]] + [[repr(float(t)), repr(float(f_of_theta(t, m.params, m.drift, m.diffusion)))]
                                   for t in grid]
    else:
        if args.theta is None or args.theta <= 0:
            raise UsageError("table density needs --theta > 0")
        gt = gamma_theta_stats(args.theta, m.params, m.drift, m.diffusion)
        rows = [["y", "density"]] + [[repr(float(y)), repr(float(gt.pdf(y)))] for y in grid]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, rows)
    print(json.dumps({"out": str(out), "rows": len(rows) - 1}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {run_dir / 'manifest.json'}: {exc}") from None
    if manifest.get("command") != "simulate" or manifest.get("mode") != "maximal":
        raise UsageError("analyze upper-invariant needs the output of 'simulate --mode maximal'")
    mf = parse_model_text(manifest["model_text"], manifest["model_file"])
    times = manifest["sim_config"]["record_times"]
    if args.times:
        times = _times(args.times, max(times))
    runs = {}
    for n in manifest["n_grid"]:
        data = np.loadtxt(run_dir / f"sitemeans_N{n:g}.csv", delimiter=",", skiprows=1, ndmin=2)
        all_t = np.array(manifest["sim_config"]["record_times"])
        reps = int(data[:, 0].max()) + 1
        arr = data[:, 2].reshape(reps, all_t.size)
        cols = [int(np.argmin(np.abs(all_t - t))) for t in times]
        runs[n] = arr[:, cols]
    times = [t for t in times]
    if times and times[0] == 0.0:
        # the envelope is infinite at t = 0
        runs = {n: a[:, 1:] for n, a in runs.items()}
        times = times[1:]
    drift: DriftSpec | None = mf.model.drift if mf.model.drift.concave else None
    rep = upper_invariant_estimate(runs, times, drift)
    d = rep.to_dict()
    d["provenance"] = [{"seed": manifest["seed"], "model_sha256": manifest["model_sha256"]}]
    _emit(d, args.out)
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    stored = dict(manifest["args"])
    ns = argparse.Namespace(**stored)
    ns._model_text = manifest["model_text"]
    if args.out is not None:
        ns.out = args.out
    if args.workers is not None:
        ns.workers = args.workers
    ns.seed = manifest["seed"] if manifest.get("seed") is not None else stored.get("seed", 0)
    handler = {"simulate": cmd_simulate, "sweep": cmd_sweep}.get(manifest["command"])
    if handler is None:
        raise UsageError(f"cannot rerun command {manifest['command']!r}")
    saved = os.environ.pop("REGLAB_SEED", None)
    try:
        return handler(ns)
    finally:
        if saved is not None:
            os.environ["REGLAB_SEED"] = saved


# ----------------------------------------------------------------- parser --

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reglab", description="Locally regulated branching diffusions on lattices.")
    p.add_argument("--version", action="version", version=f"reglab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("capacity", help="critical capacity of the logistic mean-field model")
    c.add_argument("rates", nargs="*", type=float, metavar="RATE", help="ALPHA BETA GAMMA")
    c.add_argument("--alpha", type=float)
    c.add_argument("--beta", type=float)
    c.add_argument("--gamma", type=float)
    c.add_argument("--out", help="also write the JSON result here")
    c.set_defaults(func=cmd_capacity)

    c = sub.add_parser("criterion", help="mean-field extinction criterion for a model file")
    c.add_argument("model")
    c.add_argument("--form", choices=["auto", "logistic", "h", "alpha"], default="auto")
    c.add_argument("--out")
    c.set_defaults(func=cmd_criterion)

    def sim_flags(q, dt=DEFAULT_DT, scheme="full_truncation_em"):
        q.add_argument("--dt", type=float, default=dt)
        q.add_argument("--scheme", choices=["full_truncation_em", "split_exact_feller"], default=scheme)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
        q.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("simulate", help="run the lattice, mean-field, immigration, finite-mass or maximal system")
    c.add_argument("model")
    c.add_argument("--mode", choices=["lattice", "meanfield", "immigration", "finite-mass", "maximal"],
                   default="lattice")
    sim_flags(c)
    c.add_argument("--t-end", type=float, default=DEFAULT_T_END)
    c.add_argument("--record", help="comma separated record times (default: 11 equally spaced)")
    c.add_argument("--n-grid", default="1,2,4,8,16", help="starting levels for --mode maximal")
    c.add_argument("--particles", type=int, default=DEFAULT_PARTICLES, help="M for --mode meanfield")
    c.add_argument("--theta", type=float, help="immigration level for --mode immigration")
    c.add_argument("--trajectories", type=int, default=0, help="write this many per-replicate trajectory CSVs")
    c.add_argument("--max-sites", type=int, default=200_000, help="box budget for --mode finite-mass")
    c.add_argument("--out", default="reglab-out", help="output directory")
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("duality", help="self-duality gap between forward and dual ensembles")
    c.add_argument("model")
    c.add_argument("--x", required=True, help="const:C, delta:M or comma separated values")
    c.add_argument("--y", required=True)
    c.add_argument("--t", type=float, required=True)
    sim_flags(c, dt=5e-3, scheme="split_exact_feller")
    c.add_argument("--out")
    c.set_defaults(func=cmd_duality)

    c = sub.add_parser("nu-bar", help="Laplace transform of the upper invariant measure via the dual process")
    c.add_argument("model")
    c.add_argument("--lambda", dest="lam", required=True, help="const:C, delta:M or comma separated values")
    c.add_argument("--t-max", type=float, default=200.0)
    sim_flags(c, dt=1e-2, scheme="split_exact_feller")
    c.add_argument("--out")
    c.set_defaults(func=cmd_nu_bar)

    c = sub.add_parser("sweep", help="run an inner command over a parameter grid")
    c.add_argument("model")
    c.add_argument("--param", choices=["alpha", "beta", "gamma", "capacity", "K"], required=True)
    c.add_argument("--from", dest="start", type=float, required=True)
    c.add_argument("--to", dest="stop", type=float, required=True)
    c.add_argument("--steps", type=int, required=True)
    c.add_argument("--inner", choices=sorted(_SWEEP_FIELDS), default="criterion")
    c.add_argument("--form", choices=["auto", "logistic", "h", "alpha"], default="auto")
    sim_flags(c, dt=1e-2, scheme="split_exact_feller")
    c.add_argument("--x", default="const:1")
    c.add_argument("--y", default="delta:1")
    c.add_argument("--t", type=float, default=1.0)
    c.add_argument("--lambda", dest="lam", default="delta:1")
    c.add_argument("--t-max", type=float, default=200.0)
    c.add_argument("--out", default="sweep.csv")
    c.set_defaults(func=cmd_sweep)

    c = sub.add_parser("table", help="CSV table of f(theta) or of the equilibrium density")
    c.add_argument("kind", choices=["f", "density"])
    c.add_argument("model")
    c.add_argument("--from", dest="start", type=float, required=True)
    c.add_argument("--to", dest="stop", type=float, required=True)
    c.add_argument("--steps", type=int, default=51)
    c.add_argument("--theta", type=float, help="immigration level for the density table")
    c.add_argument("--out", default="table.csv")
    c.set_defaults(func=cmd_table)

    c = sub.add_parser("analyze", help="post-process simulation output")
    asub = c.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    a = asub.add_parser("upper-invariant", help="verdicts for 'simulate --mode maximal' output")
    a.add_argument("run_dir")
    a.add_argument("--times", help="restrict to these record times")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("rerun", help="repeat a run from its manifest")
    c.add_argument("manifest")
    c.add_argument("--out", help="output directory (simulate) or file (sweep)")
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "param", None) == "K":
            args.param = "capacity"
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, ModelError, configparser.Error) as exc:
        print(f"reglab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, BlowUpError, QuadratureError, FloatingPointError, ArithmeticError) as exc:
        print(f"reglab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - anything else is reported as a numerical failure
        print(f"reglab: failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
