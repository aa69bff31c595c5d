"""CSV and JSON writers for simulation output.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs produce byte-identical output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

CSV_SCHEMA_VERSION = 1


def _fmt(v) -> str:
    return repr(float(v))


def trajectory_rows(times, configurations):
    n = configurations.shape[1]
    yield ["time"] + [f"site_{i}" for i in range(n)]
    for t, row in zip(times, configurations):
        yield [_fmt(t)] + [_fmt(v) for v in row]


def summary_table(times, samples) -> np.ndarray:
    """Rows (time, mean, var, se) from samples of shape (replicates, len(times))."""
    samples = np.asarray(samples, dtype=float)
    r = samples.shape[0]
    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1) if r > 1 else np.zeros_like(mean)
    se = np.sqrt(var / r)
    return np.column_stack([np.asarray(times, float), mean, var, se])


def summary_rows(times, samples):
    yield ["time", "mean", "var", "se"]
    for row in summary_table(times, samples):
        yield [_fmt(v) for v in row]


def write_csv(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_trajectory_csv(path, record) -> None:
    write_csv(path, trajectory_rows(record.times, record.configurations))


def write_summary_csv(path, times, samples) -> None:
    write_csv(path, summary_rows(times, samples))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_dict(config) -> dict:
    d = asdict(config)
    d["record_times"] = list(d["record_times"])
    return d


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
