import csv
import json

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from reglab.sde.output import (
    CSV_SCHEMA_VERSION, file_sha256, summary_table, trajectory_rows, write_csv, write_json, write_summary_csv,
)


def test_summary_table_columns():
    s = np.array([[1.0, 2.0], [3.0, 6.0]])
    t = summary_table([0.0, 1.0], s)
    np.testing.assert_allclose(t, [[0.0, 2.0, 2.0, 1.0], [1.0, 4.0, 8.0, 2.0]])


def test_single_replicate_has_zero_spread():
    t = summary_table([0.5], [[3.0]])
    assert t[0, 2] == 0.0 and t[0, 3] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=6))
def test_csv_round_trips_exactly(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    conf = np.array([values])
    write_csv(p, trajectory_rows([0.25], conf))
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["time"] + [f"site_{i}" for i in range(len(values))]
    assert [float(v) for v in rows[1][1:]] == [float(v) for v in values]


def test_summary_header_and_hash_stable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    samples = np.random.default_rng(0).random((5, 3))
    write_summary_csv(a, [0, 1, 2], samples)
    write_summary_csv(b, [0, 1, 2], samples.copy())
    assert a.read_text().splitlines()[0] == "time,mean,var,se"
    assert file_sha256(a) == file_sha256(b)
    assert CSV_SCHEMA_VERSION == 1


def test_write_json_sorted(tmp_path):
    p = tmp_path / "m.json"
    write_json(p, {"b": 1, "a": [1.5]})
    assert p.read_text().index('"a"') < p.read_text().index('"b"')
    assert json.loads(p.read_text()) == {"a": [1.5], "b": 1}
