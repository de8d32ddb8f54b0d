import json

import numpy as np
from hypothesis import given, strategies as st

from esmalab.reporting import (ExperimentReport, dump_config_text, fmt, parse_config_text,
                               read_csv, write_csv)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(v):
    assert float(fmt(v)) == v


def test_special_values():
    assert fmt(float("nan")) == "nan" and fmt(-np.inf) == "-inf"
    assert fmt(True) == "1" and fmt(np.int64(7)) == "7" and fmt(0.1) == "0.1"


def test_csv_has_header_and_rows(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.5], [2, 1e-20]])
    rows = read_csv(tmp_path / "t.csv")
    assert rows == [{"a": "1", "b": "0.5"}, {"a": "2", "b": "1e-20"}]


def test_config_text_round_trip():
    cfg = {"eps": 0.5, "q": 10, "seeds": (0, 1, 2), "data": "two", "skip": None}
    back = parse_config_text(dump_config_text(cfg))
    assert back == {"eps": "0.5", "q": "10", "seeds": "0,1,2", "data": "two"}


def test_config_parser_accepts_comments_and_flag_names():
    text = "# comment\n--train-steps = 10  # trailing\nr: 0.4\n\n"
    assert parse_config_text(text) == {"train_steps": "10", "r": "0.4"}


def test_report_manifest(tmp_path):
    rep = ExperimentReport("demo", {"eps": 0.5}, [0, 1])
    rep.add_table("rates", ["seed", "rate"], [[0, 0.25], [1, float("nan")]])
    rep.summary = {"wins": np.int64(1), "ok": np.bool_(True)}
    doc = json.loads(rep.write(tmp_path).read_text())
    assert doc["experiment"] == "demo" and doc["seeds"] == [0, 1]
    assert doc["files"]["rates"] == {"file": "rates.csv", "columns": ["seed", "rate"], "rows": 2}
    assert doc["summary"] == {"wins": 1, "ok": True}
    assert rep.column("rates", "rate")[0] == 0.25
    assert read_csv(tmp_path / "rates.csv")[1]["rate"] == "nan"
