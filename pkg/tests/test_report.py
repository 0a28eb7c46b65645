import csv
import dataclasses
import json

import numpy as np
import pytest

from hdap.pipeline import run_hdap
from hdap.report import dumps_report, emit_report, load_report, strip_wall_clock


@pytest.fixture(scope="module")
def report(small_model, small_cfg):
    return run_hdap(dataclasses.replace(small_cfg, T=1), small_model)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_strip_wall_clock():
    doc = {"a": 1, "timing": {"x": 2}, "b_wall_s": 3.0, "c": [{"d_wall_s": 1, "e": 2}]}
    assert strip_wall_clock(doc) == {"a": 1, "c": [{"e": 2}]}
    assert doc["timing"] == {"x": 2}


def test_emit_files_and_rows(report, tmp_path):
    paths = emit_report(report, tmp_path)
    names = {p.name for p in paths}
    for stem in ("iterations", "cluster_latency", "eval_time", "mape", "trace"):
        assert f"{stem}.csv" in names and f"{stem}.svg" in names
    assert {"run.json", "pruned_model.json"} <= names
    rows = read_csv(tmp_path / "iterations.csv")
    assert len(rows) == 2 and rows[1][0] == "1"
    lat = read_csv(tmp_path / "cluster_latency.csv")
    assert lat[0] == ["stage", "cluster", "device_id", "latency_ms"]
    assert len(lat) == 1 + 2 * 18
    trace = read_csv(tmp_path / "trace.csv")
    assert len(trace) == 1 + len(report.eval_hardware_s)


def test_eval_time_columns_monotone(report, tmp_path):
    emit_report(report, tmp_path)
    rows = np.array(read_csv(tmp_path / "eval_time.csv")[1:], dtype=float)
    assert np.all(np.diff(rows[:, 1]) >= 0)
    assert np.all(np.diff(rows[:, 2]) > 0)
    assert rows[-1, 1] < rows[-1, 2]


def test_reemit_is_byte_identical(report, tmp_path):
    emit_report(report, tmp_path / "a")
    again = load_report(tmp_path / "a" / "run.json")
    emit_report(again, tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_json_without_wall_clock(report):
    doc = json.loads(dumps_report(report, wall_clock=False))
    assert "timing" not in doc
    assert all("surrogate_time_wall_s" not in r for r in doc["iterations"])
