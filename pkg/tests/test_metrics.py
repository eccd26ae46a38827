import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qosched.engine import run
from qosched.metrics import (
    CSV_COLUMNS, DELIVERED, DROPPED, NODATA, SATISFIED, KpiRecord, csv_text, delivery_ratio,
    export, mean_hol, read_csv, reward_curve, summarize,
)
from conftest import small_config


def record(completions, classes=("Voice",)):
    """completions: list of (tti, class, t_hol, delivered, satisfied)."""
    n = max((c[0] for c in completions), default=0) + 1
    kpi = KpiRecord(list(classes), n, 1)
    for t, c, h, d, s in completions:
        kpi.add_completion(t, c, h, d, s)
    for t in range(n):
        kpi.close_tti(t, [float(t)])
    return kpi


def test_delivery_ratio_examples():
    kpi = record([(0, "Voice", 1, True, True)] * 3 + [(1, "Voice", 200, False, False)])
    assert delivery_ratio(kpi.totals(), 0) == 0.75
    assert delivery_ratio(record([(0, "Voice", 1, True, True)] * 4).totals(), 0) == 1.0
    assert delivery_ratio(KpiRecord(["Voice"], 3, 1).totals(), 0) is NODATA


def test_mean_hol_examples():
    assert mean_hol(record([(0, "Voice", 5, True, True), (0, "Voice", 15, True, True)]).totals(), 0) == 10
    assert mean_hol(record([(2, "Voice", 7, True, True)]).totals(), 0) == 7
    assert mean_hol(KpiRecord(["Voice"], 1, 1).totals(), 0) is NODATA


def test_nodata_is_falsy_singleton():
    assert not NODATA and type(NODATA)() is NODATA and repr(NODATA) == "NoData"


def test_reward_curve_examples():
    assert np.allclose(reward_curve([3.0] * 20, 7), 3.0)
    x = np.random.default_rng(0).normal(size=30)
    assert np.allclose(reward_curve(x, 1), x)
    step = reward_curve([0.0] * 50 + [1.0] * 50, 10)
    assert np.all(np.diff(step) >= 0)
    with pytest.raises(ValueError):
        reward_curve([1.0], 0)
    assert reward_curve([], 5).size == 0


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.integers(1, 20))
def test_reward_curve_is_trailing_mean(xs, w):
    curve = reward_curve(xs, w)
    for i in range(len(xs)):
        window = xs[max(0, i - w + 1): i + 1]
        assert curve[i] == pytest.approx(np.mean(window), abs=1e-9)


@pytest.fixture(scope="module")
def sample_run():
    return run(small_config(scheduler="PF", n_ue=15, sim_ttis=400, mobile_fraction=0.2))


def test_cumulative_counters_monotone(sample_run):
    cum = sample_run.kpi.cumulative()
    assert np.all(np.diff(cum, axis=0) >= 0)
    tot = sample_run.kpi.totals()
    assert np.all(tot[:, SATISFIED] <= tot[:, DELIVERED])


def test_csv_shape_and_columns(sample_run):
    text = csv_text(sample_run.kpi)
    lines = text.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) - 1 == 400 * len(sample_run.kpi.classes)


def test_export_round_trip(tmp_path, sample_run):
    c, j = tmp_path / "r.csv", tmp_path / "r.json"
    export(sample_run.kpi, c, j, sample_run.summary)
    first = (c.read_bytes(), j.read_bytes())
    export(sample_run.kpi, c, j, sample_run.summary)
    assert (c.read_bytes(), j.read_bytes()) == first
    summary = json.loads(j.read_text())
    assert summary == json.loads(json.dumps(sample_run.summary))
    rebuilt = summarize(read_csv(c))
    for cls, vals in summary["classes"].items():
        assert rebuilt["classes"][cls]["delivery_ratio"] == vals["delivery_ratio"]
        assert rebuilt["classes"][cls]["mean_hol"] == vals["mean_hol"]
    assert summary["seed"] == sample_run.config.seed
    assert summary["config"]["n_ue"] == 15


def test_export_unwritable_path(tmp_path, sample_run):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export(sample_run.kpi, blocker / "r.csv", blocker / "r.json")
