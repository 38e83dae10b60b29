import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import as_dict, random_log
from funconn.events import (EventLog, EventLogError, EventSeries, LagHistogram, WindowSpec,
                            estimate_tau_max, iter_close_pairs, lag_cooccurrence_histogram,
                            load_event_log, quantize, window_slice, write_event_log)
import oracles


def test_csv_round_trip(tmp_path):
    log = EventLog.from_dict({"b": [5, 1], "a": [0, 3, 3]}, T=10)
    path = tmp_path / "ev.csv"
    write_event_log(log, path)
    assert path.read_text() == "node_id,timestamp\na,0\na,3\nb,1\nb,5\n"
    back = load_event_log(path, T=10)
    assert back == log


def test_duplicates_collapse_and_extra_columns_ignored():
    text = "timestamp,node_id,kind\n3,a,x\n3,a,y\n1.7,b,z\n"
    log = load_event_log(io.StringIO(text))
    assert log["a"].times.tolist() == [3]
    assert log["b"].times.tolist() == [1]
    assert log.T == 4


def test_ndjson_and_binary_stream():
    lines = [{"node_id": "x", "timestamp": 2}, {"node_id": "y", "timestamp": 0.5}]
    data = "\n".join(json.dumps(r) for r in lines).encode()
    log = load_event_log(io.BytesIO(data), format="ndjson")
    assert log["x"].times.tolist() == [2]
    assert log["y"].times.tolist() == [0]


def test_sample_period_quantisation():
    log = load_event_log(io.StringIO("node_id,timestamp\na,0.3\na,0.6\na,1.19\n"),
                         sample_period=0.3)
    assert log["a"].times.tolist() == [1, 2, 3]
    assert quantize([0.9, 0.3 * 3], 0.3).tolist() == [3, 3]


@pytest.mark.parametrize("text, lineno", [
    ("node_id,timestamp\na,1\nb,oops\n", 3),
    ("node_id,timestamp\na,-1\n", 2),
    ("node_id,timestamp\n,4\n", 2),
    ("node,time\na,1\n", 1),
])
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(EventLogError) as err:
        load_event_log(io.StringIO(text))
    assert err.value.lineno == lineno


def test_empty_inputs_raise():
    with pytest.raises(EventLogError, match="empty"):
        load_event_log(io.StringIO(""))
    with pytest.raises(EventLogError, match="empty"):
        load_event_log(io.StringIO("node_id,timestamp\n"))


def test_series_must_increase():
    with pytest.raises(ValueError):
        EventSeries("a", np.array([3, 3]))
    s = EventSeries("a", np.array([1, 2]))
    with pytest.raises(ValueError):
        s.times[0] = 5


def test_window_spec_defaults_and_bounds():
    spec = WindowSpec.for_record(1000)
    assert (spec.window_length, spec.num_windows) == (10, 100)
    assert spec.bounds(99) == (990, 1000)
    with pytest.raises(IndexError):
        spec.bounds(100)
    assert WindowSpec.for_record(1005, window_length=100).num_windows == 10
    with pytest.raises(ValueError):
        WindowSpec.for_record(100, num_windows=10, window_length=11)


def test_window_slice_rebases():
    log = EventLog.from_dict({"a": [0, 12, 19], "b": [5], "c": [15]}, T=30)
    w1 = window_slice(log, WindowSpec(10, 3), 1)
    assert as_dict(w1) == {"a": [2, 9], "c": [5]}
    assert w1.T == 10


def test_lag_histogram_examples():
    log = EventLog.from_dict({"a": [10], "b": [10, 13], "c": [40]}, T=50)
    assert lag_cooccurrence_histogram(log, 5).counts.tolist() == [1, 0, 0, 1, 0, 0]
    # events of one node never pair with each other
    assert lag_cooccurrence_histogram(EventLog.from_dict({"a": [1, 2]}), 3).total == 0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n_nodes=st.integers(1, 6), n_events=st.integers(0, 40),
       max_lag=st.integers(0, 30))
def test_lag_histogram_matches_brute_force(seed, n_nodes, n_events, max_lag):
    log = random_log(np.random.default_rng(seed), n_nodes, n_events, 200)
    got = lag_cooccurrence_histogram(log, max_lag).counts.tolist()
    assert got == oracles.lag_histogram(as_dict(log), max_lag)


@given(st.lists(st.integers(0, 100), unique=True), st.integers(0, 20))
def test_close_pairs_enumerates_each_pair_once(ts, max_lag):
    t = np.array(sorted(ts), dtype=np.int64)
    got = sorted((int(i), int(j)) for a, b in iter_close_pairs(t, max_lag) for i, j in zip(a, b))
    want = [(i, j) for i in range(t.size) for j in range(i + 1, t.size) if t[j] - t[i] <= max_lag]
    assert got == want


def test_tau_estimate():
    hist = LagHistogram(np.array([50, 30, 15, 4, 1]))
    assert estimate_tau_max(hist, 0.01) == 3
    assert estimate_tau_max(hist, 0.05) == 2
    with pytest.raises(ValueError):
        estimate_tau_max(LagHistogram(np.zeros(5, np.int64)))


@given(st.lists(st.integers(0, 50), min_size=1, max_size=20), st.floats(0.001, 0.5))
def test_tau_estimate_leaves_small_tail(counts, frac):
    c = np.array(counts)
    if c.sum() == 0:
        return
    tau = estimate_tau_max(LagHistogram(c), frac)
    assert c[tau + 1:].sum() <= frac * c.sum()
    if tau > 0:
        assert c[tau:].sum() > frac * c.sum()
