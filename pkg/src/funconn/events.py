"""Sparse per-node event series, windowing and lag histograms.

Events are kept as sorted integer sample indices per node; nothing in this
package materialises a dense 0/1 time series.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np


class EventLogError(ValueError):
    """Malformed or empty event input."""

    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


def _frozen_times(times) -> np.ndarray:
    arr = np.array(times, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EventSeries:
    """Sorted event sample indices emitted by one node."""

    node_id: str
    times: np.ndarray

    def __post_init__(self):
        times = _frozen_times(self.times)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError(f"event times of {self.node_id!r} must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, EventSeries):
            return NotImplemented
        return self.node_id == other.node_id and np.array_equal(self.times, other.times)

    __hash__ = None


@dataclass(frozen=True)
class EventLog:
    """Event series for a set of nodes over a record of ``T`` samples."""

    series: Mapping[str, EventSeries]
    T: int
    sample_period: float = 1.0

    def __post_init__(self):
        T = int(self.T)
        if T < 0:
            raise ValueError("record length T must be non-negative")
        ordered = {}
        for node_id in sorted(self.series):
            s = self.series[node_id]
            if s.node_id != node_id:
                raise ValueError(f"series keyed {node_id!r} carries node_id {s.node_id!r}")
            if s.times.size and (s.times[0] < 0 or s.times[-1] >= T):
                raise ValueError(f"events of {node_id!r} fall outside [0, {T})")
            ordered[node_id] = s
        object.__setattr__(self, "series", ordered)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "sample_period", float(self.sample_period))

    @classmethod
    def from_dict(cls, times: Mapping[str, Iterable[int]], T: int | None = None,
                  sample_period: float = 1.0) -> "EventLog":
        series = {k: EventSeries(k, np.unique(np.asarray(list(v), dtype=np.int64)))
                  for k, v in times.items()}
        if T is None:
            T = 1 + max((int(s.times[-1]) for s in series.values() if len(s)), default=-1)
        return cls(series, T, sample_period)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(self.series)

    @property
    def n_events(self) -> int:
        return sum(len(s) for s in self.series.values())

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, node_id: str) -> EventSeries:
        return self.series[node_id]

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return (self.T == other.T and self.sample_period == other.sample_period
                and dict(self.series) == dict(other.series))

    __hash__ = None

    def flat(self, nodes: tuple[str, ...] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All events as ``(times, node_index)`` sorted by time then node.

        ``node_index`` refers to ``nodes`` (default: this log's node ids);
        nodes absent from ``nodes`` raise ``KeyError``.
        """
        if nodes is None:
            nodes = self.node_ids
        index = {n: i for i, n in enumerate(nodes)}
        parts_t, parts_n = [], []
        for node_id, s in self.series.items():
            if len(s):
                parts_t.append(s.times)
                parts_n.append(np.full(len(s), index[node_id], dtype=np.int64))
        if not parts_t:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        t = np.concatenate(parts_t)
        n = np.concatenate(parts_n)
        order = np.lexsort((n, t))
        return t[order], n[order]


@dataclass(frozen=True)
class WindowSpec:
    """Contiguous, non-overlapping windows starting at sample 0."""

    window_length: int
    num_windows: int

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if self.num_windows < 1:
            raise ValueError("num_windows must be >= 1")

    @classmethod
    def for_record(cls, T: int, num_windows: int | None = None,
                   window_length: int | None = None) -> "WindowSpec":
        """Build a spec covering as much of ``[0, T)`` as possible.

        With neither argument given, 100 windows of ``T // 100`` samples.
        """
        if num_windows is not None and window_length is not None:
            spec = cls(int(window_length), int(num_windows))
        elif window_length is not None:
            spec = cls(int(window_length), max(1, T // int(window_length)))
        else:
            n = 100 if num_windows is None else int(num_windows)
            spec = cls(max(1, T // n), n)
        spec.check(T)
        return spec

    def check(self, T: int) -> None:
        if self.window_length * self.num_windows > T:
            raise ValueError(
                f"{self.num_windows} windows of {self.window_length} samples exceed T={T}")

    def bounds(self, w: int) -> tuple[int, int]:
        if not 0 <= w < self.num_windows:
            raise IndexError(f"window index {w} out of range [0, {self.num_windows})")
        return w * self.window_length, (w + 1) * self.window_length

    @property
    def covered(self) -> int:
        return self.window_length * self.num_windows


@dataclass(frozen=True)
class LagHistogram:
    counts: np.ndarray = field(default_factory=lambda: np.zeros(1, np.int64))

    @property
    def max_lag(self) -> int:
        return int(self.counts.size) - 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())


# -- ingestion ---------------------------------------------------------------

def quantize(timestamps, sample_period: float) -> np.ndarray:
    """Largest ``k`` with ``k * sample_period <= t`` in floating point.

    Equals ``floor(t / sample_period)`` up to rounding, and is exactly
    inverted by writing ``k * sample_period``.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    k = np.floor(ts / sample_period).astype(np.int64)
    # one correction step either way absorbs the division rounding
    k = np.where((k + 1) * sample_period <= ts, k + 1, k)
    k = np.where(k * sample_period > ts, k - 1, k)
    return k


def _rows_csv(text: IO[str]):
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise EventLogError("empty input") from None
    header = [h.strip() for h in header]
    try:
        i_node, i_ts = header.index("node_id"), header.index("timestamp")
    except ValueError:
        raise EventLogError("header must contain node_id and timestamp", 1) from None
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) <= max(i_node, i_ts):
            raise EventLogError(f"expected at least {max(i_node, i_ts) + 1} fields", lineno)
        yield lineno, row[i_node], row[i_ts]


def _rows_ndjson(text: IO[str]):
    for lineno, line in enumerate(text, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EventLogError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict) or "node_id" not in obj or "timestamp" not in obj:
            raise EventLogError("object needs node_id and timestamp", lineno)
        if not isinstance(obj["node_id"], str):
            raise EventLogError("node_id must be a string", lineno)
        if isinstance(obj["timestamp"], bool) or not isinstance(obj["timestamp"], (int, float)):
            raise EventLogError("timestamp must be numeric", lineno)
        yield lineno, obj["node_id"], obj["timestamp"]


def load_event_log(source, format: str = "csv", sample_period: float = 1.0,
                   T: int | None = None) -> EventLog:
    """Read ``(node_id, timestamp)`` records into an :class:`EventLog`.

    ``source`` is a path, or a text or binary stream. Timestamps (seconds)
    are floored to sample indices and duplicate ``(node, sample)`` events
    collapse to one. Extra columns/fields (e.g. an event type) are ignored.
    """
    if sample_period <= 0:
        raise ValueError("sample_period must be positive")
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return load_event_log(fh, format, sample_period, T)
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    if format == "csv":
        rows = _rows_csv(source)
    elif format == "ndjson":
        rows = _rows_ndjson(source)
    else:
        raise ValueError(f"unknown format {format!r}")

    nodes: list[str] = []
    stamps: list[float] = []
    for lineno, node_id, ts in rows:
        node_id = node_id.strip() if isinstance(node_id, str) else node_id
        if not node_id:
            raise EventLogError("empty node_id", lineno)
        try:
            value = float(ts)
        except (TypeError, ValueError):
            raise EventLogError(f"timestamp {ts!r} is not a number", lineno) from None
        if not np.isfinite(value) or value < 0:
            raise EventLogError(f"timestamp {ts!r} must be finite and non-negative", lineno)
        nodes.append(node_id)
        stamps.append(value)
    if not nodes:
        raise EventLogError("empty input")

    samples = quantize(stamps, sample_period)
    uniq, inverse = np.unique(np.asarray(nodes, dtype=object), return_inverse=True)
    order = np.lexsort((samples, inverse))
    inv, smp = inverse[order], samples[order]
    keep = np.ones(inv.size, dtype=bool)
    keep[1:] = (inv[1:] != inv[:-1]) | (smp[1:] != smp[:-1])
    inv, smp = inv[keep], smp[keep]
    cuts = np.flatnonzero(np.diff(inv)) + 1
    series = {}
    for chunk_n, chunk_t in zip(np.split(inv, cuts), np.split(smp, cuts)):
        node_id = str(uniq[chunk_n[0]])
        series[node_id] = EventSeries(node_id, chunk_t)
    if T is None:
        T = int(smp.max()) + 1
    return EventLog(series, T, sample_period)


def write_event_log(log: EventLog, dest) -> None:
    """Write ``log`` as ``node_id,timestamp`` CSV sorted by node then time."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_event_log(log, fh)
        return
    dest.write("node_id,timestamp\n")
    integral = log.sample_period == 1.0
    for node_id, s in log.series.items():
        if integral:
            dest.writelines(f"{node_id},{int(t)}\n" for t in s.times)
        else:
            dest.writelines(f"{node_id},{float(t) * log.sample_period!r}\n" for t in s.times)


# -- windowing ---------------------------------------------------------------

def window_slice(log: EventLog, spec: WindowSpec, w: int) -> EventLog:
    """Events of window ``w``, re-based to window-local time."""
    lo, hi = spec.bounds(w)
    series = {}
    for node_id, s in log.series.items():
        i, j = np.searchsorted(s.times, [lo, hi])
        if j > i:
            series[node_id] = EventSeries(node_id, s.times[i:j] - lo)
    return EventLog(series, spec.window_length, log.sample_period)


def iter_close_pairs(times: np.ndarray, max_lag: int):
    """Yield ``(i, j)`` index arrays with ``i < j`` and ``times[j] - times[i] <= max_lag``.

    ``times`` must be sorted. One chunk per index offset.
    """
    n = times.size
    live = np.arange(n - 1)
    offset = 1
    while live.size:
        live = live[live + offset < n]
        if not live.size:
            break
        live = live[times[live + offset] - times[live] <= max_lag]
        if live.size:
            yield live, live + offset
        offset += 1


def lag_cooccurrence_histogram(log: EventLog, max_lag: int) -> LagHistogram:
    """Count unordered cross-node event pairs at each absolute lag ``<= max_lag``."""
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    times, nodes = log.flat()
    counts = np.zeros(max_lag + 1, dtype=np.int64)
    for i, j in iter_close_pairs(times, max_lag):
        cross = nodes[i] != nodes[j]
        counts += np.bincount(times[j][cross] - times[i][cross], minlength=max_lag + 1)
    return LagHistogram(counts)


def estimate_tau_max(hist: LagHistogram, negligible_fraction: float = 0.01) -> int:
    """Smallest lag beyond which at most ``negligible_fraction`` of co-occurrences lie."""
    if not 0 < negligible_fraction < 1:
        raise ValueError("negligible_fraction must lie in (0, 1)")
    counts = np.asarray(hist.counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise ValueError("histogram holds no co-occurrences")
    tail = total - np.cumsum(counts)
    ok = np.flatnonzero(tail <= negligible_fraction * total)
    return int(ok[0]) if ok.size else hist.max_lag
