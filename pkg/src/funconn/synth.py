"""Synthetic event logs with known, time-varying functional groups.

Nodes are partitioned into groups. Each group undergoes cascades: at a
random onset a subset of its current members, drawn by preferential
attachment on past activity, each emit one event within ``d_max`` samples.
At evenly spaced steps some nodes move to another group.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, fields

import numpy as np

from ._io import read_kv
from .events import EventLog, EventSeries


@dataclass(frozen=True)
class SyntheticConfig:
    N: int = 100
    n_fg: int = 10
    n_casc: int = 200
    per_dev: float = 0.5
    d_max: int = 60
    T: int = 864_000
    n_step: int = 50
    n_change: int = 0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.type == "int" and (isinstance(getattr(self, f.name), bool)
                                    or int(getattr(self, f.name)) != getattr(self, f.name)):
                raise ValueError(f"{f.name} must be an integer")
        if not self.N >= self.n_fg >= 1:
            raise ValueError("N must be >= n_fg >= 1")
        if self.N % self.n_fg:
            raise ValueError("N must be divisible by n_fg")
        if not 0 < self.per_dev <= 1:
            raise ValueError("per_dev must lie in (0, 1]")
        if _round_half_up(self.per_dev * (self.N // self.n_fg)) < 1:
            raise ValueError("per_dev rounds to zero devices per cascade")
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")
        if self.T <= self.d_max:
            raise ValueError("T must exceed d_max")
        if self.n_casc < 0:
            raise ValueError("n_casc must be >= 0")
        if self.n_step < 0:
            raise ValueError("n_step must be >= 0")
        if self.n_change < 0:
            raise ValueError("n_change must be >= 0")
        if self.n_change and self.n_fg < 2:
            raise ValueError("membership changes need at least two groups")

    @classmethod
    def from_mapping(cls, values: dict) -> "SyntheticConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(key)
            kind = float if known[key].type == "float" else int
            try:
                kw[key] = kind(raw) if kind is float else int(str(raw), 10)
            except ValueError:
                raise ValueError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
        return cls(**kw)

    @classmethod
    def read(cls, path) -> "SyntheticConfig":
        return cls.from_mapping(read_kv(path))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for f in fields(self):
                fh.write(f"{f.name}={getattr(self, f.name)!r}\n")


def reference_config(n_change: int = 0, seed: int = 0) -> SyntheticConfig:
    """100 nodes in 10 groups, 200 cascades per group over 10 days at 1 s, 50 change steps."""
    return SyntheticConfig(N=100, n_fg=10, n_casc=200, per_dev=0.5, d_max=60,
                           T=10 * 86_400, n_step=50, n_change=n_change, seed=seed)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Membership intervals ``[start, end)`` tiling the record."""

    nodes: tuple[str, ...]
    starts: np.ndarray
    memberships: np.ndarray  # (n_intervals, N) group per node
    T: int

    @property
    def change_times(self) -> np.ndarray:
        return self.starts[1:]

    @property
    def intervals(self):
        ends = np.append(self.starts[1:], self.T)
        for s, e, m in zip(self.starts.tolist(), ends.tolist(), self.memberships):
            yield s, e, dict(zip(self.nodes, m.tolist()))

    def interval_index(self, t: int) -> int:
        if not 0 <= t < self.T:
            raise IndexError(f"sample {t} outside [0, {self.T})")
        return int(np.searchsorted(self.starts, t, side="right") - 1)

    def groups_at(self, t: int) -> np.ndarray:
        return self.memberships[self.interval_index(t)]

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (self.nodes == other.nodes and self.T == other.T
                and np.array_equal(self.starts, other.starts)
                and np.array_equal(self.memberships, other.memberships))

    __hash__ = None

    def write(self, dest) -> None:
        dest.write("start_sample,end_sample,node_id,group_id\n")
        for s, e, m in self.intervals:
            dest.writelines(f"{s},{e},{n},{g}\n" for n, g in m.items())

    @classmethod
    def read(cls, source) -> "GroundTruth":
        import csv
        if not hasattr(source, "read"):
            with open(source, encoding="utf-8", newline="") as fh:
                return cls.read(fh)
        rows = list(csv.DictReader(source))
        if not rows:
            raise ValueError("empty ground truth")
        nodes = tuple(sorted({r["node_id"] for r in rows}))
        col = {n: i for i, n in enumerate(nodes)}
        bounds = sorted({(int(r["start_sample"]), int(r["end_sample"])) for r in rows})
        row_of = {b: i for i, b in enumerate(bounds)}
        memb = np.full((len(bounds), len(nodes)), -1, dtype=np.int64)
        for r in rows:
            memb[row_of[(int(r["start_sample"]), int(r["end_sample"]))], col[r["node_id"]]] = \
                int(r["group_id"])
        if (memb < 0).any():
            raise ValueError("ground truth membership is not total in every interval")
        starts = np.array([b[0] for b in bounds], dtype=np.int64)
        ends = np.array([b[1] for b in bounds], dtype=np.int64)
        if starts[0] != 0 or np.any(starts[1:] != ends[:-1]):
            raise ValueError("ground truth intervals do not tile the record")
        return cls(nodes, starts, memb, int(ends[-1]))


def membership_at(gt: GroundTruth, t: int) -> dict[str, int]:
    return dict(zip(gt.nodes, gt.groups_at(t).tolist()))


def node_names(N: int) -> tuple[str, ...]:
    width = len(str(N - 1))
    return tuple(f"n{i:0{width}d}" for i in range(N))


def generate(config: SyntheticConfig, preferential: bool = True, with_cascades: bool = False):
    """Draw an event log and its ground truth; fully determined by ``config.seed``.

    ``preferential=False`` picks cascade devices uniformly (for comparison).
    ``with_cascades=True`` also returns the ``(onset, group)`` of every
    cascade in processing order, as an ``(n, 2)`` array.
    """
    c = config
    rng = np.random.default_rng(c.seed)
    size = c.N // c.n_fg
    group = np.repeat(np.arange(c.n_fg), size)

    starts = [0]
    memberships = [group.copy()]
    change_times = [(i + 1) * c.T // (c.n_step + 1) for i in range(c.n_step)]
    for t in change_times:
        if c.n_change:
            for _ in range(c.n_change):
                sizes = np.bincount(group, minlength=c.n_fg)
                # a node alone in its group stays put, so no group ever empties
                movable = np.flatnonzero(sizes[group] > 1)
                node = movable[rng.integers(movable.size)]
                target = rng.integers(c.n_fg - 1)
                target += target >= group[node]
                group[node] = target
        if t == starts[-1]:
            memberships[-1] = group.copy()
        else:
            starts.append(t)
            memberships.append(group.copy())
    starts_arr = np.array(starts, dtype=np.int64)
    memb = np.array(memberships, dtype=np.int64)

    onsets = rng.integers(0, c.T - c.d_max, size=(c.n_fg, c.n_casc))
    casc_group = np.repeat(np.arange(c.n_fg), c.n_casc)
    casc_time = onsets.reshape(-1)
    order = np.lexsort((casc_group, casc_time))

    emitted = np.zeros(c.N, dtype=np.int64)
    occupied: list[set[int]] = [set() for _ in range(c.N)]
    for ci in order.tolist():
        t0, fg = int(casc_time[ci]), int(casc_group[ci])
        interval = bisect.bisect_right(starts, t0) - 1
        members = np.flatnonzero(memb[interval] == fg)
        n_sel = max(1, _round_half_up(c.per_dev * members.size))
        if preferential:
            chosen = _weighted_without_replacement(rng, members, 1.0 + emitted[members], n_sel)
        else:
            chosen = rng.choice(members, size=n_sel, replace=False)
        delays = rng.integers(0, c.d_max + 1, size=n_sel)
        for node, dt in zip(chosen.tolist(), delays.tolist()):
            t = t0 + dt
            if t not in occupied[node]:
                occupied[node].add(t)
                emitted[node] += 1

    names = node_names(c.N)
    series = {names[i]: EventSeries(names[i], np.array(sorted(occupied[i]), dtype=np.int64))
              for i in range(c.N)}
    log, gt = EventLog(series, c.T), GroundTruth(names, starts_arr, memb, c.T)
    if with_cascades:
        return log, gt, np.column_stack((casc_time[order], casc_group[order]))
    return log, gt


def _weighted_without_replacement(rng, items, weights, n):
    """Sequential draws, each proportional to the remaining weights."""
    items = list(items)
    w = np.asarray(weights, dtype=np.float64).copy()
    out = []
    for _ in range(n):
        cdf = np.cumsum(w)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, len(items) - 1)
        out.append(items[i])
        w[i] = 0.0
    return np.array(out, dtype=np.int64)
