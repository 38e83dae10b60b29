"""Windowed pair scores from symmetric cross-correlation of event series.

For a pair of nodes the lag profile counts event pairs at each absolute lag,
its prefix sum counts "peaks" up to a lag, and the score is the largest
normalised deviation of that prefix sum from the mean over all pairs whose
within-window event-count product falls in the same log2 bin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .events import (EventLog, EventSeries, WindowSpec, estimate_tau_max,
                     iter_close_pairs, lag_cooccurrence_histogram, window_slice)
from .validation import check_event_log, check_tau


class Status(IntEnum):
    NO_INFORMATION = 0
    NON_POSITIVE = 1
    POSITIVE = 2


@dataclass(frozen=True)
class PairStatus:
    status: Status
    score: float = math.nan

    @classmethod
    def from_score(cls, s: float) -> "PairStatus":
        return cls(Status.POSITIVE if s > 0 else Status.NON_POSITIVE, float(s))


NO_INFORMATION = PairStatus(Status.NO_INFORMATION)


@dataclass(frozen=True)
class LagProfile:
    pair: tuple[str, str]
    counts: np.ndarray


@dataclass(frozen=True)
class CumulativePeaks:
    pair: tuple[str, str]
    R: np.ndarray


@dataclass(frozen=True)
class GroupingStats:
    bin_id: int
    pair_count: int
    mu: np.ndarray
    sigma: np.ndarray


# -- single-pair operations --------------------------------------------------

def cross_correlate(f: EventSeries, g: EventSeries, tau_max: int) -> LagProfile:
    """Lag profile of two event series from a single sorted sweep.

    Simultaneous events count once at lag 0.
    """
    tau_max = check_tau(tau_max)
    if f.node_id == g.node_id:
        raise ValueError("cross_correlate needs two distinct nodes")
    counts = np.zeros(tau_max + 1, dtype=np.int64)
    a, b = f.times, g.times
    lo = 0
    for t in a:
        while lo < b.size and b[lo] < t - tau_max:
            lo += 1
        j = lo
        while j < b.size and b[j] <= t + tau_max:
            counts[abs(int(b[j]) - int(t))] += 1
            j += 1
    pair = tuple(sorted((f.node_id, g.node_id)))
    return LagProfile(pair, counts)


def cumulative_peaks(profile: LagProfile) -> CumulativePeaks:
    return CumulativePeaks(profile.pair, np.cumsum(profile.counts))


def grouping_bin(n_f, n_g):
    """``floor(log2(n_f * n_g))``, exact for products below 2**53."""
    prod = np.asarray(n_f, dtype=np.int64) * np.asarray(n_g, dtype=np.int64)
    if np.any(prod < 1):
        raise ValueError("event counts must be >= 1")
    bins = np.frexp(prod.astype(np.float64))[1] - 1
    return int(bins) if bins.ndim == 0 else bins.astype(np.int64)


def score_pair(R: CumulativePeaks, stats: GroupingStats) -> float:
    """Maximum of ``(R - mu) / sigma`` over lags where ``sigma > 0`` (0 if none)."""
    r = np.asarray(R.R, dtype=np.float64)
    mu, sigma = np.asarray(stats.mu), np.asarray(stats.sigma)
    if not (r.shape == mu.shape == sigma.shape):
        raise ValueError("R and grouping statistics cover different lag ranges")
    ok = sigma > 0
    if not ok.any():
        return 0.0
    return float(np.max((r[ok] - mu[ok]) / sigma[ok]))


# -- per-window machinery ----------------------------------------------------

def _pairs_per_bin(counts: np.ndarray) -> dict[int, int]:
    """Number of unordered node pairs per bin, from per-node event counts."""
    vals, mult = np.unique(counts, return_counts=True)
    out: dict[int, int] = {}
    if vals.size == 0:
        return out
    prod = np.outer(vals, vals)
    npairs = np.outer(mult, mult)
    np.fill_diagonal(npairs, mult * (mult - 1) // 2)
    iu = np.triu_indices(vals.size)
    bins, npairs = grouping_bin(prod[iu], 1), npairs[iu]
    for b, n in zip(np.atleast_1d(bins).tolist(), np.atleast_1d(npairs).tolist()):
        if n:
            out[b] = out.get(b, 0) + n
    return out


def _window_cooccurrences(times, nodes, tau_max, n_nodes):
    """Lag profiles for every node pair with at least one co-occurrence.

    Returns ``(pairs, counts)``: ``pairs`` is ``(P, 2)`` with ``a < b``
    sorted lexicographically, ``counts`` is ``(P, tau_max + 1)``.
    """
    keys, lags = [], []
    for i, j in iter_close_pairs(times, tau_max):
        a, b = nodes[i], nodes[j]
        cross = a != b
        a, b = a[cross], b[cross]
        keys.append(np.minimum(a, b) * n_nodes + np.maximum(a, b))
        lags.append(times[j][cross] - times[i][cross])
    if not keys:
        return np.empty((0, 2), np.int64), np.empty((0, tau_max + 1), np.int64)
    keys = np.concatenate(keys)
    lags = np.concatenate(lags)
    uniq, inv = np.unique(keys, return_inverse=True)
    width = tau_max + 1
    counts = np.bincount(inv * width + lags, minlength=uniq.size * width)
    pairs = np.column_stack((uniq // n_nodes, uniq % n_nodes))
    return pairs, counts.reshape(uniq.size, width).astype(np.int64)


def _bin_sums(bins: np.ndarray, R: np.ndarray, pair_counts: dict[int, int]):
    """Per-bin sums of R and R**2 over the pairs that have co-occurrences."""
    bin_ids = np.array(sorted(pair_counts), dtype=np.int64)
    width = R.shape[1]
    S1 = np.zeros((bin_ids.size, width), dtype=np.int64)
    S2 = np.zeros((bin_ids.size, width), dtype=np.int64)
    if R.shape[0]:
        row = np.searchsorted(bin_ids, bins)
        np.add.at(S1, row, R)
        np.add.at(S2, row, R * R)
    n = np.array([pair_counts[b] for b in bin_ids.tolist()], dtype=np.int64)
    return bin_ids, n, S1, S2


def _deviation_terms(num, n, S1, S2):
    """``(n*R - S1) / sqrt(n*S2 - S1**2)`` with ``-inf`` where the spread is 0.

    Integer numerators keep the result exact up to the final division.
    """
    big = n.size and int(n.max()) * max(int(S2.max(initial=0)), 1) >= 2 ** 62
    if big:
        nf, S1f, S2f = (x.astype(np.longdouble) for x in (n, S1, S2))
        var = nf[:, None] * S2f - S1f * S1f
        num = num.astype(np.longdouble)
    else:
        var = n[:, None] * S2 - S1 * S1
    ok = var > 0
    out = np.full(var.shape, -np.inf)
    out[ok] = (num[ok] / np.sqrt(var[ok])).astype(np.float64)
    return out


def _max_or_zero(terms: np.ndarray) -> np.ndarray:
    best = terms.max(axis=1) if terms.shape[1] else np.full(terms.shape[0], -np.inf)
    return np.where(np.isneginf(best), 0.0, best)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Scores of one window.

    ``pairs``/``scores`` list the pairs with at least one co-occurrence.
    Every other pair of active nodes is non-positive with the score of its
    bin (``zero_scores``); pairs touching an inactive node carry no
    information.
    """

    window: int
    nodes: tuple[str, ...]
    tau_max: int
    active: np.ndarray
    counts: np.ndarray
    pairs: np.ndarray
    scores: np.ndarray
    zero_scores: dict[int, float]
    stats: dict[int, GroupingStats] = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def _index(self):
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {n: i for i, n in enumerate(self.nodes)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def event_count(self, node: int) -> int:
        k = np.searchsorted(self.active, node)
        if k < self.active.size and self.active[k] == node:
            return int(self.counts[k])
        return 0

    def status(self, a: str, b: str) -> PairStatus:
        idx = self._index()
        i, j = sorted((idx[a], idx[b]))
        if i == j:
            raise ValueError("a pair needs two distinct nodes")
        ni, nj = self.event_count(i), self.event_count(j)
        if ni == 0 or nj == 0:
            return NO_INFORMATION
        keys = self.pairs[:, 0] * self.n_nodes + self.pairs[:, 1]
        k = np.searchsorted(keys, i * self.n_nodes + j)
        if k < keys.size and keys[k] == i * self.n_nodes + j:
            return PairStatus.from_score(self.scores[k])
        return PairStatus.from_score(self.zero_scores[grouping_bin(ni, nj)])

    @property
    def n_informative(self) -> int:
        m = self.active.size
        return m * (m - 1) // 2

    def informative_entries(self):
        """Arrays ``(a, b, status, score)`` over every pair of active nodes."""
        m = self.active.size
        ia, ib = np.triu_indices(m, k=1)
        a, b = self.active[ia], self.active[ib]
        bins = grouping_bin(self.counts[ia], self.counts[ib]) if ia.size else ia
        lookup = np.zeros(max(self.zero_scores, default=0) + 1)
        for k, v in self.zero_scores.items():
            lookup[k] = v
        scores = lookup[bins] if ia.size else np.empty(0)
        if self.pairs.shape[0]:
            keys = a * self.n_nodes + b
            ex = self.pairs[:, 0] * self.n_nodes + self.pairs[:, 1]
            pos = np.searchsorted(keys, ex)
            scores[pos] = self.scores
        status = np.where(scores > 0, int(Status.POSITIVE), int(Status.NON_POSITIVE)).astype(np.int8)
        return a, b, status, scores


def score_events(log: EventLog, tau_max: int, nodes: tuple[str, ...] | None = None,
                 window: int = 0, keep_stats: bool = True) -> ScoreTable:
    """Score every pair of nodes in an already windowed log."""
    tau_max = check_tau(tau_max)
    nodes = log.node_ids if nodes is None else tuple(nodes)
    N = len(nodes)
    times, nidx = log.flat(nodes)
    active, counts = np.unique(nidx, return_counts=True)
    pairs, lagc = _window_cooccurrences(times, nidx, tau_max, N)
    R = np.cumsum(lagc, axis=1)

    node_counts = np.zeros(N, dtype=np.int64)
    node_counts[active] = counts
    bins = grouping_bin(node_counts[pairs[:, 0]], node_counts[pairs[:, 1]]) if pairs.size else \
        np.empty(0, np.int64)
    pair_counts = _pairs_per_bin(counts)
    bin_ids, n, S1, S2 = _bin_sums(bins, R, pair_counts)

    row = np.searchsorted(bin_ids, bins)
    terms = _deviation_terms(n[row][:, None] * R - S1[row], n[row], S1[row], S2[row])
    scores = _max_or_zero(terms)
    zero = _max_or_zero(_deviation_terms(-S1, n, S1, S2))
    zero_scores = {int(b): float(s) for b, s in zip(bin_ids, zero)}

    stats = {}
    if keep_stats:
        for k, b in enumerate(bin_ids.tolist()):
            mu = S1[k] / n[k]
            var = (n[k] * S2[k].astype(np.float64) - S1[k].astype(np.float64) ** 2)
            sigma = np.sqrt(np.maximum(var, 0)) / n[k]
            stats[b] = GroupingStats(b, int(n[k]), mu, sigma)
    return ScoreTable(window, nodes, tau_max, active.astype(np.int64), counts.astype(np.int64),
                      pairs, scores, zero_scores, stats)


def grouping_statistics(log: EventLog, profiles, tau_max: int) -> dict[int, GroupingStats]:
    """Per-bin mean and population spread of R over all pairs of active nodes.

    ``profiles`` must hold every pair with at least one co-occurrence; the
    remaining pairs contribute all-zero R and are counted, not enumerated.
    """
    tau_max = check_tau(tau_max)
    counts = {k: len(s) for k, s in log.series.items() if len(s)}
    bins, Rs = [], []
    for p in profiles:
        if p.counts.size != tau_max + 1:
            raise ValueError("profile lag range does not match tau_max")
        a, b = p.pair
        if a not in counts or b not in counts:
            raise ValueError(f"profile {p.pair} references an inactive node")
        bins.append(grouping_bin(counts[a], counts[b]))
        Rs.append(np.cumsum(p.counts))
    pair_counts = _pairs_per_bin(np.array(list(counts.values()), dtype=np.int64))
    R = np.array(Rs, dtype=np.int64).reshape(len(Rs), tau_max + 1)
    bin_ids, n, S1, S2 = _bin_sums(np.array(bins, dtype=np.int64), R, pair_counts)
    out = {}
    for k, b in enumerate(bin_ids.tolist()):
        mu = S1[k] / n[k]
        var = n[k] * S2[k].astype(np.float64) - S1[k].astype(np.float64) ** 2
        out[b] = GroupingStats(b, int(n[k]), mu, np.sqrt(np.maximum(var, 0)) / n[k])
    return out


def score_window(log: EventLog, spec: WindowSpec, w: int, tau_max: int) -> ScoreTable:
    return score_events(window_slice(log, spec, w), tau_max, nodes=log.node_ids, window=w)


def score_windows(log: EventLog, spec: WindowSpec, tau_max: int,
                  keep_stats: bool = False) -> list[ScoreTable]:
    """Score all windows; cheaper than repeated :func:`score_window` calls."""
    tau_max = check_tau(tau_max)
    spec.check(log.T)
    nodes = log.node_ids
    times, nidx = log.flat()
    L = spec.window_length
    cut = np.searchsorted(times, np.arange(spec.num_windows + 1) * L)
    tables = []
    for w in range(spec.num_windows):
        lo, hi = cut[w], cut[w + 1]
        t, n = times[lo:hi] - w * L, nidx[lo:hi]
        tables.append(_score_flat(t, n, nodes, tau_max, w, keep_stats))
    return tables


def _score_flat(times, nidx, nodes, tau_max, w, keep_stats):
    series = {}
    if times.size:
        order = np.argsort(nidx, kind="stable")
        tn, nn = times[order], nidx[order]
        cuts = np.flatnonzero(np.diff(nn)) + 1
        for ct, cn in zip(np.split(tn, cuts), np.split(nn, cuts)):
            series[nodes[cn[0]]] = EventSeries(nodes[cn[0]], ct)
    window_log = EventLog(series, int(times.max()) + 1 if times.size else 0)
    return score_events(window_log, tau_max, nodes=nodes, window=w, keep_stats=keep_stats)


class PairScorer(TransformerMixin, BaseEstimator):
    """Turn an :class:`EventLog` into one :class:`ScoreTable` per window.

    ``fit`` fixes the window grid and, unless ``tau_max`` is given, estimates
    the maximum lag from the record's co-occurrence histogram.
    """

    def __init__(self, num_windows=100, window_length=None, tau_max=None,
                 tau_fraction=0.01, max_lag=300):
        self.num_windows = num_windows
        self.window_length = window_length
        self.tau_max = tau_max
        self.tau_fraction = tau_fraction
        self.max_lag = max_lag

    def fit(self, X, y=None):
        X = check_event_log(X)
        if self.window_length is not None and self.num_windows is not None \
                and self.window_length * self.num_windows > X.T:
            self.window_spec_ = WindowSpec.for_record(X.T, window_length=self.window_length)
        else:
            self.window_spec_ = WindowSpec.for_record(X.T, self.num_windows, self.window_length)
        if self.tau_max is None:
            self.lag_histogram_ = lag_cooccurrence_histogram(X, self.max_lag)
            self.tau_max_ = estimate_tau_max(self.lag_histogram_, self.tau_fraction)
        else:
            self.lag_histogram_ = None
            self.tau_max_ = check_tau(self.tau_max)
        self.nodes_ = X.node_ids
        return self

    def transform(self, X):
        check_is_fitted(self, "tau_max_")
        X = check_event_log(X)
        return score_windows(X, self.window_spec_, self.tau_max_)


def write_scores(tables, dest, mode: str = "all") -> None:
    """CSV ``window,node_a,node_b,status,score``; uninformative pairs omitted.

    ``mode='cooccurring'`` keeps only pairs with at least one co-occurrence;
    the score of every other co-active pair is fixed by its bin and is
    written by :func:`write_bin_scores`.
    """
    from ._io import fmt_float
    if mode not in ("all", "cooccurring"):
        raise ValueError(f"unknown mode {mode!r}")
    dest.write("window,node_a,node_b,status,score\n")
    for t in tables:
        if mode == "all":
            a, b, status, score = t.informative_entries()
        else:
            a, b, score = t.pairs[:, 0], t.pairs[:, 1], t.scores
            status = np.where(score > 0, int(Status.POSITIVE), int(Status.NON_POSITIVE))
        labels = np.where(status == int(Status.POSITIVE), "pos", "nonpos")
        nodes = t.nodes
        dest.writelines(f"{t.window},{nodes[i]},{nodes[j]},{lab},{fmt_float(s)}\n"
                        for i, j, lab, s in zip(a.tolist(), b.tolist(), labels.tolist(),
                                                score.tolist()))


def write_bin_scores(tables, dest) -> None:
    """CSV ``window,bin,score``: the score of a co-active pair without co-occurrences."""
    from ._io import fmt_float
    dest.write("window,bin,score\n")
    for t in tables:
        dest.writelines(f"{t.window},{b},{fmt_float(v)}\n" for b, v in sorted(t.zero_scores.items()))
