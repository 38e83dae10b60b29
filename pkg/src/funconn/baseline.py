"""Correlation baseline: binned counts, Pearson r, Fisher z, one-sided threshold."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .events import EventLog, EventSeries
from .model import TopologySnapshot
from .validation import check_event_log

_R_LIMIT = 1.0 - 1e-12


class UndefinedCorrelation(ValueError):
    """A series has zero variance, so its correlation is undefined."""


@dataclass(frozen=True)
class BaselineConfig:
    bin_width: int = 60
    z_alpha: float = 2.33
    paper_literal_z: bool = False

    def __post_init__(self):
        if self.bin_width < 1:
            raise ValueError("bin_width must be >= 1")
        if not self.z_alpha > 0:
            raise ValueError("z_alpha must be positive")


@dataclass(frozen=True)
class BinnedSeries:
    node_id: str
    counts: np.ndarray


def n_bins(T: int, bin_width: int) -> int:
    D = T // bin_width
    if D < 4:
        raise ValueError(f"{D} bins of width {bin_width} leave the z spread undefined (need >= 4)")
    return D


def bin_series(series: EventSeries, bin_width: int, T: int) -> BinnedSeries:
    """Events per bin ``[i*bin_width, (i+1)*bin_width)``; a partial last bin is dropped.

    Only the correlation test needs four bins, so any ``D >= 1`` is accepted here.
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    D = T // bin_width
    if D < 1:
        raise ValueError(f"record of {T} samples is shorter than one bin of {bin_width}")
    if T % bin_width:
        warnings.warn(f"dropping the trailing {T % bin_width} samples that do not fill a bin",
                      stacklevel=2)
    t = series.times[series.times < D * bin_width]
    return BinnedSeries(series.node_id, np.bincount(t // bin_width, minlength=D))


def pearson_r(x: BinnedSeries, y: BinnedSeries) -> float:
    """Sample Pearson correlation (divisor ``D - 1`` in both numerator and spreads)."""
    a = np.asarray(x.counts, dtype=np.float64)
    b = np.asarray(y.counts, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("binned series differ in length")
    D = a.size
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    if sa == 0 or sb == 0:
        raise UndefinedCorrelation(f"{x.node_id if sa == 0 else y.node_id} has zero variance")
    r = np.sum((a - a.mean()) * (b - b.mean())) / ((D - 1) * sa * sb)
    return float(np.clip(r, -1.0, 1.0))


def fisher_z(r, paper_literal: bool = False):
    """``atanh(r)``, with ``|r|`` held below 1.

    ``paper_literal=True`` returns ``ln(1 - r) / ln(1 + r)`` instead, which is
    not a variance-stabilising transform and is kept only for reproduction
    attempts.
    """
    r = np.clip(r, -_R_LIMIT, _R_LIMIT)
    if paper_literal:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log1p(-r) / np.log1p(r)
    return np.arctanh(r)


def sigma_z(D: int) -> float:
    return 1.0 / math.sqrt(D - 3)


def correlation_matrix(log: EventLog, bin_width: int):
    """Pearson r for all node pairs, plus a mask of nodes with non-zero variance."""
    D = n_bins(log.T, bin_width)
    nodes = log.node_ids
    rows, cols = [], []
    for i, s in enumerate(log.series.values()):
        t = s.times[s.times < D * bin_width] // bin_width
        rows.append(np.full(t.size, i))
        cols.append(t)
    rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, np.int64)
    X = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(nodes), D))
    X.sum_duplicates()
    s1 = np.asarray(X.sum(axis=1)).ravel()
    cross = (X @ X.T).toarray()
    cov = (cross - np.outer(s1, s1) / D) / (D - 1)
    var = np.diag(cov).copy()
    ok = var > 1e-12 * np.maximum(1.0, np.diag(cross))
    sd = np.sqrt(np.where(ok, var, 1.0))
    r = cov / np.outer(sd, sd)
    r[~ok, :] = np.nan
    r[:, ~ok] = np.nan
    return np.clip(r, -1.0, 1.0), ok, D


def baseline_infer(log: EventLog, config: BaselineConfig = BaselineConfig()) -> TopologySnapshot:
    model = CorrelationBaseline(config.bin_width, config.z_alpha, config.paper_literal_z)
    return model.fit(log).predict()


class CorrelationBaseline(BaseEstimator):
    """Static topology from pairwise correlation of binned event counts.

    An edge joins two nodes when ``z > z_alpha * sigma_z`` with
    ``sigma_z = 1 / sqrt(D - 3)``; pairs with an undefined correlation never
    get an edge.
    """

    def __init__(self, bin_width=60, z_alpha=2.33, paper_literal_z=False):
        self.bin_width = bin_width
        self.z_alpha = z_alpha
        self.paper_literal_z = paper_literal_z

    def fit(self, X, y=None):
        X = check_event_log(X)
        BaselineConfig(self.bin_width, self.z_alpha, self.paper_literal_z)
        r, ok, D = correlation_matrix(X, self.bin_width)
        self.nodes_ = X.node_ids
        self.r_ = r
        self.n_bins_ = D
        self.sigma_z_ = sigma_z(D)
        self.z_ = fisher_z(np.nan_to_num(r), self.paper_literal_z)
        self.z_[np.isnan(r)] = np.nan
        return self

    def normalized_z(self) -> np.ndarray:
        """``z / sigma_z`` for every pair (NaN where undefined)."""
        check_is_fitted(self, "z_")
        return self.z_ / self.sigma_z_

    def predict(self, X=None, z_alpha=None) -> TopologySnapshot:
        check_is_fitted(self, "z_")
        alpha = self.z_alpha if z_alpha is None else z_alpha
        with np.errstate(invalid="ignore"):
            adj = np.triu(self.z_ > alpha * self.sigma_z_, k=1)
        ia, ib = np.nonzero(adj)
        return TopologySnapshot(-1, self.nodes_, np.column_stack((ia, ib)).astype(np.int64), alpha)
