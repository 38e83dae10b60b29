"""Input checks shared by the estimators and the functional API."""
from __future__ import annotations

import numbers

import numpy as np

from .events import EventLog


def check_event_log(X) -> EventLog:
    if not isinstance(X, EventLog):
        raise TypeError(f"expected an EventLog, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("event log has no nodes")
    return X


def check_tau(tau) -> int:
    if isinstance(tau, bool) or not isinstance(tau, numbers.Integral) or tau < 0:
        raise ValueError(f"tau_max must be a non-negative integer, got {tau!r}")
    return int(tau)


def check_interval(name: str, value, lo: float, hi: float, *, open_lo=False,
                   open_hi=False) -> float:
    """Return ``value`` as float, raising ``ValueError`` outside the interval."""
    v = float(value)
    bad = (np.isnan(v) or v < lo or v > hi or (open_lo and v == lo)
           or (open_hi and v == hi))
    if bad:
        left = "(" if open_lo else "["
        right = ")" if open_hi else "]"
        raise ValueError(f"{name}={value!r} outside {left}{lo}, {hi}{right}")
    return v


def check_score_tables(tables) -> list:
    from .scoring import ScoreTable

    tables = list(tables)
    if not tables:
        raise ValueError("no score tables")
    nodes = tables[0].nodes
    for w, t in enumerate(tables):
        if not isinstance(t, ScoreTable):
            raise TypeError(f"expected ScoreTable, got {type(t).__name__}")
        if t.nodes != nodes:
            raise ValueError("score tables disagree on the node universe")
        if t.window != w:
            raise ValueError(f"score table {w} is labelled window {t.window}")
    return tables
