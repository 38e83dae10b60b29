import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from funconn.events import EventLog  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])


def random_log(rng, n_nodes, n_events, T, prefix="n") -> EventLog:
    """Events scattered over ``n_nodes`` nodes; some nodes may stay silent."""
    names = [f"{prefix}{i}" for i in range(n_nodes)]
    owner = rng.integers(0, n_nodes, size=n_events)
    when = rng.integers(0, T, size=n_events)
    times = {n: sorted(set(when[owner == i].tolist())) for i, n in enumerate(names)}
    return EventLog.from_dict(times, T=T)


def as_dict(log: EventLog) -> dict[str, list[int]]:
    return {n: s.times.tolist() for n, s in log.series.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_tables(nodes, windows, zero_score=-1.0):
    """Score tables from ``windows``: a list of ``(active_nodes, {(a, b): score})``.

    Every active node gets one event, so all pairs share bin 0 and active
    pairs without an explicit score get ``zero_score``.
    """
    from funconn.scoring import ScoreTable

    nodes = tuple(nodes)
    index = {n: i for i, n in enumerate(nodes)}
    out = []
    for w, (active, scored) in enumerate(windows):
        act = np.array(sorted(index[n] for n in active), dtype=np.int64)
        items = sorted((tuple(sorted((index[a], index[b]))), s) for (a, b), s in scored.items())
        pairs = np.array([p for p, _ in items], dtype=np.int64).reshape(-1, 2)
        scores = np.array([s for _, s in items], dtype=np.float64)
        out.append(ScoreTable(w, nodes, 1, act, np.ones(act.size, np.int64), pairs, scores,
                              {0: zero_score} if act.size > 1 else {}))
    return out


def status_sequences(tables):
    """Per-pair status codes and scores over windows, read through ``ScoreTable.status``."""
    import itertools
    nodes = tables[0].nodes
    statuses, scores = {}, {}
    for a, b in itertools.combinations(nodes, 2):
        seq = [t.status(a, b) for t in tables]
        statuses[a, b] = [int(e.status) for e in seq]
        scores[a, b] = [e.score for e in seq]
    return statuses, scores
