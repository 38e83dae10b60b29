"""Node-level accuracy of an inferred topology against functional groups.

Each group is matched to the connected component maximising their
per-component/per-group F1; overall precision and sensitivity pool the
matched overlaps. A component may be matched by several groups.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from ._io import fmt_float
from .events import WindowSpec
from .model import TopologySnapshot
from .synth import GroundTruth


@dataclass(frozen=True)
class GroupMatch:
    component: frozenset
    overlap: int
    precision: float
    sensitivity: float
    f1: float


@dataclass(frozen=True)
class MatchingReport:
    per_group: dict
    overall_precision: float
    overall_sensitivity: float
    overall_f1: float
    exact_precision: Fraction = Fraction(0)
    exact_sensitivity: Fraction = Fraction(0)


def _f1(p, s):
    return 0.0 if p + s == 0 else 2 * p * s / (p + s)


def connected_components(snapshot_or_edges, universe: Iterable) -> list[frozenset]:
    """Undirected components over ``universe``; isolated nodes are singletons.

    Accepts a :class:`TopologySnapshot` or an iterable of node pairs.
    """
    nodes = sorted(set(universe))
    index = {n: i for i, n in enumerate(nodes)}
    if isinstance(snapshot_or_edges, TopologySnapshot):
        snap = snapshot_or_edges
        pairs = [(snap.nodes[a], snap.nodes[b]) for a, b in snap.edges.tolist()]
    else:
        pairs = list(snapshot_or_edges)
    try:
        rows = [index[a] for a, _ in pairs]
        cols = [index[b] for _, b in pairs]
    except KeyError as exc:
        raise ValueError(f"edge references node {exc.args[0]!r} outside the universe") from None
    n = len(nodes)
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = _cc(graph, directed=False)
    comps: dict[int, list] = {}
    for node, lab in zip(nodes, labels.tolist()):
        comps.setdefault(lab, []).append(node)
    return [frozenset(c) for c in comps.values()]


def pccfg_scores(component, group) -> tuple[float, float, float]:
    """``(precision, sensitivity, f1)`` of one component against one group."""
    component, group = set(component), set(group)
    if not component or not group:
        raise ValueError("component and group must be non-empty")
    overlap = len(component & group)
    precision = overlap / len(component)
    sensitivity = overlap / len(group)
    return precision, sensitivity, _f1(precision, sensitivity)


def match_and_score(components, groups: Mapping) -> MatchingReport:
    """Match every group to its best component and pool the overlaps.

    Ties on F1 go to the higher precision, then to the component whose
    sorted member list is lexicographically smallest.
    """
    components = [frozenset(c) for c in components]
    groups = {g: frozenset(m) for g, m in groups.items() if m}
    if not components or not groups:
        return MatchingReport({}, 0.0, 0.0, 0.0)
    ranked = sorted(components, key=lambda c: sorted(c))
    where = {}
    for ci, comp in enumerate(ranked):
        for node in comp:
            where[node] = ci
    per_group = {}
    hit = size = 0
    total = sum(len(m) for m in groups.values())
    for g in sorted(groups):
        members = groups[g]
        overlaps: dict[int, int] = {}
        for node in members:
            ci = where.get(node)
            if ci is not None:
                overlaps[ci] = overlaps.get(ci, 0) + 1
        best = None
        for ci, ov in overlaps.items():
            p, s, f = pccfg_scores(ranked[ci], members)
            key = (f, p, -ci)
            if best is None or key > best[0]:
                best = (key, ci, ov, p, s, f)
        if best is None:
            raise ValueError(f"group {g!r} has no member among the components' nodes")
        _, ci, ov, p, s, f = best
        per_group[g] = GroupMatch(ranked[ci], ov, p, s, f)
        hit += ov
        size += len(ranked[ci])
    exact_p = Fraction(hit, size) if size else Fraction(0)
    exact_s = Fraction(hit, total)
    # harmonic mean of hit/size and hit/total, formed exactly
    f1 = float(Fraction(2 * hit, size + total)) if hit else 0.0
    return MatchingReport(per_group, float(exact_p), float(exact_s), f1, exact_p, exact_s)


def groups_from_membership(membership: Mapping) -> dict:
    groups: dict = {}
    for node, g in membership.items():
        groups.setdefault(g, set()).add(node)
    return groups


def evaluate_at_window(snapshot: TopologySnapshot, gt: GroundTruth, w: int,
                       spec: WindowSpec) -> MatchingReport:
    """Score ``snapshot`` against the membership at the last sample of window ``w``."""
    _, hi = spec.bounds(w)
    groups = groups_from_membership(dict(zip(gt.nodes, gt.groups_at(hi - 1).tolist())))
    universe = set(gt.nodes) | set(snapshot.nodes)
    return match_and_score(connected_components(snapshot, universe), groups)


def fast_f1(edges: np.ndarray, labels: np.ndarray) -> float:
    """Overall F1 from integer edges and integer group labels over nodes ``0..N-1``.

    Same matching rule as :func:`match_and_score`, without building sets;
    used for threshold sweeps.
    """
    N = labels.size
    graph = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(N, N)) \
        if len(edges) else sp.coo_matrix((N, N))
    _, comp = _cc(graph, directed=False)
    n_comp = comp.max() + 1
    n_grp = labels.max() + 1
    table = np.zeros((n_grp, n_comp), dtype=np.int64)
    np.add.at(table, (labels, comp), 1)
    csize = table.sum(axis=0)
    gsize = table.sum(axis=1)
    hit = size = 0
    for g in range(n_grp):
        if gsize[g] == 0:
            continue
        ov = table[g]
        cand = np.flatnonzero(ov)
        prec = ov[cand] / csize[cand]
        sens = ov[cand] / gsize[g]
        f = 2 * prec * sens / (prec + sens)
        best = np.lexsort((prec, f))[-1]
        # among exact ties prefer the lexicographically smallest component
        top = cand[(f == f[best]) & (prec == prec[best])]
        if top.size > 1:
            mins = [min(np.flatnonzero(comp == c)) for c in top]
            c = top[int(np.argmin(mins))]
        else:
            c = cand[best]
        hit += table[g, c]
        size += csize[c]
    return 2 * hit / (size + labels.size) if hit else 0.0


def write_report(rows, dest) -> None:
    """CSV ``window,overall_precision,overall_sensitivity,overall_f1``."""
    dest.write("window,overall_precision,overall_sensitivity,overall_f1\n")
    for w, r in rows:
        dest.write(f"{w},{fmt_float(r.overall_precision)},{fmt_float(r.overall_sensitivity)},"
                   f"{fmt_float(r.overall_f1)}\n")


def write_group_report(rows, dest) -> None:
    dest.write("window,group,component_size,overlap,pccfg_precision,pccfg_sensitivity,pccfg_f1\n")
    for w, r in rows:
        for g, m in sorted(r.per_group.items()):
            dest.write(f"{w},{g},{len(m.component)},{m.overlap},{fmt_float(m.precision)},"
                       f"{fmt_float(m.sensitivity)},{fmt_float(m.f1)}\n")
