import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES
from funconn.evaluation import (connected_components, evaluate_at_window, fast_f1,
                                groups_from_membership, match_and_score, pccfg_scores,
                                write_group_report, write_report)
from funconn.events import WindowSpec
from funconn.model import TopologySnapshot
from funconn.synth import GroundTruth
import oracles


def worked_example():
    gt = GroundTruth.read(FIXTURES / "worked_groundtruth.csv")
    edges = []
    for line in (FIXTURES / "worked_topology.csv").read_text().splitlines()[2:]:
        edges.append(tuple(line.split(",")))
    groups = groups_from_membership(dict(zip(gt.nodes, gt.groups_at(0).tolist())))
    return gt, edges, groups


def test_components_examples():
    assert sorted(map(sorted, connected_components([], "abc"))) == [["a"], ["b"], ["c"]]
    assert connected_components([("a", "b"), ("b", "c")], "abc") == [frozenset("abc")]
    with pytest.raises(ValueError):
        connected_components([("a", "z")], "abc")


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 20), data=st.data())
def test_components_match_transitive_closure(n, data):
    nodes = [f"x{i}" for i in range(n)]
    pairs = data.draw(st.lists(st.tuples(st.sampled_from(nodes), st.sampled_from(nodes)),
                               max_size=25))
    pairs = [(a, b) for a, b in pairs if a != b]
    got = sorted(connected_components(pairs, nodes), key=sorted)
    assert got == oracles.components(pairs, nodes)


def test_pccfg_examples():
    assert pccfg_scores({1, 2}, {1, 2}) == (1.0, 1.0, 1.0)
    assert pccfg_scores({1}, {2}) == (0.0, 0.0, 0.0)
    p, s, f = pccfg_scores({1, 2, 3, 4}, {1, 2})
    assert (p, s) == (0.5, 1.0) and f == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        pccfg_scores(set(), {1})


def test_worked_example_exact():
    gt, edges, groups = worked_example()
    comps = connected_components(edges, gt.nodes)
    assert sorted(len(c) for c in comps) == [6, 8, 16]
    rep = match_and_score(comps, groups)
    assert rep.exact_precision == Fraction(18, 40)
    assert rep.exact_sensitivity == Fraction(18, 30)
    assert (rep.overall_precision, rep.overall_sensitivity) == (0.45, 0.6)
    sizes = {g: len(m.component) for g, m in rep.per_group.items()}
    assert sizes == {0: 16, 1: 16, 2: 8}


def test_perfect_and_fully_connected():
    labels = np.repeat(np.arange(10), 10)
    nodes = [f"n{i}" for i in range(100)]
    groups = groups_from_membership(dict(zip(nodes, labels.tolist())))
    perfect = [frozenset(m) for m in groups.values()]
    assert match_and_score(perfect, groups).overall_f1 == 1.0
    full = match_and_score([frozenset(nodes)], groups)
    assert full.overall_f1 == pytest.approx(2 * 0.1 / 1.1, abs=1e-12)


def test_tie_breaks_prefer_precision_then_smallest_component():
    groups = {0: {"a", "b"}}
    # {a} and {b} tie on F1 and precision: the smaller member list wins
    comps = [frozenset({"b"}), frozenset({"a"}), frozenset({"x"})]
    rep = match_and_score(comps, groups)
    assert rep.per_group[0].component == frozenset({"a"})
    # same F1, different precision: {a} (p=1, s=1/3) vs {b, c, x, y, z} (p=2/5, s=2/3)
    groups = {0: {"a", "b", "c"}}
    comps = [frozenset("bcxyz"), frozenset("a")]
    f_small = pccfg_scores(comps[1], groups[0])[2]
    f_big = pccfg_scores(comps[0], groups[0])[2]
    assert f_small == pytest.approx(f_big)
    assert match_and_score(comps, groups).per_group[0].component == frozenset("a")


def test_missing_group_members_raise():
    with pytest.raises(ValueError):
        match_and_score([frozenset("ab")], {0: {"c"}})


def _random_partition(draw_labels, nodes):
    return groups_from_membership(dict(zip(nodes, draw_labels)))


@settings(max_examples=60, deadline=None)
@given(data=st.data(), n=st.integers(2, 18))
def test_matching_matches_oracle_and_fast_path(data, n):
    nodes = [f"x{i:02d}" for i in range(n)]
    labels = data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n))
    labels = np.unique(labels, return_inverse=True)[1]
    pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                               max_size=30))
    pairs = [(a, b) for a, b in pairs if a != b]
    groups = groups_from_membership(dict(zip(nodes, labels.tolist())))
    comps = connected_components([(nodes[a], nodes[b]) for a, b in pairs], nodes)
    rep = match_and_score(comps, groups)
    p, s = oracles.match(comps, groups)
    assert (rep.exact_precision, rep.exact_sensitivity) == (p, s)
    assert 0 <= rep.overall_precision <= 1 and 0 <= rep.overall_sensitivity <= 1
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    assert fast_f1(edges, labels) == pytest.approx(rep.overall_f1, abs=1e-12)
    # relabelling every node consistently changes nothing
    perm = data.draw(st.permutations(range(n)))
    renamed = {nodes[i]: f"y{perm[i]:02d}" for i in range(n)}
    comps2 = [frozenset(renamed[x] for x in c) for c in comps]
    groups2 = {g: {renamed[x] for x in m} for g, m in groups.items()}
    rep2 = match_and_score(comps2, groups2)
    assert (rep2.exact_precision, rep2.exact_sensitivity) == (p, s)


@settings(max_examples=60, deadline=None)
@given(data=st.data(), n=st.integers(2, 15))
def test_adding_within_group_edge_never_lowers_sensitivity(data, n):
    nodes = list(range(n))
    labels = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    groups = groups_from_membership(dict(zip(nodes, labels)))
    pairs = [(a, b) for a, b in data.draw(st.lists(st.tuples(st.sampled_from(nodes),
                                                              st.sampled_from(nodes)),
                                                    max_size=15)) if a != b]
    same = [(a, b) for a in nodes for b in nodes if a < b and labels[a] == labels[b]]
    if not same:
        return
    extra = data.draw(st.sampled_from(same))
    before = match_and_score(connected_components(pairs, nodes), groups)
    after = match_and_score(connected_components(pairs + [extra], nodes), groups)
    assert after.exact_sensitivity >= before.exact_sensitivity


def test_evaluate_at_window_uses_membership_at_window_end():
    text = ("start_sample,end_sample,node_id,group_id\n"
            "0,150,a,0\n0,150,b,0\n0,150,c,1\n150,300,a,0\n150,300,b,1\n150,300,c,1\n")
    gt = GroundTruth.read(io.StringIO(text))
    snap = TopologySnapshot(1, gt.nodes, np.array([[1, 2]]), 0.5)
    spec = WindowSpec(100, 3)
    assert evaluate_at_window(snap, gt, 1, spec).overall_f1 == 1.0
    assert evaluate_at_window(snap, gt, 0, spec).overall_f1 < 1.0


def test_report_writers():
    gt, edges, groups = worked_example()
    rep = match_and_score(connected_components(edges, gt.nodes), groups)
    a, b = io.StringIO(), io.StringIO()
    write_report([(0, rep)], a)
    write_group_report([(0, rep)], b)
    assert a.getvalue().splitlines() == [
        "window,overall_precision,overall_sensitivity,overall_f1",
        "0,0.45000000000000001,0.59999999999999998,0.51428571428571423"]
    assert b.getvalue().splitlines()[0].startswith("window,group,component_size")
    assert len(b.getvalue().splitlines()) == 4
