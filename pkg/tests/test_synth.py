import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import skew

from funconn.events import write_event_log
from funconn.synth import (GroundTruth, SyntheticConfig, generate, membership_at, node_names,
                           reference_config)


def small(**kw):
    base = dict(N=20, n_fg=4, n_casc=30, per_dev=0.5, d_max=20, T=20_000, n_step=5,
                n_change=1, seed=3)
    base.update(kw)
    return SyntheticConfig(**base)


def test_reference_config():
    c = reference_config()
    assert (c.N, c.n_fg, c.n_casc, c.per_dev, c.d_max, c.n_step) == (100, 10, 200, 0.5, 60, 50)
    assert c.T / 86_400 == 10
    assert reference_config(n_change=10, seed=4).n_change == 10


def test_reference_scenario_emits_about_100_events_per_node():
    log, _ = generate(reference_config())
    assert 90 <= log.n_events / len(log) <= 110


def test_full_participation_touches_every_member():
    c = small(per_dev=1.0, n_step=0, n_change=0, T=10**7, n_casc=10)
    log, gt, casc = generate(c, with_cascades=True)
    # sparse onsets: no collisions, so every cascade hits all five members
    assert log.n_events == c.n_fg * c.n_casc * (c.N // c.n_fg)
    groups = gt.groups_at(0)
    for onset, g in casc.tolist():
        for i in np.flatnonzero(groups == g):
            ts = log[gt.nodes[i]].times
            assert np.any((ts >= onset) & (ts <= onset + c.d_max))


def test_no_steps_means_one_interval():
    log, gt = generate(small(n_step=0))
    assert list(gt.starts) == [0] and gt.change_times.size == 0
    assert membership_at(gt, 0) == membership_at(gt, gt.T - 1)


def test_change_schedule_and_churn_size():
    c = small(n_step=7, n_change=2)
    _, gt = generate(c)
    assert gt.change_times.tolist() == [(i + 1) * c.T // 8 for i in range(7)]
    assert membership_at(gt, 0) == dict(zip(node_names(20), np.repeat(np.arange(4), 5).tolist()))
    for t in gt.change_times.tolist():
        before, after = gt.groups_at(t - 1), gt.groups_at(t)
        assert np.count_nonzero(before != after) <= c.n_change
        assert np.all(np.bincount(after, minlength=c.n_fg) >= 1)
    with pytest.raises(IndexError):
        membership_at(gt, c.T)


def test_heavy_churn_never_empties_a_group():
    c = SyntheticConfig(N=6, n_fg=3, n_casc=5, T=5000, d_max=5, n_step=40, n_change=5, seed=1)
    _, gt = generate(c)
    assert np.all([np.bincount(m, minlength=3).min() >= 1 for m in gt.memberships])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), n_change=st.integers(0, 3), per_dev=st.floats(0.2, 1.0))
def test_events_lie_within_a_cascade_of_their_group(seed, n_change, per_dev):
    c = small(seed=seed, n_change=n_change, per_dev=per_dev)
    log, gt, casc = generate(c, with_cascades=True)
    total = 0
    for i, node in enumerate(gt.nodes):
        for t in log[node].times.tolist():
            ok = any(0 <= t - on <= c.d_max and gt.groups_at(on)[i] == g
                     for on, g in casc.tolist())
            assert ok, (node, t)
            total += 1
    assert total == log.n_events
    assert log.n_events <= c.n_fg * c.n_casc * int(np.bincount(gt.memberships.ravel()).max())


def test_preferential_attachment_skews_activity():
    # a cascade takes a small share of its group; at per_dev=0.5 half of a
    # 10-node group is drawn without replacement, the favoured nodes saturate
    # near n_casc events and the count distribution skews left instead
    base = dict(N=100, n_fg=10, n_casc=200, per_dev=0.1, T=864_000, n_step=0)
    pref, unif = [], []
    for seed in range(20):
        c = SyntheticConfig(seed=seed, **base)
        pref.append(skew([len(s) for s in generate(c)[0].series.values()]))
        unif.append(skew([len(s) for s in generate(c, preferential=False)[0].series.values()]))
    assert np.mean(pref) > max(np.mean(unif), 0)


def test_same_seed_same_bytes():
    def dump(c):
        log, gt = generate(c)
        a, b = io.StringIO(), io.StringIO()
        write_event_log(log, a)
        gt.write(b)
        return a.getvalue(), b.getvalue()
    assert dump(small()) == dump(small())
    assert dump(small()) != dump(small(seed=4))


def test_ground_truth_round_trip():
    _, gt = generate(small(n_change=3))
    buf = io.StringIO()
    gt.write(buf)
    assert GroundTruth.read(io.StringIO(buf.getvalue())) == gt
    for start, end, m in gt.intervals:
        assert len(m) == 20
    bad = "start_sample,end_sample,node_id,group_id\n0,5,a,0\n6,10,a,0\n"
    with pytest.raises(ValueError, match="tile"):
        GroundTruth.read(io.StringIO(bad))
    bad = "start_sample,end_sample,node_id,group_id\n0,5,a,0\n0,5,b,1\n5,10,a,0\n"
    with pytest.raises(ValueError, match="total"):
        GroundTruth.read(io.StringIO(bad))


@pytest.mark.parametrize("kw", [dict(N=10, n_fg=3), dict(N=2, n_fg=3), dict(per_dev=0.0),
                                dict(per_dev=1.5), dict(per_dev=0.05), dict(d_max=-1),
                                dict(n_step=-1), dict(n_change=-2), dict(T=10, d_max=20),
                                dict(N=5, n_fg=1, n_change=1)])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_config_file_round_trip(tmp_path):
    c = small(per_dev=0.3)
    c.write(tmp_path / "c.txt")
    assert SyntheticConfig.read(tmp_path / "c.txt") == c
    with pytest.raises(KeyError, match="n_groups"):
        SyntheticConfig.from_mapping({"n_groups": 3})
    with pytest.raises(ValueError, match="N"):
        SyntheticConfig.from_mapping({"N": "ten"})
