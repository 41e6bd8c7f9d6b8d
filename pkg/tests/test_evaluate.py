import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commdiar.core import DataError, MeetingScript, ParameterError, Partition
from commdiar.evaluate import EvalReport, cluster_report, count_accuracy, der, pairwise_f_score, pooled_der
from oracles import der_bruteforce, pairwise_counts


def test_count_accuracy():
    assert count_accuracy([2, 2, 2], [2, 2, 2]) == 1.0
    assert count_accuracy([2, 3, 4], [2, 2, 2]) == pytest.approx(1 / 3)
    with pytest.raises(ParameterError):
        count_accuracy([1], [1, 2])


def test_f_identity():
    assert pairwise_f_score(Partition.from_labels([0, 1, 1, 2]), [5, 3, 3, 9]).f_score == 1.0


def test_f_all_in_one():
    p = pairwise_f_score([0, 0, 0, 0], [0, 0, 1, 1])
    assert p.precision == pytest.approx(1 / 3) and p.recall == 1.0 and p.f_score == pytest.approx(0.5)


def test_f_all_singletons():
    p = pairwise_f_score([0, 1, 2, 3], [0, 0, 1, 1])
    assert p.f_score == 0.0 and p.precision == 1.0 and p.recall == 0.0


def test_f_both_singletons():
    assert pairwise_f_score([0, 1, 2], [0, 1, 2]) == (1.0, 1.0, 1.0)


def test_f_errors():
    with pytest.raises(ParameterError):
        pairwise_f_score([0, 1], [0, 1, 2])
    with pytest.raises(ParameterError):
        pairwise_f_score([0], [0])


labels = st.lists(st.integers(0, 4), min_size=2, max_size=25)


@given(st.data())
def test_f_matches_pair_enumeration(data):
    pred = data.draw(labels)
    truth = data.draw(st.lists(st.integers(0, 4), min_size=len(pred), max_size=len(pred)))
    tp, fp, fn = pairwise_counts(pred, truth)
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    got = pairwise_f_score(pred, truth)
    assert got.precision == pytest.approx(p) and got.recall == pytest.approx(r) and got.f_score == pytest.approx(f)
    assert 0.0 <= got.f_score <= 1.0


@given(labels, st.permutations(range(5)))
def test_f_relabel_invariant(pred, perm):
    truth = list(reversed(pred))
    relabeled = [perm[c] for c in pred]
    assert pairwise_f_score(pred, truth) == pytest.approx(pairwise_f_score(relabeled, truth))


def test_der_identity():
    ref = MeetingScript(["A", "B"], [("A", 0, 10), ("B", 8, 6)], 20)
    assert der(ref, ref.turns).der == 0.0


def test_der_empty_hypothesis():
    res = der([("A", 0.0, 10.0)], [])
    assert res.der == 1.0 and res.miss == 1.0 and res.confusion == 0.0


def test_der_hand_confusion():
    res = der([("A", 0.0, 10.0), ("B", 10.0, 10.0)], [("h", 0.0, 20.0)])
    assert res.der == 0.5 and res.confusion == 0.5 and res.miss == 0.0 and res.false_alarm == 0.0


def test_der_overlap_counts_miss():
    res = der([("A", 0.0, 10.0), ("B", 0.0, 10.0)], [("h", 0.0, 10.0)])
    assert res.miss == pytest.approx(0.5) and res.confusion == 0.0


def test_der_false_alarm():
    res = der([("A", 0.0, 10.0)], [("h", 0.0, 15.0)])
    assert res.false_alarm == pytest.approx(0.5) and res.der == pytest.approx(0.5)


def test_der_no_reference_speech():
    with pytest.raises(DataError):
        der([], [("h", 0.0, 1.0)], duration=5.0)


def random_timeline(rng, speakers, n_turns, horizon):
    turns = []
    for _ in range(n_turns):
        onset = round(float(rng.uniform(0, horizon - 1)), 1)
        dur = round(float(rng.uniform(0.1, horizon - onset)), 1)
        if dur > 0:
            turns.append((str(rng.choice(speakers)), onset, dur))
    return turns


def test_der_matches_bruteforce_mapping():
    rng = np.random.default_rng(0)
    for _ in range(25):
        ref = random_timeline(rng, ["A", "B", "C"], 5, 6.0)
        hyp = random_timeline(rng, ["x", "y", "z", "w"], 5, 6.0)
        if not ref:
            continue
        got = der(ref, hyp, step=0.1, duration=6.0).der
        assert got == pytest.approx(der_bruteforce(ref, hyp, 0.1, 60), abs=1e-12)


@given(st.integers(0, 10_000))
def test_der_bounds_and_decomposition(seed):
    rng = np.random.default_rng(seed)
    ref = random_timeline(rng, ["A", "B", "C"], 6, 10.0) or [("A", 0.0, 1.0)]
    hyp = random_timeline(rng, ["x", "y"], 6, 10.0)
    res = der(ref, hyp)
    assert min(res.miss, res.false_alarm, res.confusion) >= 0
    assert res.der == pytest.approx(res.miss + res.false_alarm + res.confusion, abs=1e-12)


def test_pooled_der_weights_by_time():
    a = der([("A", 0.0, 10.0)], [])
    b = der([("A", 0.0, 30.0)], [("h", 0.0, 30.0)])
    assert pooled_der([a, b]).der == pytest.approx(10 / 40)


def test_report_json_fields():
    rep = EvalReport(der=0.3, miss=0.1, false_alarm=0.1, confusion=0.1, trials=2)
    d = json.loads(rep.to_json())
    assert list(d) == ["count_accuracy", "precision", "recall", "f_score", "der", "miss", "false_alarm",
                       "confusion", "trials"]
    assert d["f_score"] is None
    assert EvalReport.from_dict(d).der == 0.3
    with pytest.raises(DataError):
        EvalReport(der=0.5, miss=0.1, false_alarm=0.1, confusion=0.1)


def test_cluster_report():
    rep = cluster_report([[0, 0, 1, 1], [0, 0, 0, 0]], [[0, 0, 1, 1], [0, 0, 1, 1]])
    assert rep.count_accuracy == 0.5 and rep.f_score == pytest.approx(0.75)
    assert math.isnan(rep.der)
