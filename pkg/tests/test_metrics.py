import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from topdual import metrics
from topdual.exceptions import DegenerateClass, ShapeMismatch, TargetUnreachable
from topdual.metrics import ScoredLabels


def sl(pos, neg):
    return ScoredLabels(np.r_[pos, neg], np.r_[np.ones(len(pos)), np.zeros(len(neg))])


def test_precision_recall_examples():
    s = sl([2, 3], [1, 4])
    p, r = metrics.precision_recall_at(s, 1.5)
    assert (p, r) == (2 / 3, 1.0)
    assert metrics.precision_recall_at(s, -10) == (0.5, 1.0)
    p, r = metrics.precision_recall_at(s, 10)
    assert np.isnan(p) and r == 0.0
    # the >= convention: a score equal to t counts as predicted
    assert metrics.precision_recall_at(s, 3) == (0.5, 0.5)


def test_pr_curve_examples():
    c = metrics.pr_curve(sl([5, 6], [1, 2, 3]))
    assert (1.0, 1.0) in c.points()
    c = metrics.pr_curve(sl([1, 2], [5, 6, 7]))
    assert c.precision[-1] == pytest.approx(2 / 5) and c.recall[-1] == 1.0
    assert np.all(np.diff(c.recall) >= 0)


def test_ties_flip_together():
    c = metrics.pr_curve(sl([1, 1, 0], [1, 0]))
    assert c.thresholds.tolist() == [1.0, 0.0]
    assert c.points() == [(2 / 3, 2 / 3), (1.0, 3 / 5)]


def test_precision_at_recall_examples():
    assert metrics.precision_at_recall(sl([5, 6], [1, 2]), 1.0) == 1.0
    assert metrics.precision_at_recall(sl([1, 3], [2, -1, -2]), 0.5) == 1.0
    with pytest.raises(ValueError):
        metrics.precision_at_recall(sl([1], [0]), 0.0)
    with pytest.raises(TargetUnreachable):
        metrics.precision_at_recall(ScoredLabels([1.0, 2.0], [0, 0]), 0.5)
    levels = metrics.precision_at_recalls(sl([5, 6], [1, 2]))
    assert list(levels) == [0.05, 0.1, 0.2, 0.4, 0.6, 0.8]


def test_validation():
    with pytest.raises(ShapeMismatch):
        ScoredLabels([1.0, 2.0], [1])
    with pytest.raises(DegenerateClass):
        metrics.pr_curve(ScoredLabels([1.0, 2.0], [1, 1]))


def _instances():
    return st.integers(2, 60).flatmap(lambda n: st.tuples(
        st.lists(st.integers(-5, 5), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n)))


@settings(max_examples=300, deadline=None)
@given(_instances())
def test_curve_matches_brute_force(inst):
    scores, labels = inst
    if all(labels) or not any(labels):
        return
    s = ScoredLabels(np.array(scores, dtype=float), labels)
    c = metrics.pr_curve(s)
    for r, p, t in zip(c.recall, c.precision, c.thresholds):
        assert (p, r) == O.brute_pr(scores, labels, t)
    assert sorted(set(c.thresholds.tolist())) == sorted(set(float(x) for x in scores))
    # recall and predicted counts fall as the threshold rises
    ts = np.sort(np.unique(scores))
    counts = [np.sum(np.array(scores) >= t) for t in ts]
    assert np.all(np.diff(counts) <= 0)


@settings(max_examples=200, deadline=None)
@given(_instances())
def test_envelope_monotone_in_target(inst):
    scores, labels = inst
    if all(labels) or not any(labels):
        return
    s = ScoredLabels(np.array(scores, dtype=float), labels)
    c = metrics.pr_curve(s)
    env = metrics.envelope(c)
    assert np.all(np.diff(env) <= 0)
    # P@Rec read on the envelope is non-increasing over the recorded recalls
    vals = [env[np.flatnonzero(c.recall >= r - 1e-12)[0]] for r in c.recall]
    assert np.all(np.diff(vals) <= 0)


def test_exports():
    s = sl([5, 6, 2], [1, 2, 3])
    buf = io.StringIO()
    metrics.pr_curve(s).to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "recall,precision,threshold"
    d = metrics.score_density(s, bin_width=1.0)
    assert d.count_pos.sum() == 3 and d.count_neg.sum() == 3
    buf = io.StringIO()
    d.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "score,count_pos,count_neg" and len(lines) == len(d.count_pos) + 1
    with pytest.raises(ValueError):
        metrics.score_density(s, bin_width=0)
