import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auc_pairwise, auc_pairwise_fast
from vseg.errors import ShapeError, UndefinedMetricError
from vseg.metrics import (ConfusionCounts, auc, confusion, mean_report, report, roc_curve,
                          summary_stats, thin_roc, write_metrics_csv, write_roc_csv)


def test_confusion_counts_and_fov():
    pred = np.array([[1, 1, 0], [0, 0, 1], [1, 0, 0]])
    truth = np.array([[1, 0, 0], [1, 0, 1], [1, 1, 0]])
    assert confusion(pred, truth) == ConfusionCounts(tp=3, fp=1, tn=3, fn=2)
    fov = np.array([[1, 1, 1], [0, 1, 1], [1, 0, 1]])
    # excluded: (1,0) a FN and (2,1) a FN
    assert confusion(pred, truth, fov) == ConfusionCounts(tp=3, fp=1, tn=3, fn=0)
    with pytest.raises(ShapeError):
        confusion(pred, truth[:2])


def test_summary_stats_example():
    s = summary_stats(ConfusionCounts(tp=3, fp=1, tn=5, fn=1))
    assert s == {"precision": 0.75, "sensitivity": 0.75, "specificity": 5 / 6, "accuracy": 0.8}


def test_undefined_ratios_are_none():
    s = summary_stats(ConfusionCounts(tp=0, fp=0, tn=4, fn=0))
    assert s["precision"] is None and s["sensitivity"] is None
    assert s["specificity"] == 1.0 and s["accuracy"] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_complement_symmetry(seed):
    r = np.random.default_rng(seed)
    pred = r.random(200) < 0.5
    truth = r.random(200) < 0.3
    a = summary_stats(confusion(pred, truth))
    b = summary_stats(confusion(~pred, ~truth))
    assert a["accuracy"] == b["accuracy"]
    assert a["sensitivity"] == b["specificity"] and a["specificity"] == b["sensitivity"]


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75
    assert auc([0.1, 0.9], [1, 0]) == 0.0


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def _random_case(r, n):
    labels = r.random(n) < r.uniform(0.05, 0.95)
    labels[0], labels[1] = True, False
    scores = r.random(n)
    if r.random() < 0.5:
        scores = np.round(scores, 1)  # heavy ties
    return scores, labels


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
def test_auc_matches_pairwise_count(seed, n):
    scores, labels = _random_case(np.random.default_rng(seed), n)
    assert abs(auc(scores, labels) - auc_pairwise(scores, labels)) < 1e-9


def test_auc_matches_fast_pairwise_up_to_1e4_points():
    r = np.random.default_rng(2)
    for n in (100, 1000, 10_000):
        scores, labels = _random_case(r, n)
        assert abs(auc(scores, labels) - auc_pairwise_fast(scores, labels)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_monotone_transform_invariance(seed):
    scores, labels = _random_case(np.random.default_rng(seed), 300)
    base = auc(scores, labels)
    assert auc(scores ** 3, labels) == base
    assert auc(2 * scores + 1, labels) == base


def test_roc_endpoints():
    t, fpr, tpr = roc_curve([0.3, 0.3, 0.9, 0.1], [1, 0, 1, 0])
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert np.isinf(t[0]) and np.all(np.diff(t[1:]) < 0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_report_restricted_to_fov():
    prob = np.array([[0.9, 0.2], [0.8, 0.7]])
    truth = np.array([[1, 0], [0, 1]])
    fov = np.array([[1, 1], [0, 1]])
    r = report("x", prob, truth, fov)
    assert r.pixels == 3 and r.counts == ConfusionCounts(2, 0, 1, 0)
    assert r.auc == 1.0


def test_mean_report():
    truth = np.array([1, 0, 1, 0])
    a = report("a", np.array([0.9, 0.1, 0.8, 0.2]), truth, np.ones(4))
    b = report("b", np.array([0.1, 0.9, 0.8, 0.2]), truth, np.ones(4))
    m = mean_report("mean", [a, b])
    assert m.accuracy == (a.accuracy + b.accuracy) / 2
    assert m.auc == (a.auc + b.auc) / 2
    assert m.counts == a.counts + b.counts


def test_csv_outputs(tmp_path):
    r = report("img", np.array([0.9, 0.1, 0.6]), np.array([1, 0, 0]), np.ones(3), keep_roc=True)
    u = report("ones", np.array([0.9, 0.8]), np.array([1, 1]), np.ones(2))
    write_metrics_csv(tmp_path / "m.csv", [r, u])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("image,pixels,tp,fp,tn,fn")
    assert len(lines) == 3 and "undefined" in lines[2]
    write_roc_csv(tmp_path / "roc.csv", r.roc)
    rows = (tmp_path / "roc.csv").read_text().splitlines()
    assert rows[0] == "threshold,fpr,tpr" and rows[1] == "inf,0.0,0.0" and rows[-1].endswith("1.0,1.0")


def test_thin_roc_keeps_ends():
    r = np.random.default_rng(0)
    roc = roc_curve(r.random(5000), r.random(5000) < 0.3)
    t, f, p = thin_roc(roc, 11)
    assert len(f) == 11 and f[0] == 0 and p[-1] == 1.0
    assert thin_roc(roc, 0) is roc
