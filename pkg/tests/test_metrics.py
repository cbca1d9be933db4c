import numpy as np
import pytest

from dropnet.metrics import FoldMetrics, compute_metrics, f1_score, roc_auc

from oracles import CONFUSION_FIXTURES as FIXTURES, pairwise_auc


def test_auc_matches_pairwise_counting():
    rng = np.random.default_rng(2718)
    done = 0
    while done < 1000:
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        # coarse grids force plenty of ties
        levels = int(rng.choice([2, 5, 20, 1000]))
        scores = rng.integers(0, levels, size=n) / levels
        assert roc_auc(scores, labels) == float(pairwise_auc(scores.tolist(), labels.tolist()))
        done += 1


def test_auc_single_class_is_undefined():
    assert roc_auc([0.1, 0.9], [1, 1]) is None
    m = compute_metrics(np.array([0.2, 0.7]), np.array([0, 0]))
    assert m.roc_auc is None
    assert m.accuracy == 0.5


@pytest.mark.parametrize("confusion,f1,bacc", FIXTURES)
def test_confusion_fixture(confusion, f1, bacc):
    tp, fp, tn, fn = confusion
    labels = np.array([1] * tp + [0] * fp + [0] * tn + [1] * fn)
    scores = np.array([0.9] * tp + [0.8] * fp + [0.1] * tn + [0.3] * fn)
    m = compute_metrics(scores, labels)
    assert (m.tp, m.fp, m.tn, m.fn, m.n_test) == (tp, fp, tn, fn, tp + fp + tn + fn)
    assert m.f1 == pytest.approx(float(f1), abs=1e-15)
    assert m.balanced_accuracy == pytest.approx(float(bacc), abs=1e-15)
    assert f1_score(scores >= 0.5, labels) == pytest.approx(float(f1), abs=1e-15)
    assert m.accuracy == pytest.approx((tp + tn) / (tp + fp + tn + fn), abs=1e-15)


def test_fixture_count():
    assert len(FIXTURES) == 20


def test_perfect_scores():
    y = np.array([0, 1, 1, 0, 1])
    m = compute_metrics(y.astype(float), y)
    assert (m.accuracy, m.precision, m.recall, m.f1, m.roc_auc, m.balanced_accuracy) == (1, 1, 1, 1, 1, 1)


def test_all_ties():
    y = np.array([0, 1] * 10)
    m = compute_metrics(np.full(20, 0.5), y)
    assert m.roc_auc == 0.5
    assert m.balanced_accuracy == 0.5


def test_threshold_is_inclusive():
    m = compute_metrics(np.array([0.5, 0.49]), np.array([1, 0]))
    assert (m.tp, m.tn) == (1, 1)


def test_metric_ranges_and_counts(rng):
    for _ in range(200):
        n = int(rng.integers(1, 50))
        y = rng.integers(0, 2, size=n)
        m = compute_metrics(rng.random(n), y)
        assert m.tp + m.fp + m.tn + m.fn == m.n_test == n
        for v in (m.accuracy, m.precision, m.recall, m.f1, m.balanced_accuracy):
            assert 0.0 <= v <= 1.0
        assert m.roc_auc is None or 0.0 <= m.roc_auc <= 1.0


def test_validation():
    with pytest.raises(ValueError):
        compute_metrics(np.array([1.2]), np.array([1]))
    with pytest.raises(ValueError):
        compute_metrics(np.array([0.2, 0.1]), np.array([1]))
    with pytest.raises(ValueError):
        compute_metrics(np.array([0.2]), np.array([2]))
    with pytest.raises(ValueError):
        compute_metrics(np.array([]), np.array([]))


def test_to_dict_round_trip():
    m = compute_metrics(np.array([0.9, 0.1, 0.6]), np.array([1, 0, 0]))
    assert FoldMetrics(**m.to_dict()) == m
