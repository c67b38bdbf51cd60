import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatiospatial.metrics.confusion import (
    ClassMetrics,
    ConfusionMatrix,
    MetricsReport,
    aggregate_f1,
    per_class_metrics,
    summarize_reports,
)
from spatiospatial.utils.errors import ContractError

pairs = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60)


def _brute_force(num_classes, true, pred):
    out = []
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        tn = len(true) - tp - fp - fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out.append((prec, rec, spec, f1))
    return out


def test_two_class_example():
    report = per_class_metrics(ConfusionMatrix(2, [[3, 1], [2, 4]]))
    c0, c1 = report.per_class
    assert np.isclose(c0.precision, 0.6) and np.isclose(c0.recall, 0.75)
    assert np.isclose(c0.specificity, 4 / 6) and np.isclose(c0.f1, 2 / 3)
    assert np.isclose(c1.precision, 0.8) and np.isclose(c1.recall, 4 / 6)
    assert np.isclose(report.accuracy, 0.7)
    assert (c0.support, c1.support) == (4, 6)


def test_diagonal_matrix_is_perfect():
    report = per_class_metrics(ConfusionMatrix(3, np.diag([5, 2, 7])))
    for m in report.per_class:
        assert (m.precision, m.recall, m.specificity, m.f1) == (1.0, 1.0, 1.0, 1.0)
    assert report.accuracy == report.macro_f1 == report.weighted_f1 == 1.0
    assert report.zero_division == []


def test_matches_brute_force_counts():
    rng = np.random.default_rng(0)
    true, pred = rng.integers(0, 4, 1000), rng.integers(0, 4, 1000)
    report = per_class_metrics(ConfusionMatrix.from_pairs(4, true, pred))
    for m, expected in zip(report.per_class, _brute_force(4, true, pred)):
        assert np.allclose((m.precision, m.recall, m.specificity, m.f1), expected)
    assert np.isclose(report.accuracy, np.mean(true == pred))


@given(pairs)
def test_metrics_against_brute_force(data):
    true, pred = zip(*data)
    report = per_class_metrics(ConfusionMatrix.from_pairs(4, true, pred))
    for m, expected in zip(report.per_class, _brute_force(4, true, pred)):
        assert np.allclose((m.precision, m.recall, m.specificity, m.f1), expected)
        assert all(0.0 <= v <= 1.0 for v in expected)


@given(pairs, st.randoms(use_true_random=False))
def test_counts_ignore_update_order(data, random):
    shuffled = list(data)
    random.shuffle(shuffled)
    a = ConfusionMatrix.from_pairs(4, *zip(*data))
    b = ConfusionMatrix.from_pairs(4, *zip(*shuffled))
    assert a == b
    assert a.total == len(data)


@given(pairs)
def test_micro_recall_equals_accuracy(data):
    true, pred = zip(*data)
    cm = ConfusionMatrix.from_pairs(4, true, pred)
    report = per_class_metrics(cm)
    micro_recall = sum(np.diag(cm.counts)) / sum(m.support for m in report.per_class)
    assert np.isclose(micro_recall, report.accuracy)


@given(pairs, st.permutations(range(4)))
def test_relabelling_permutes_per_class_metrics(data, perm):
    true, pred = zip(*data)
    base = per_class_metrics(ConfusionMatrix.from_pairs(4, true, pred))
    moved = per_class_metrics(ConfusionMatrix.from_pairs(4, [perm[t] for t in true], [perm[p] for p in pred]))
    for c in range(4):
        assert moved.per_class[perm[c]] == base.per_class[c]
    assert np.isclose(moved.macro_f1, base.macro_f1)
    assert np.isclose(moved.weighted_f1, base.weighted_f1)


def test_merge_equals_single_stream():
    rng = np.random.default_rng(1)
    true, pred = rng.integers(0, 3, 200), rng.integers(0, 3, 200)
    whole = ConfusionMatrix.from_pairs(3, true, pred)
    left = ConfusionMatrix.from_pairs(3, true[:70], pred[:70])
    right = ConfusionMatrix.from_pairs(3, true[70:], pred[70:])
    assert left.merge(right) == whole
    with pytest.raises(ContractError):
        whole.merge(ConfusionMatrix(2))


def test_update_rejects_out_of_range():
    cm = ConfusionMatrix(3)
    with pytest.raises(ContractError):
        cm.update(3, 0)
    with pytest.raises(ContractError):
        cm.update(0, -1)
    with pytest.raises(ContractError):
        ConfusionMatrix(2, [[1, -1], [0, 0]])


def test_aggregate_example():
    report = MetricsReport(
        per_class=[ClassMetrics(1, 1, 1, 1.0, 10), ClassMetrics(0.5, 0.5, 1, 0.5, 10),
                   ClassMetrics(1, 1, 1, 1.0, 80)],
        accuracy=0.0, macro_f1=0.0, weighted_f1=0.0)
    macro, weighted = aggregate_f1(report)
    assert np.isclose(macro, 2.5 / 3)
    assert np.isclose(weighted, 0.95)


def test_zero_division_is_flagged():
    # class 2 is never true nor predicted
    report = per_class_metrics(ConfusionMatrix(3, [[2, 1, 0], [0, 3, 0], [0, 0, 0]]))
    c2 = report.per_class[2]
    assert (c2.precision, c2.recall, c2.f1, c2.support) == (0.0, 0.0, 0.0, 0)
    assert c2.specificity == 1.0
    assert {"precision[2]", "recall[2]", "f1[2]"} <= set(report.zero_division)
    assert "precision[0]" not in report.zero_division


def test_empty_matrix_has_no_metrics():
    with pytest.raises(ContractError):
        per_class_metrics(ConfusionMatrix(3))


def test_normalized_rows():
    cm = ConfusionMatrix(3, [[2, 2, 0], [0, 0, 0], [1, 0, 3]])
    assert np.allclose(cm.normalized(), [[0.5, 0.5, 0.0], [0.0, 0.0, 0.0], [0.25, 0.0, 0.75]])


def test_report_outputs(tmp_path):
    report = per_class_metrics(ConfusionMatrix(2, [[3, 1], [2, 4]]), ["HGG", "LGG"])
    assert report.confusion.to_csv(report.class_names) == "true\\predicted,HGG,LGG\nHGG,3,1\nLGG,2,4\n"
    table = report.table()
    assert table.splitlines()[1].startswith("HGG")
    assert "accuracy 0.7000" in table
    report.save(tmp_path, "eval")
    assert (tmp_path / "eval.json").is_file()
    assert (tmp_path / "eval.txt").read_text().startswith("class")
    assert (tmp_path / "eval_confusion.csv").is_file()
    assert report.to_dict()["per_class"]["LGG"]["support"] == 6


def test_summarize_reports():
    a = per_class_metrics(ConfusionMatrix(2, [[2, 0], [0, 2]]))
    b = per_class_metrics(ConfusionMatrix(2, [[1, 1], [0, 2]]))
    summary = summarize_reports([a, b])
    assert summary["folds"] == 2
    assert np.isclose(summary["mean_accuracy"], 0.875)
    assert np.isclose(summary["std_accuracy"], 0.125)
    assert np.isclose(summary["per_class"]["0"]["mean_recall"], 0.75)
    assert np.isclose(summary["per_class"]["0"]["std_recall"], 0.25)
    assert summary["per_class"]["1"]["support"] == [2, 2]
    assert np.allclose(summary["confusion_mean_counts"], [[1.5, 0.5], [0.0, 2.0]])
    assert np.allclose(summary["confusion_mean_rates"], [[0.75, 0.25], [0.0, 1.0]])


def test_identical_folds_have_zero_spread():
    report = per_class_metrics(ConfusionMatrix(3, [[3, 1, 0], [0, 2, 2], [1, 0, 5]]))
    summary = summarize_reports([report, report, report])
    assert summary["std_macro_f1"] == 0.0
    assert summary["mean_macro_f1"] == pytest.approx(report.macro_f1)
    with pytest.raises(ContractError):
        summarize_reports([])
