"""
Confusion-matrix accumulation and per-class classification metrics.

Rows are true classes, columns predicted classes. A metric whose denominator
is zero is reported as 0 and its name is listed in ``MetricsReport.zero_division``.
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spatiospatial.utils.errors import ContractError
from spatiospatial.utils.logs import write_json

logger = logging.getLogger(__name__)

METRIC_NAMES = ("precision", "recall", "specificity", "f1")


class ConfusionMatrix:
    """
    C x C integer counts. Single writer; merge private matrices with ``merge``.
    """

    def __init__(self, num_classes, counts=None):
        if num_classes < 1:
            raise ContractError(f"a confusion matrix needs at least one class, got {num_classes}")
        self.num_classes = int(num_classes)
        if counts is None:
            self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes) or (counts < 0).any():
                raise ContractError(f"counts must be a non-negative {num_classes}x{num_classes} array")
            self.counts = counts.copy()

    @classmethod
    def from_pairs(cls, num_classes, true_classes, predicted_classes):
        cm = cls(num_classes)
        for t, p in zip(true_classes, predicted_classes):
            cm.update(t, p)
        return cm

    def _check(self, index, role):
        if not 0 <= int(index) < self.num_classes:
            raise ContractError(f"{role} class {index} out of range [0, {self.num_classes})")
        return int(index)

    def update(self, true_class, predicted_class):
        self.counts[self._check(true_class, "true"), self._check(predicted_class, "predicted")] += 1

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ContractError(f"cannot merge {other.num_classes}-class matrix into {self.num_classes}-class")
        self.counts += other.counts
        return self

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        """Row-normalised rates; empty rows stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, class_names=None):
        names = class_names or [str(c) for c in range(self.num_classes)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\predicted"] + list(names))
        for name, row in zip(names, self.counts):
            writer.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def compute_precision(tp, fp, flags=None, label="precision"):
    return _ratio(tp, tp + fp, label, flags if flags is not None else [])


def compute_recall(tp, fn, flags=None, label="recall"):
    return _ratio(tp, tp + fn, label, flags if flags is not None else [])


def compute_specificity(tn, fp, flags=None, label="specificity"):
    return _ratio(tn, tn + fp, label, flags if flags is not None else [])


def compute_f1_score(precision, recall, flags=None, label="f1"):
    return _ratio(2.0 * precision * recall, precision + recall, label, flags if flags is not None else [])


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    specificity: float
    f1: float
    support: int

    def to_dict(self):
        return {"precision": self.precision, "recall": self.recall, "specificity": self.specificity,
                "f1": self.f1, "support": self.support}


@dataclass
class MetricsReport:
    per_class: list
    accuracy: float
    macro_f1: float
    weighted_f1: float
    confusion: ConfusionMatrix = None
    class_names: list = None
    zero_division: list = field(default_factory=list)

    def to_dict(self):
        names = self.class_names or [str(c) for c in range(len(self.per_class))]
        return {
            "per_class": {name: m.to_dict() for name, m in zip(names, self.per_class)},
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "confusion": self.confusion.counts.tolist() if self.confusion is not None else None,
            "zero_division": list(self.zero_division),
        }

    def table(self):
        """Fixed-width human-readable table."""
        names = self.class_names or [str(c) for c in range(len(self.per_class))]
        width = max(8, max(len(n) for n in names))
        lines = [f"{'class':<{width}} {'precision':>9} {'recall':>9} {'specific.':>9} {'f1':>9} {'support':>8}"]
        for name, m in zip(names, self.per_class):
            lines.append(f"{name:<{width}} {m.precision:9.4f} {m.recall:9.4f} "
                         f"{m.specificity:9.4f} {m.f1:9.4f} {m.support:8d}")
        lines.append(f"accuracy {self.accuracy:.4f}  macro F1 {self.macro_f1:.4f}  "
                     f"weighted F1 {self.weighted_f1:.4f}")
        return "\n".join(lines)

    def save(self, out_dir, stem="metrics"):
        """Write <stem>.json, <stem>.txt and <stem>_confusion.csv under out_dir."""
        out_dir = Path(out_dir)
        write_json(out_dir / f"{stem}.json", self.to_dict())
        (out_dir / f"{stem}.txt").write_text(self.table() + "\n", encoding="utf-8")
        if self.confusion is not None:
            (out_dir / f"{stem}_confusion.csv").write_text(self.confusion.to_csv(self.class_names),
                                                         encoding="utf-8")
        return out_dir


def aggregate_f1(report):
    """
    (macro, weighted) F1 from per-class scores and supports.
    Weighted F1 of a report with zero total support is 0.
    """
    f1 = np.array([m.f1 for m in report.per_class], dtype=np.float64)
    support = np.array([m.support for m in report.per_class], dtype=np.float64)
    macro = float(f1.mean()) if f1.size else 0.0
    weighted = float((support * f1).sum() / support.sum()) if support.sum() > 0 else 0.0
    return macro, weighted


def per_class_metrics(cm, class_names=None):
    """
    One-vs-rest precision, recall, specificity and F1 per class, plus accuracy
    and the macro / support-weighted F1.
    Args:
        cm (ConfusionMatrix): Counts with at least one sample.
        class_names (list[str]): Optional labels for reports.
    Returns:
        MetricsReport
    Raises:
        ContractError: if the matrix is empty.
    """
    total = cm.total
    if total < 1:
        raise ContractError("cannot compute metrics from an empty confusion matrix")
    counts = cm.counts
    flags = []
    per_class = []
    for c in range(cm.num_classes):
        tp = int(counts[c, c])
        fn = int(counts[c, :].sum()) - tp
        fp = int(counts[:, c].sum()) - tp
        tn = total - tp - fn - fp
        precision = compute_precision(tp, fp, flags, f"precision[{c}]")
        recall = compute_recall(tp, fn, flags, f"recall[{c}]")
        specificity = compute_specificity(tn, fp, flags, f"specificity[{c}]")
        f1 = compute_f1_score(precision, recall, flags, f"f1[{c}]")
        per_class.append(ClassMetrics(precision, recall, specificity, f1, tp + fn))
    report = MetricsReport(per_class=per_class, accuracy=float(np.trace(counts)) / total,
                           macro_f1=0.0, weighted_f1=0.0, confusion=ConfusionMatrix(cm.num_classes, counts),
                           class_names=list(class_names) if class_names else None, zero_division=flags)
    report.macro_f1, report.weighted_f1 = aggregate_f1(report)
    return report


def summarize_reports(reports):
    """
    Mean and population standard deviation across folds.

    Returns a dict with ``per_class`` (mean_<metric>/std_<metric> per class),
    accuracy/macro/weighted F1 mean and std, and the fold-averaged confusion
    matrices as counts and as row-normalised rates.
    """
    if not reports:
        raise ContractError("no reports to summarise")
    names = reports[0].class_names or [str(c) for c in range(len(reports[0].per_class))]
    per_class = {}
    for c, name in enumerate(names):
        entry = {}
        for metric in METRIC_NAMES:
            values = np.array([getattr(r.per_class[c], metric) for r in reports], dtype=np.float64)
            entry[f"mean_{metric}"] = float(values.mean())
            entry[f"std_{metric}"] = float(values.std())
        entry["support"] = [r.per_class[c].support for r in reports]
        per_class[name] = entry
    summary = {"folds": len(reports), "per_class": per_class}
    for key in ("accuracy", "macro_f1", "weighted_f1"):
        values = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        summary[f"mean_{key}"] = float(values.mean())
        summary[f"std_{key}"] = float(values.std())
    matrices = [r.confusion for r in reports if r.confusion is not None]
    if matrices:
        summary["confusion_mean_counts"] = np.mean([m.counts for m in matrices], axis=0).tolist()
        summary["confusion_mean_rates"] = np.mean([m.normalized() for m in matrices], axis=0).tolist()
    return summary
