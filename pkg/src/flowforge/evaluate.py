"""Confusion matrices, per-class and macro F-measure, cross-validation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Mapping, Sequence

import numpy as np

from .classifiers import ClassifierConfig, ClassifierModel, train_classifier
from .dataset import TARGET_COLUMN, FlowTable, LabelTask, target_of
from .errors import DataError, SchemaError
from .feature_select import ALL, DEFAULT_BINS, ChiSqRanking, parse_k, select_top_k
from .partitioned import PartitionedExecutor
from .preprocess import FoldAssignment, NormalizationParams, min_max_normalize


def format_percent(value: float) -> str:
    """One-decimal percentage, rounded half-up.

    The product ``value * 100`` is first snapped to 9 decimals so that binary
    representation error (0.9965 is stored as 0.99649999...) does not flip
    the rounding direction.
    """
    snapped = Decimal(repr(round(value * 100.0, 9)))
    return f"{snapped.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[actual][predicted]``."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError("confusion matrix must be square")
        if (counts < 0).any():
            raise DataError("confusion matrix counts must be non-negative")
        counts = counts.view()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, c: int) -> int:
        return int(self.counts[c, c])

    def fp(self, c: int) -> int:
        return int(self.counts[:, c].sum() - self.counts[c, c])

    def fn(self, c: int) -> int:
        return int(self.counts[c, :].sum() - self.counts[c, c])

    def support(self, c: int) -> int:
        return int(self.counts[c, :].sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion_matrix(actual, predicted, n_classes: int) -> ConfusionMatrix:
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise DataError(f"actual and predicted lengths differ ({len(actual)} vs {len(predicted)})")
    for name, arr in (("actual", actual), ("predicted", predicted)):
        if len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} class index outside [0, {n_classes})")
    flat = np.bincount(actual * n_classes + predicted, minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Scalar form; every 0/0 is taken as 0."""
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def per_class_f1(cm: ConfusionMatrix, c: int) -> tuple[float, float, float]:
    if not 0 <= c < cm.n_classes:
        raise DataError(f"class {c} outside [0, {cm.n_classes})")
    return precision_recall_f1(cm.tp(c), cm.fp(c), cm.fn(c))


def macro_average(scores: Sequence[float]) -> float:
    """Unweighted mean; 0 for no scores."""
    scores = list(scores)
    return float(sum(scores) / len(scores)) if scores else 0.0


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the per-class F1 scores."""
    return macro_average(per_class_f1(cm, c)[2] for c in range(cm.n_classes))


def weighted_f1(cm: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class F1 (reported alongside the macro figure)."""
    if cm.total == 0:
        return 0.0
    return float(sum(cm.support(c) * per_class_f1(cm, c)[2] for c in range(cm.n_classes)) / cm.total)


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self):
        return {"name": self.name, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "support": self.support}


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    macro_f1: float
    weighted_f1: float
    accuracy: float
    confusion: ConfusionMatrix
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, class_names: Sequence[str] | None = None,
                       metadata: Mapping[str, Any] | None = None) -> "MetricsReport":
        names = list(class_names) if class_names else [str(c) for c in range(cm.n_classes)]
        per_class = tuple(
            ClassMetrics(names[c], *per_class_f1(cm, c), cm.support(c)) for c in range(cm.n_classes)
        )
        return cls(per_class, macro_f1(cm), weighted_f1(cm), cm.accuracy(), cm, dict(metadata or {}))

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "per_class": [m.to_dict() for m in self.per_class],
            "confusion_matrix": self.confusion.to_list(),
        }

    def render(self) -> str:
        width = max([len(m.name) for m in self.per_class] + [5])
        lines = [f"{'class':<{width}}  precision  recall      f1  support"]
        for m in self.per_class:
            lines.append(f"{m.name:<{width}}  {format_percent(m.precision):>9}  "
                         f"{format_percent(m.recall):>6}  {format_percent(m.f1):>6}  {m.support:>7}")
        lines.append(f"macro f1 {format_percent(self.macro_f1)}   weighted f1 "
                     f"{format_percent(self.weighted_f1)}   accuracy {format_percent(self.accuracy)}")
        return "\n".join(lines)

    def plot_data(self) -> str:
        """Per-class F1 series as CSV, for bar charts of class scores."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "f1", "precision", "recall", "support"])
        for m in self.per_class:
            writer.writerow([m.name, repr(m.f1), repr(m.precision), repr(m.recall), m.support])
        writer.writerow(["macro", repr(self.macro_f1), "", "", sum(m.support for m in self.per_class)])
        return buf.getvalue()


def evaluate_model(model: ClassifierModel, test: FlowTable, task: LabelTask | None = None,
                   metadata: Mapping[str, Any] | None = None,
                   target: str = TARGET_COLUMN) -> MetricsReport:
    """Predict every test row and summarise against its target."""
    if test.row_count == 0:
        raise DataError("cannot evaluate on an empty test set")
    absent = [f for f in model.feature_names if f not in test.columns]
    if absent:
        raise SchemaError(f"test table lacks model features {absent}", absent)
    y = target_of(test, target)
    pred = model.predict_many(test.feature_matrix(model.feature_names))
    n_classes = task.n_classes if task is not None else model.n_classes
    names = task.class_names if task is not None else test.target_names or None
    cm = confusion_matrix(y, pred, n_classes)
    return MetricsReport.from_confusion(cm, names, metadata)


# training + evaluation on one split -------------------------------------------------


@dataclass(frozen=True)
class FittedRun:
    model: ClassifierModel
    report: MetricsReport
    normalization: NormalizationParams
    ranking: ChiSqRanking | None
    features: tuple[str, ...]


def train_and_evaluate(train: FlowTable, test: FlowTable, task: LabelTask, config: ClassifierConfig,
                       feature_k=ALL, num_bins: int = DEFAULT_BINS,
                       executor: PartitionedExecutor | None = None, seed: int = 0,
                       select: bool | None = None,
                       metadata: Mapping[str, Any] | None = None) -> FittedRun:
    """Normalise (fitted on ``train``), optionally select top-k features, train, evaluate.

    ``select`` defaults to ranking features only when ``feature_k`` is not ALL.
    """
    feature_k = parse_k(feature_k)
    train_n, params = min_max_normalize(train)
    test_n, _ = min_max_normalize(test, params=params)
    ranking = None
    features = train_n.feature_names
    if select if select is not None else feature_k != ALL:
        ranking, features = select_top_k(train_n, TARGET_COLUMN, feature_k, num_bins)
    model = train_classifier(config, train_n, features, executor=executor, seed=seed)
    report = evaluate_model(model, test_n, task, metadata)
    return FittedRun(model, report, params, ranking, tuple(features))


@dataclass(frozen=True)
class CrossValidationReport:
    folds: tuple[MetricsReport, ...]
    summary: Mapping[str, Mapping[str, float]]

    def to_dict(self):
        return {"summary": {k: dict(v) for k, v in self.summary.items()},
                "folds": [f.to_dict() for f in self.folds]}


def _mean_std(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def cross_validate(table: FlowTable, task: LabelTask, config: ClassifierConfig,
                   folds: FoldAssignment, feature_k=ALL, num_bins: int = DEFAULT_BINS,
                   executor: PartitionedExecutor | None = None, seed: int = 0,
                   metadata: Mapping[str, Any] | None = None) -> CrossValidationReport:
    """``k`` rounds, each holding out one fold; metrics reported as mean and std."""
    if len(folds.folds) != table.row_count:
        raise DataError("fold assignment does not match the table")
    reports = []
    for i in range(folds.k):
        test_idx = folds.test_indices(i)
        train_idx = folds.train_indices(i)
        if len(test_idx) == 0 or len(train_idx) == 0:
            raise DataError(f"fold {i} is empty")
        meta = {**(metadata or {}), "fold": i}
        run = train_and_evaluate(table.take(train_idx), table.take(test_idx), task, config,
                                 feature_k, num_bins, executor, seed, metadata=meta)
        reports.append(run.report)
    summary = {
        "macro_f1": _mean_std([r.macro_f1 for r in reports]),
        "weighted_f1": _mean_std([r.weighted_f1 for r in reports]),
        "accuracy": _mean_std([r.accuracy for r in reports]),
    }
    for c, name in enumerate(task.class_names):
        summary[f"f1[{name}]"] = _mean_std([r.per_class[c].f1 for r in reports])
    return CrossValidationReport(tuple(reports), summary)
