"""Decision-level fusion of per-stream softmax scores, and evaluation metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import AlignmentError, ValidationError

FUSION_METHODS = ("average", "max")
ROW_TOLERANCE = 1e-6


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 1:
        s = s[None]
    if s.ndim != 2 or s.shape[1] < 1:
        raise ValidationError(f"score matrix must be [streams, classes], got shape {s.shape}")
    if np.any(s < 0) or np.any(s > 1) or np.any(np.abs(s.sum(axis=1) - 1.0) > ROW_TOLERANCE):
        raise ValidationError("every stream's scores must lie in [0, 1] and sum to 1")
    return s


def fuse_average(scores) -> int:
    """Class with the highest mean probability across streams (lowest index on ties).

    ``scores`` is a [n_streams, n_classes] matrix for one sample.
    """
    s = _check_scores(scores)
    return int(np.argmax(s.mean(axis=0)))


def fuse_max(scores) -> int:
    """Class with the highest single-stream probability (lowest index on ties)."""
    s = _check_scores(scores)
    return int(np.argmax(s.max(axis=0)))


def fuse_batch(stream_scores: Sequence, method: str = "average") -> np.ndarray:
    """Vectorised fusion: list of [n_samples, n_classes] arrays -> predicted classes [n_samples]."""
    if method not in FUSION_METHODS:
        raise ValidationError(f"unknown fusion method {method!r}")
    arrays = [np.asarray(s, dtype=np.float64) for s in stream_scores]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise AlignmentError(f"streams disagree on [samples, classes]: {sorted(shapes)}")
    stacked = np.stack(arrays, axis=1)  # [samples, streams, classes]
    for row in stacked.reshape(-1, stacked.shape[-1]):
        if np.any(row < 0) or np.any(row > 1) or abs(row.sum() - 1.0) > ROW_TOLERANCE:
            raise ValidationError("every stream's scores must lie in [0, 1] and sum to 1")
    combined = stacked.mean(axis=1) if method == "average" else stacked.max(axis=1)
    return combined.argmax(axis=1)


class ScoreFusionClassifier(ClassifierMixin, BaseEstimator):
    """Late fusion over already-fitted stream classifiers.

    ``X`` is a list with one input array per stream, in the same order as
    ``estimators``. Nothing is learned here; ``fit`` only records classes.
    """

    def __init__(self, estimators=(), method: str = "average"):
        self.estimators = estimators
        self.method = method

    def fit(self, X=None, y=None):
        self.classes_ = np.asarray(self.estimators[0].classes_)
        return self

    def stream_scores(self, X) -> list:
        if len(X) != len(self.estimators):
            raise AlignmentError(f"got {len(X)} input streams for {len(self.estimators)} estimators")
        return [est.predict_proba(x) for est, x in zip(self.estimators, X)]

    def predict(self, X):
        return self.classes_[fuse_batch(self.stream_scores(X), self.method)]


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    confusion: np.ndarray  # [true, predicted] counts

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)
    return cm


def evaluate(predictions, labels, n_classes: int) -> MetricsReport:
    """Accuracy and macro precision/recall/F1 from a confusion matrix.

    A class never predicted has precision 0; a class never present has
    recall 0; F1 is 0 when precision + recall is 0. Macro values are the
    unweighted means over all ``n_classes``.
    """
    predictions = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValidationError(f"predictions {predictions.shape} and labels {labels.shape} must be equal-length vectors")
    if len(labels) == 0:
        raise ValidationError("cannot evaluate an empty prediction set")
    for name, arr in (("predictions", predictions), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValidationError(f"{name} contain classes outside 0..{n_classes - 1}")
    cm = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    true_tot = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    return MetricsReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        confusion=cm,
    )


# row order of the comparison table
REPORT_ROWS = ("Inertial", "Vision", "Fusion(avg)", "Fusion(max)")


@dataclass
class StreamComparison:
    reports: dict  # row name -> MetricsReport
    winner: str  # "average", "max" or "tie"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stream", "accuracy", "precision", "recall", "f1", "n_samples"])
        for name in REPORT_ROWS:
            if name in self.reports:
                r = self.reports[name]
                w.writerow([name] + [f"{v:.10f}" for v in (r.accuracy, r.precision, r.recall, r.f1)] + [r.n_samples])
        return buf.getvalue()

    def to_table(self, title: str = "") -> str:
        head = f"{'Stream':<14}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
        lines = [title] if title else []
        lines += [head, "-" * len(head)]
        for name in REPORT_ROWS:
            if name in self.reports:
                r = self.reports[name]
                lines.append(
                    f"{name:<14}{100 * r.accuracy:>9.1f}%{100 * r.precision:>10.1f}%"
                    f"{100 * r.recall:>8.1f}%{100 * r.f1:>8.1f}%"
                )
        lines.append(f"best fusion method: {self.winner}")
        return "\n".join(lines) + "\n"


def compare_streams(vision_scores, inertial_scores, labels, n_classes: int, method: str = "both") -> StreamComparison:
    """Per-stream and fused metrics, in the table's row order."""
    vision_scores = np.asarray(vision_scores, dtype=np.float64)
    inertial_scores = np.asarray(inertial_scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if not (len(vision_scores) == len(inertial_scores) == len(labels)):
        raise AlignmentError(
            f"sample counts differ: vision {len(vision_scores)}, inertial {len(inertial_scores)}, labels {len(labels)}"
        )
    methods = FUSION_METHODS if method == "both" else (method,)
    reports = {
        "Inertial": evaluate(inertial_scores.argmax(axis=1), labels, n_classes),
        "Vision": evaluate(vision_scores.argmax(axis=1), labels, n_classes),
    }
    names = {"average": "Fusion(avg)", "max": "Fusion(max)"}
    for m in methods:
        reports[names[m]] = evaluate(fuse_batch([vision_scores, inertial_scores], m), labels, n_classes)
    winner = method
    if len(methods) == 2:
        a, b = reports["Fusion(avg)"].accuracy, reports["Fusion(max)"].accuracy
        winner = "average" if a > b else "max" if b > a else "tie"
    return StreamComparison(reports, winner)


def confusion_to_csv(cm, class_names=None) -> str:
    cm = np.asarray(cm)
    names = [str(i) for i in range(len(cm))] if class_names is None else list(class_names)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + names)
    for name, row in zip(names, cm):
        w.writerow([name] + [int(v) for v in row])
    return buf.getvalue()
