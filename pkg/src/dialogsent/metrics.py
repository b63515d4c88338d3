"""Confusion matrices and the five evaluation metrics (WA, UA, per-class recalls)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import NUM_CLASSES, SentimentLabel
from .errors import InputError

METRIC_NAMES = ("wa", "neg_recall", "pos_recall", "neu_recall", "ua")


def _check_label(y) -> int:
    y = int(y)
    if not 0 <= y < NUM_CLASSES:
        raise InputError(f"label {y} out of range [0, {NUM_CLASSES})")
    return y


class ConfusionMatrix:
    """3x3 counts, rows = true class, columns = predicted class."""

    def __init__(self, counts=None):
        if counts is None:
            counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES) or (counts < 0).any():
            raise InputError(f"confusion counts must be a non-negative 3x3 grid, got {counts.shape}")
        self.counts = counts

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
        y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
        if y_true.shape != y_pred.shape:
            raise InputError("y_true and y_pred differ in length")
        for arr in (y_true, y_pred):
            if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
                raise InputError(f"labels must lie in [0, {NUM_CLASSES})")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def accumulate(cm: ConfusionMatrix, true_label, predicted_label) -> ConfusionMatrix:
    counts = cm.counts.copy()
    counts[_check_label(true_label), _check_label(predicted_label)] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class MetricsReport:
    wa: float
    ua: float
    neg_recall: float
    pos_recall: float
    neu_recall: float
    support: tuple[int, int, int]
    confusion: tuple = ()

    @property
    def recalls(self) -> tuple[float, float, float]:
        return (self.neg_recall, self.pos_recall, self.neu_recall)

    def to_dict(self) -> dict:
        out = {name: round(getattr(self, name), 4) for name in METRIC_NAMES}
        out["support"] = list(self.support)
        if self.confusion:
            out["confusion"] = [list(r) for r in self.confusion]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data) -> "MetricsReport":
        return cls(
            wa=float(data["wa"]),
            ua=float(data["ua"]),
            neg_recall=float(data["neg_recall"]),
            pos_recall=float(data["pos_recall"]),
            neu_recall=float(data["neu_recall"]),
            support=tuple(int(x) for x in data["support"]),
            confusion=tuple(tuple(int(x) for x in row) for row in data.get("confusion", ())),
        )


def report(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    support = counts.sum(axis=1)
    for c in range(NUM_CLASSES):
        if support[c] == 0:
            raise InputError(f"class {SentimentLabel(c).tag} has no support; recall undefined")
    recalls = [counts[c, c] / support[c] for c in range(NUM_CLASSES)]
    return MetricsReport(
        wa=float(np.trace(counts) / counts.sum()),
        ua=float((recalls[0] + recalls[1] + recalls[2]) / 3.0),
        neg_recall=float(recalls[0]),
        pos_recall=float(recalls[1]),
        neu_recall=float(recalls[2]),
        support=tuple(int(s) for s in support),
        confusion=tuple(tuple(int(x) for x in row) for row in counts),
    )


def evaluate(y_true, y_pred) -> MetricsReport:
    return report(ConfusionMatrix.from_predictions(y_true, y_pred))


def aggregate_folds(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of every metric across folds; supports and confusions summed."""
    if not reports:
        raise InputError("no reports to aggregate")
    mean = {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_NAMES}
    support = tuple(int(sum(r.support[c] for r in reports)) for c in range(NUM_CLASSES))
    confusion = ()
    if all(r.confusion for r in reports):
        confusion = tuple(tuple(int(x) for x in row)
                          for row in sum(np.array(r.confusion) for r in reports))
    return MetricsReport(support=support, confusion=confusion, **mean)
