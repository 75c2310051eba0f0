"""Confusion counts, accuracy, false positive rate and training curves.

Malicious is the positive (alarm) class throughout.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DataError, EmptyEvaluation, IoError, NoNegatives


def encode_labels(y) -> np.ndarray:
    """Map labels to ``{0, 1}`` with 1 = malicious.

    Accepts the strings ``"normal"``/``"malicious"``, booleans, ``0/1`` or ``-1/+1``.
    """
    out = []
    for v in y:
        if isinstance(v, str):
            if v == "malicious":
                out.append(1)
            elif v == "normal":
                out.append(0)
            else:
                raise DataError(f"unknown label {v!r}")
        else:
            iv = int(v)
            if iv == 1:
                out.append(1)
            elif iv in (0, -1):
                out.append(0)
            else:
                raise DataError(f"unknown label {v!r}")
    return np.asarray(out, dtype=np.int64)


def decode_label(v: int) -> str:
    return "malicious" if v == 1 else "normal"


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_from_predictions(pairs) -> ConfusionCounts:
    """Count ``(predicted, actual)`` pairs."""
    c = ConfusionCounts()
    for pred, actual in pairs:
        p = encode_labels([pred])[0]
        a = encode_labels([actual])[0]
        if p and a:
            c.tp += 1
        elif not p and not a:
            c.tn += 1
        elif p:
            c.fp += 1
        else:
            c.fn += 1
    return c


def confusion_from_arrays(y_pred, y_true) -> ConfusionCounts:
    p = np.asarray(y_pred).astype(bool)
    a = np.asarray(y_true).astype(bool)
    return ConfusionCounts(tp=int(np.sum(p & a)), tn=int(np.sum(~p & ~a)),
                           fp=int(np.sum(p & ~a)), fn=int(np.sum(~p & a)))


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise EmptyEvaluation("accuracy of an empty evaluation")
    return (c.tp + c.tn) / c.total


def false_positive_rate(c: ConfusionCounts) -> float:
    if c.fp + c.tn == 0:
        raise NoNegatives("false positive rate needs at least one normal sample")
    return c.fp / (c.fp + c.tn)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")


@dataclass
class Curve:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise DataError("curve epochs must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


CURVE_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def export_curves(curve: Curve, path):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CURVE_HEADER)
            for r in curve.records:
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc),
                                 repr(r.val_loss), repr(r.val_acc)])
    except OSError as exc:
        raise IoError(str(exc)) from exc


def evaluation_summary(dataset: str, model: str, counts: ConfusionCounts) -> dict:
    try:
        fpr = false_positive_rate(counts)
    except NoNegatives:
        fpr = None
    return {"dataset": dataset, "model": model, "acc": accuracy(counts),
            "fpr": fpr, "counts": counts.to_dict()}


def summary_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True)
