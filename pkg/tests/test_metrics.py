import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.exceptions import DataError, EmptyEvaluation, IoError, NoNegatives
from artifact.metrics import (
    ConfusionCounts,
    Curve,
    EpochRecord,
    accuracy,
    confusion_from_arrays,
    confusion_from_predictions,
    encode_labels,
    evaluation_summary,
    export_curves,
    false_positive_rate,
    summary_json,
)

MAL, NORM = "malicious", "normal"


def test_confusion_examples():
    assert confusion_from_predictions([(MAL, MAL), (NORM, NORM)]) == ConfusionCounts(1, 1, 0, 0)
    assert confusion_from_predictions([(MAL, NORM)]).fp == 1
    assert confusion_from_predictions([]) == ConfusionCounts()


def test_accuracy_examples():
    assert accuracy(ConfusionCounts(tp=2, tn=2)) == 1.0
    assert accuracy(ConfusionCounts(1, 1, 1, 1)) == 0.5
    with pytest.raises(EmptyEvaluation):
        accuracy(ConfusionCounts())


def test_fpr_examples():
    assert false_positive_rate(ConfusionCounts(fp=1, tn=3)) == 0.25
    assert false_positive_rate(ConfusionCounts(tn=5)) == 0.0
    with pytest.raises(NoNegatives):
        false_positive_rate(ConfusionCounts(tp=4, fn=1))


def test_label_encoding():
    assert encode_labels(["malicious", "normal", 1, 0, -1, True]).tolist() == [1, 0, 1, 0, 0, 1]
    for bad in (["evil"], [2]):
        with pytest.raises(DataError):
            encode_labels(bad)


pairs = st.lists(st.tuples(st.sampled_from([MAL, NORM]), st.sampled_from([MAL, NORM])), max_size=50)


@given(pairs)
def test_ranges_and_oracle(items):
    c = confusion_from_predictions(items)
    assert c.total == len(items)
    if items:
        acc = accuracy(c)
        assert 0 <= acc <= 1
        assert acc == sum(p == a for p, a in items) / len(items)
        assert (acc == 1) == (c.fp == 0 and c.fn == 0)
    if c.fp + c.tn:
        fpr = false_positive_rate(c)
        assert 0 <= fpr <= 1 and (fpr == 0) == (c.fp == 0)
    pred = np.array([p == MAL for p, _ in items], dtype=int)
    true = np.array([a == MAL for _, a in items], dtype=int)
    assert confusion_from_arrays(pred, true) == c


def test_curve_and_export(tmp_path):
    curve = Curve()
    for e in (1, 2, 3):
        curve.append(EpochRecord(e, 1.0 / e, 0.5 + e / 10, 0.9, 0.7))
    with pytest.raises(DataError):
        curve.append(EpochRecord(3, 0.0, 0.0))
    path = tmp_path / "c.csv"
    export_curves(curve, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    assert len(rows) == 4 and float(rows[2][1]) == 0.5
    export_curves(Curve(), path)
    assert path.read_text().strip() == "epoch,train_loss,train_acc,val_loss,val_acc"
    with pytest.raises(IoError):
        export_curves(curve, tmp_path / "missing" / "c.csv")


def test_summary():
    s = evaluation_summary("test", "cnn", ConfusionCounts(tp=3, tn=1, fp=1, fn=0))
    assert s["acc"] == 0.8 and s["fpr"] == 0.5 and s["counts"]["tp"] == 3
    back = json.loads(summary_json(s))
    assert set(back) == {"dataset", "model", "acc", "fpr", "counts"}
    assert evaluation_summary("d", "m", ConfusionCounts(tp=1))["fpr"] is None
    assert not math.isnan(back["acc"])
