"""Binary classification metrics with the malicious class as positive.

All counts are kept as Python integers so the MCC numerator and the product
under its square root stay exact even for captures with millions of flows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import DataError

MALICIOUS = 1
BENIGN = 0


class LengthMismatch(DataError):
    """predictions and labels have different lengths."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels) -> ConfusionMatrix:
    """Count the four cells; class 1 (malicious) is the positive class."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    tp = tn = fp = fn = 0
    for p, t in zip(predictions, labels):
        p = int(p)
        t = int(t)
        if p not in (0, 1) or t not in (0, 1):
            raise DataError(f"classes must be 0/1, got prediction={p} label={t}")
        if t == 1:
            if p == 1:
                tp += 1
            else:
                fn += 1
        else:
            if p == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0.0 when any marginal is empty.

    Numerator and the radicand are computed in exact integer arithmetic
    before the single float square root, so counts in the millions do not
    overflow or lose cancellation accuracy.
    """
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    radicand = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if radicand == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(radicand)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean of TPR and TNR; an empty class contributes 0 to the mean."""
    tpr = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else 0.0
    tnr = cm.tn / (cm.tn + cm.fp) if (cm.tn + cm.fp) > 0 else 0.0
    return 0.5 * (tpr + tnr)


def f1(cm: ConfusionMatrix) -> float:
    """F1 = 2tp / (2tp + fp + fn); 0.0 when the denominator is 0."""
    den = 2 * cm.tp + cm.fp + cm.fn
    if den == 0:
        return 0.0
    return 2 * cm.tp / den


def report_dict(cm: ConfusionMatrix, uwh_per_sample: float, *, variant: str,
                algorithm: str) -> dict:
    """Assemble the per-model report payload.

    Fractions are authoritative; percentage forms are included alongside
    because summary tables print balanced accuracy and F1 as percentages.
    """
    m = mcc(cm)
    ba = balanced_accuracy(cm)
    f = f1(cm)
    return {
        "variant": variant,
        "algorithm": algorithm,
        "mcc": m,
        "balanced_accuracy": ba,
        "f1": f,
        "balanced_accuracy_pct": 100.0 * ba,
        "f1_pct": 100.0 * f,
        "uwh_per_sample": uwh_per_sample,
        "confusion": {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn},
    }
