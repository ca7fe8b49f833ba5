"""Binary and continuous prediction metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Score(float):
    """A float that remembers whether it came from a degenerate input.

    Single-class ground truth makes balanced accuracy and macro F1 ill
    defined; those cases are flagged instead of raised.
    """

    degenerate: bool

    def __new__(cls, value: float, degenerate: bool = False) -> Score:
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj

    def __repr__(self) -> str:
        flag = ", degenerate" if self.degenerate else ""
        return f"Score({float(self)!r}{flag})"

    def __reduce__(self):
        return (Score, (float(self), self.degenerate))


def _binary_arrays(pred: Sequence[bool], actual: Sequence[bool]) -> tuple[np.ndarray, np.ndarray]:
    if len(pred) != len(actual):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(actual)} labels")
    if len(actual) == 0:
        raise ValueError("empty input")
    return np.asarray(pred, dtype=bool), np.asarray(actual, dtype=bool)


def confusion(pred: Sequence[bool], actual: Sequence[bool]) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn)."""
    p, a = _binary_arrays(pred, actual)
    tp = int(np.sum(p & a))
    fp = int(np.sum(p & ~a))
    tn = int(np.sum(~p & ~a))
    fn = int(np.sum(~p & a))
    return tp, fp, tn, fn


def balanced_accuracy(pred: Sequence[bool], actual: Sequence[bool]) -> Score:
    tp, fp, tn, fn = confusion(pred, actual)
    pos, neg = tp + fn, tn + fp
    if pos and neg:
        return Score((tp / pos + tn / neg) / 2.0)
    # only one class present: recall of that class
    return Score(tp / pos if pos else tn / neg, degenerate=True)


def macro_f1(pred: Sequence[bool], actual: Sequence[bool]) -> Score:
    tp, fp, tn, fn = confusion(pred, actual)
    degenerate = False
    f1s = []
    # positive class, then negative class with roles swapped
    for c_tp, c_fp, c_fn in ((tp, fp, fn), (tn, fn, fp)):
        if c_tp + c_fn == 0:
            degenerate = True
            f1s.append(0.0)
        else:
            f1s.append(2.0 * c_tp / (2.0 * c_tp + c_fp + c_fn))
    return Score(sum(f1s) / 2.0, degenerate=degenerate)


def accuracy(pred: Sequence[bool], actual: Sequence[bool]) -> float:
    p, a = _binary_arrays(pred, actual)
    return float(np.mean(p == a))


@dataclass(frozen=True)
class ContinuousMetrics:
    n: int
    mae: float
    pearson_r: float | None
    r_undefined: bool
    pred_mean: float
    pred_sd: float
    actual_mean: float
    actual_sd: float

    def to_json(self) -> dict[str, object]:
        return {
            "n": self.n,
            "mae": self.mae,
            "pearson_r": self.pearson_r,
            "r_undefined": self.r_undefined,
            "pred_mean": self.pred_mean,
            "pred_sd": self.pred_sd,
            "actual_mean": self.actual_mean,
            "actual_sd": self.actual_sd,
        }


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation, or None when either series is constant."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


def continuous_metrics(pred: Sequence[float], actual: Sequence[float]) -> ContinuousMetrics:
    """MAE, Pearson r and population mean/SD of both series."""
    if len(pred) != len(actual):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(actual)} values")
    if len(actual) == 0:
        raise ValueError("empty input")
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    r = pearson(p, a)
    return ContinuousMetrics(
        n=len(a),
        mae=float(np.mean(np.abs(p - a))),
        pearson_r=r,
        r_undefined=r is None,
        pred_mean=float(p.mean()),
        pred_sd=float(p.std()),
        actual_mean=float(a.mean()),
        actual_sd=float(a.std()),
    )
