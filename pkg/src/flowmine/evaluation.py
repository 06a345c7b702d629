"""Confusion matrices, per-class F1, ROC/AUC and stratified k-fold splits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import OneClassOnly, TooFewSamples

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class ConfusionMatrix:
    """``counts[i, j]`` is the number of samples of true class i predicted as j."""

    labels: tuple[str, ...]
    counts: np.ndarray

    @classmethod
    def from_predictions(cls, y_true: Sequence[str], y_pred: Sequence[str],
                         labels: Sequence[str]) -> "ConfusionMatrix":
        pos = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[pos[t], pos[p]] += 1
        return cls(tuple(labels), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index(self, c) -> int:
        return c if isinstance(c, (int, np.integer)) else self.labels.index(c)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValueError("label spaces differ")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


def f1(cm: ConfusionMatrix, c) -> Optional[float]:
    """F1 of class ``c``, or None when it is undefined.

    Undefined covers a zero precision or recall denominator (class never
    predicted, or never present) and the case where both are zero.
    """
    i = cm.index(c)
    tp = int(cm.counts[i, i])
    predicted = int(cm.counts[:, i].sum())
    actual = int(cm.counts[i, :].sum())
    if predicted == 0 or actual == 0 or tp == 0:
        return None
    # 2PR/(P+R) with P = tp/predicted, R = tp/actual
    return 2.0 * tp / (predicted + actual)


def f1_scores(cm: ConfusionMatrix) -> dict[str, Optional[float]]:
    return {lab: f1(cm, lab) for lab in cm.labels}


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            for x, y in self.points():
                w.writerow([repr(x), repr(y)])


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype.kind in "US":
        return (y != "Normal").astype(np.int8)
    return (y.astype(np.int64) != 0).astype(np.int8)


def roc(scores, labels) -> RocCurve:
    """Sweep the threshold down through every distinct score; AUC by trapezoids.

    ``labels`` are 1/True for positives (anomalies) or strings where
    anything but ``"Normal"`` is positive.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels)
    if len(s) != len(y) or len(s) == 0:
        raise ValueError("scores and labels must be non-empty and of equal length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC/AUC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    fp = np.cumsum(1 - y[order])
    # keep the last position of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s_sorted[last]]
    auc = float(_trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)


def auc_rank(scores, labels) -> float:
    """AUC as the Mann-Whitney statistic: P(random positive outscores random negative), ties 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both positive and negative samples")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def kfold_split(labels: Sequence[str], k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold: shuffle each class, then deal its members round-robin into folds.

    The dealing position carries over from one class to the next, so fold
    sizes differ by at most one and each class is spread within one sample
    of its global share.
    """
    y = np.asarray(labels)
    n = len(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for cls in sorted(set(y.tolist())):
        members = rng.permutation(np.flatnonzero(y == cls))
        fold_of[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    everything = np.arange(n)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def metrics_report(cm: ConfusionMatrix, auc: Optional[float] = None, **extra) -> dict:
    report = {
        "labels": list(cm.labels),
        "confusion_matrix": cm.counts.tolist(),
        "f1": f1_scores(cm),
        "samples": cm.total,
    }
    if auc is not None:
        report["auc"] = auc
    report.update(extra)
    return report


def dump_report(report: dict, fh) -> None:
    json.dump(report, fh, indent=2, sort_keys=True)
    fh.write("\n")
