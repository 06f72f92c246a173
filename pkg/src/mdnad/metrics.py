"""Detection metrics. The positive class is "anomalous" throughout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


class Ratio(float):
    """A metric value; ``degenerate`` marks a 0/0 that was reported as 0."""

    degenerate: bool

    def __new__(cls, value, degenerate=False):
        obj = float.__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def confusion(flags, labels) -> ConfusionCounts:
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise ValueError(f"length mismatch: {flags.shape} predictions vs {labels.shape} labels")
    if flags.size == 0:
        raise ValueError("confusion needs at least one record")
    return ConfusionCounts(
        tp=int(np.sum(flags & labels)),
        fp=int(np.sum(flags & ~labels)),
        tn=int(np.sum(~flags & ~labels)),
        fn=int(np.sum(~flags & labels)),
    )


def _ratio(num: int, den: int) -> Ratio:
    if den == 0:
        return Ratio(0.0, degenerate=True)
    return Ratio(num / den)


def _nonempty(c: ConfusionCounts) -> None:
    if c.total == 0:
        raise ValueError("metrics of empty counts")


def accuracy(c: ConfusionCounts) -> Ratio:
    _nonempty(c)
    return _ratio(c.tp + c.tn, c.total)


def precision(c: ConfusionCounts) -> Ratio:
    _nonempty(c)
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> Ratio:
    _nonempty(c)
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> Ratio:
    # 2tp / (2tp + fp + fn) equals the harmonic mean of precision and recall
    _nonempty(c)
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted as 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} scores vs {labels.shape} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    counts: ConfusionCounts
    loss_variance: float | None = None
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        raw = {k: getattr(self, k) for k in ("accuracy", "precision", "recall", "f1", "auc")}
        return {
            **{k: (None if v is None else float(v)) for k, v in raw.items()},
            "display_percent": {
                k: (None if v is None else round(100.0 * float(v), 1)) for k, v in raw.items()
            },
            "counts": self.counts.to_dict(),
            "loss_variance": self.loss_variance,
            "degenerate": list(self.degenerate),
        }


def evaluate(flags, labels, scores=None, loss_variance=None) -> MetricsReport:
    c = confusion(flags, labels)
    vals = {"accuracy": accuracy(c), "precision": precision(c), "recall": recall(c), "f1": f1(c)}
    auc = None
    if scores is not None:
        labels = np.asarray(labels, dtype=bool)
        if 0 < labels.sum() < labels.size:
            auc = roc_auc(scores, labels)
    return MetricsReport(
        **{k: float(v) for k, v in vals.items()},
        auc=auc,
        counts=c,
        loss_variance=loss_variance,
        degenerate=[k for k, v in vals.items() if v.degenerate],
    )
