"""Anomaly scores, threshold calibration and classification.

The score of a record is its negative log conditional density under the
model, so low density means a high score. A record is flagged when its score
is strictly above the threshold; a score equal to the threshold is normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import MdnModel, NetworkParams, forward, log_density

POLICY_KINDS = ("quantile", "mean_plus_k_sigma", "fixed")


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str = "quantile"
    quantile: float = 0.99
    k: float = 3.0
    fixed_value: float = 0.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown threshold policy {self.kind!r}; valid: {', '.join(POLICY_KINDS)}")
        if self.kind == "quantile" and not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie in (0, 1)")

    @classmethod
    def parse(cls, text: str) -> "ThresholdPolicy":
        """Parse ``quantile:0.99``, ``mean_plus_k_sigma:3`` or ``fixed:7.5``.

        A bare kind name uses that kind's default parameter.
        """
        kind, _, arg = text.strip().partition(":")
        if not arg:
            return cls(kind=kind)
        try:
            value = float(arg)
        except ValueError:
            raise ValueError(f"threshold policy parameter {arg!r} is not a number") from None
        field_name = {"quantile": "quantile", "mean_plus_k_sigma": "k", "fixed": "fixed_value"}.get(kind)
        if field_name is None:
            raise ValueError(f"unknown threshold policy {kind!r}; valid: {', '.join(POLICY_KINDS)}")
        return cls(kind=kind, **{field_name: value})

    def describe(self) -> str:
        arg = {"quantile": self.quantile, "mean_plus_k_sigma": self.k, "fixed": self.fixed_value}[self.kind]
        return f"{self.kind}:{arg!r}"


@dataclass
class CalibrationStats:
    mean: float
    std: float
    quantile_value: float | None
    n: int
    source: str = ""

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "quantile_value": self.quantile_value,
            "n": self.n,
            "source": self.source,
        }


@dataclass
class AnomalyReport:
    scores: np.ndarray
    threshold: float
    flags: np.ndarray
    calibration_stats: CalibrationStats | None = None
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)


def anomaly_score(params: NetworkParams, x, y, sigma_floor: float, activation: str = "relu") -> np.ndarray:
    out, _ = forward(params, x, sigma_floor, activation)
    return -log_density(out, y)


def score_dataset(model: MdnModel, dataset, norm_stats=None) -> np.ndarray:
    """Scores for a preprocessed dataset, checking it used ``norm_stats``."""
    if norm_stats is not None and dataset.norm_stats.fingerprint() != norm_stats.fingerprint():
        raise ValueError("dataset was preprocessed with different normalization statistics than the model")
    return -model.log_density(dataset.features, dataset.targets)


def nearest_rank_quantile(scores, q: float) -> float:
    s = np.sort(np.asarray(scores, dtype=np.float64))
    rank = max(1, math.ceil(q * s.size))
    return float(s[rank - 1])


def calibrate_threshold(calibration_scores, policy: ThresholdPolicy) -> float:
    if policy.kind == "fixed":
        return float(policy.fixed_value)
    scores = np.asarray(calibration_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError(f"{policy.kind} threshold needs a non-empty calibration set")
    if policy.kind == "quantile":
        return nearest_rank_quantile(scores, policy.quantile)
    return float(scores.mean() + policy.k * scores.std())


def calibration_stats(scores, policy: ThresholdPolicy, source: str = "") -> CalibrationStats:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return CalibrationStats(math.nan, math.nan, None, 0, source)
    q = policy.quantile if policy.kind == "quantile" else ThresholdPolicy().quantile
    return CalibrationStats(
        mean=float(scores.mean()),
        std=float(scores.std()),
        quantile_value=nearest_rank_quantile(scores, q),
        n=int(scores.size),
        source=source,
    )


def classify(scores, threshold: float) -> np.ndarray:
    if math.isnan(threshold) or threshold == math.inf:
        raise ValueError(f"threshold must be finite or -inf, got {threshold}")
    return np.asarray(scores, dtype=np.float64) > threshold


def detect(scores, calibration_scores, policy: ThresholdPolicy, source: str = "") -> AnomalyReport:
    threshold = calibrate_threshold(calibration_scores, policy)
    scores = np.asarray(scores, dtype=np.float64)
    return AnomalyReport(
        scores=scores,
        threshold=threshold,
        flags=classify(scores, threshold),
        calibration_stats=calibration_stats(calibration_scores, policy, source),
        policy=policy,
    )
