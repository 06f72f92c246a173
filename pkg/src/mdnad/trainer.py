"""Mini-batch training, loss curves and the optimizer stability comparison."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, scoring
from .core_math import ContractError, Rng
from .data import Dataset
from .model import MdnConfig, MdnModel, backward, forward, init_params, nll_loss
from .optimizers import KINDS, OptimizerSpec, new_state, step

log = logging.getLogger(__name__)

# sub-streams of the run seed
_INIT_STREAM, _SPLIT_STREAM, _BATCH_STREAM = 1, 2, 3


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}{': ' + detail if detail else ''}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    val_fraction: float = 0.2
    seed: int = 0
    variance_window: int = 10
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 1 <= self.variance_window <= self.epochs:
            raise ValueError("variance_window must lie in [1, epochs]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer.to_dict(),
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "variance_window": self.variance_window,
            "shuffle_each_epoch": self.shuffle_each_epoch,
        }


@dataclass
class TrainReport:
    train_loss_curve: list[float]
    val_loss_curve: list[float]
    loss_variance: float
    epochs_run: int
    wall_clock_seconds: float
    optimizer_steps: int
    train_index: np.ndarray
    val_index: np.ndarray

    def summary(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "optimizer_steps": self.optimizer_steps,
            "final_train_loss": self.train_loss_curve[-1],
            "final_val_loss": self.val_loss_curve[-1],
            "loss_variance": self.loss_variance,
            "wall_clock_seconds": self.wall_clock_seconds,
            "train_rows": int(self.train_index.size),
            "val_rows": int(self.val_index.size),
        }


def split_train_val(n: int, val_fraction: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)`` split into (train, val) index arrays."""
    if n < 2:
        raise ValueError(f"need at least 2 records to split, got {n}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = min(max(int(math.floor(val_fraction * n + 0.5)), 1), n - 1)
    perm = rng.shuffle(n)
    return perm[n_val:], perm[:n_val]


def split_for(n: int, train_config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """The split :func:`train` uses for ``n`` records under ``train_config``."""
    return split_train_val(n, train_config.val_fraction, Rng(train_config.seed).derive(_SPLIT_STREAM))


def loss_variance(curve, window: int) -> float:
    """Population variance of the last ``window`` entries."""
    curve = np.asarray(curve, dtype=np.float64)
    if not 1 <= window <= curve.size:
        raise ValueError(f"window {window} invalid for a curve of length {curve.size}")
    return float(np.var(curve[-window:]))


def _full_loss(model: MdnModel, data: Dataset) -> float:
    return nll_loss(model.predict(data.features), data.targets)


def train(
    model_config: MdnConfig,
    dataset: Dataset,
    train_config: TrainConfig,
    params=None,
    split: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Train from scratch (or from ``params``) and return ``(model, report)``.

    Everything random draws from sub-streams of ``train_config.seed``, so two
    calls with equal inputs produce bit-identical results.
    """
    t0 = time.perf_counter()
    root = Rng(train_config.seed)
    if params is None:
        params = init_params(model_config, root.derive(_INIT_STREAM))
    params.check_shapes(model_config)
    model = MdnModel(model_config, params)
    if split is None:
        split = split_for(len(dataset), train_config)
    train_idx, val_idx = split
    if train_idx.size == 0:
        raise ValueError("empty training split")
    train_set, val_set = dataset.subset(train_idx), dataset.subset(val_idx)

    spec = train_config.optimizer
    state = new_state(spec)
    batch_rng = root.derive(_BATCH_STREAM)
    n, bs = len(train_set), train_config.batch_size
    order = np.arange(n)
    train_curve, val_curve = [], []
    for epoch in range(1, train_config.epochs + 1):
        if train_config.shuffle_each_epoch:
            order = batch_rng.shuffle(n)
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            x, y = train_set.features[idx], train_set.targets[idx]
            try:
                out, cache = forward(params, x, model_config.sigma_floor, model_config.activation)
                loss = nll_loss(out, y)
            except ContractError as exc:
                # every component density underflowed: the run has diverged
                raise NonFiniteLossError(epoch, b, str(exc)) from exc
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, b)
            try:
                grads = backward(params, cache, out, y)
                step(spec, state, params, grads)
            except FloatingPointError as exc:
                raise NonFiniteLossError(epoch, b, str(exc)) from exc
        try:
            train_loss = _full_loss(model, train_set)
            val_loss = _full_loss(model, val_set) if len(val_set) else math.nan
        except ContractError as exc:
            raise NonFiniteLossError(epoch, -1, str(exc)) from exc
        if not math.isfinite(train_loss):
            raise NonFiniteLossError(epoch, -1, "epoch evaluation")
        train_curve.append(train_loss)
        val_curve.append(val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)

    report = TrainReport(
        train_loss_curve=train_curve,
        val_loss_curve=val_curve,
        loss_variance=loss_variance(train_curve, train_config.variance_window),
        epochs_run=len(train_curve),
        wall_clock_seconds=time.perf_counter() - t0,
        optimizer_steps=state.step_count,
        train_index=np.asarray(train_idx),
        val_index=np.asarray(val_idx),
    )
    return model, report


def write_curves(report: TrainReport, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(report.train_loss_curve, report.val_loss_curve), start=1):
            w.writerow([i, f"{tr:.17g}", f"{va:.17g}"])


def calibration_subset(dataset: Dataset, train_idx) -> tuple[Dataset, str]:
    """Normal-labeled training records, or all training records without labels."""
    train_set = dataset.subset(train_idx)
    if train_set.labels is not None and (~train_set.labels).any():
        return train_set.normal_only(), "training split, normal-labeled records"
    return train_set, "training split, all records"


def evaluate_split(model: MdnModel, dataset: Dataset, report: TrainReport, policy: scoring.ThresholdPolicy):
    """Calibrate on the training split and evaluate on the validation split."""
    calib, source = calibration_subset(dataset, report.train_index)
    calib_scores = scoring.score_dataset(model, calib)
    val = dataset.subset(report.val_index)
    det = scoring.detect(scoring.score_dataset(model, val), calib_scores, policy, source)
    result = None
    if val.labels is not None:
        result = metrics.evaluate(det.flags, val.labels, det.scores, report.loss_variance)
    return det, result


def compare_optimizers(
    model_config: MdnConfig,
    dataset: Dataset,
    base: TrainConfig,
    kinds,
    policy: scoring.ThresholdPolicy | None = None,
) -> list[dict]:
    """Train one arm per optimizer kind from identical initial weights and batching.

    Each kind runs at its own default learning rate; the other hyperparameters
    come from ``base.optimizer``.
    """
    kinds = list(kinds)
    if len(kinds) < 2:
        raise ValueError("compare_optimizers needs at least two kinds")
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise ValueError(f"unknown optimizer kind(s) {bad}; valid kinds: {', '.join(KINDS)}")
    policy = policy or scoring.ThresholdPolicy()
    rows = []
    for kind in kinds:
        cfg = TrainConfig(
            epochs=base.epochs,
            batch_size=base.batch_size,
            optimizer=base.optimizer.with_kind(kind),
            val_fraction=base.val_fraction,
            seed=base.seed,
            variance_window=base.variance_window,
            shuffle_each_epoch=base.shuffle_each_epoch,
        )
        model, report = train(model_config, dataset, cfg)
        _, result = evaluate_split(model, dataset, report, policy)
        rows.append(
            {
                "kind": kind,
                "accuracy": None if result is None else result.accuracy,
                "f1": None if result is None else result.f1,
                "auc": None if result is None else result.auc,
                "loss_variance": report.loss_variance,
                "final_train_loss": report.train_loss_curve[-1],
                "final_val_loss": report.val_loss_curve[-1],
            }
        )
    return rows
