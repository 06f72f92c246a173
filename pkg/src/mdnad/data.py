"""Flow-record ingestion, preprocessing and synthetic benchmarks.

Preprocessing is fitted on training rows only and frozen into
:class:`NormStats`, which travel with every checkpoint:

* numeric columns: missing cells imputed with the training mean, then
  z-scored; columns with zero spread are dropped;
* categorical columns: one-hot over the ``cap - 1`` most frequent training
  values plus a trailing OTHER bucket;
* the target column: z-scored with its own statistics.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .core_math import LOG_2PI, Rng, log_sum_exp

log = logging.getLogger(__name__)

OTHER = "<OTHER>"
DEFAULT_VOCAB_CAP = 32
_FALSE_LABELS = {"0", "0.0", "false", "normal", "benign", "no", ""}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaSpec:
    """Column roles. An empty ``numeric_columns`` means "every other column"."""

    target_column: str
    numeric_columns: tuple[str, ...] = ()
    categorical_columns: tuple[str, ...] = ()
    vocab_caps: tuple[tuple[str, int], ...] = ()
    label_column: str | None = None
    drop_columns: tuple[str, ...] = ()
    default_vocab_cap: int = DEFAULT_VOCAB_CAP

    def __post_init__(self):
        for name in ("numeric_columns", "categorical_columns", "drop_columns"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "vocab_caps", tuple((str(c), int(k)) for c, k in self.vocab_caps))
        roles = {self.target_column, self.label_column}
        if roles & (set(self.numeric_columns) | set(self.categorical_columns)):
            raise SchemaError("target and label columns cannot also be features")
        if self.target_column in self.categorical_columns:
            raise SchemaError("target column must be numeric")
        if any(k < 1 for _, k in self.vocab_caps) or self.default_vocab_cap < 1:
            raise SchemaError("vocabulary caps must be >= 1")

    def vocab_cap(self, column: str) -> int:
        return dict(self.vocab_caps).get(column, self.default_vocab_cap)

    def to_dict(self) -> dict:
        return {
            "target_column": self.target_column,
            "numeric_columns": list(self.numeric_columns),
            "categorical_columns": list(self.categorical_columns),
            "vocab_caps": [list(p) for p in self.vocab_caps],
            "label_column": self.label_column,
            "drop_columns": list(self.drop_columns),
            "default_vocab_cap": self.default_vocab_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaSpec":
        return cls(
            target_column=d["target_column"],
            numeric_columns=tuple(d["numeric_columns"]),
            categorical_columns=tuple(d["categorical_columns"]),
            vocab_caps=tuple(tuple(p) for p in d["vocab_caps"]),
            label_column=d["label_column"],
            drop_columns=tuple(d["drop_columns"]),
            default_vocab_cap=int(d["default_vocab_cap"]),
        )

    def schema_hash(self) -> str:
        return _hash(self.to_dict())

    @classmethod
    def unsw_nb15(cls) -> "SchemaSpec":
        # session duration is the modeled behavior; everything else is context
        return cls(
            target_column="dur",
            categorical_columns=("proto", "service", "state"),
            label_column="label",
            drop_columns=("id", "attack_cat", "srcip", "dstip", "sport", "dsport", "stime", "ltime"),
        )

    @classmethod
    def synthetic(cls) -> "SchemaSpec":
        return cls(target_column="y", numeric_columns=("x",), label_column="label")


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


@dataclass
class RawTable:
    """Parsed CSV: numeric columns as float arrays (NaN = missing), others as strings."""

    schema: SchemaSpec
    numeric: dict[str, np.ndarray]
    categorical: dict[str, np.ndarray]
    target: np.ndarray
    labels: np.ndarray | None
    missing: dict[str, np.ndarray]
    row_index: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return self.target.shape[0]

    def drop_missing_target(self) -> "RawTable":
        keep = ~np.isnan(self.target)
        if keep.all():
            return self
        log.info("%s: dropping %d rows with a missing target", self.source, int((~keep).sum()))
        return self.subset(np.flatnonzero(keep))

    def subset(self, idx) -> "RawTable":
        idx = np.asarray(idx, dtype=np.int64)
        return RawTable(
            schema=self.schema,
            numeric={k: v[idx] for k, v in self.numeric.items()},
            categorical={k: v[idx] for k, v in self.categorical.items()},
            target=self.target[idx],
            labels=None if self.labels is None else self.labels[idx],
            missing={k: v[idx] for k, v in self.missing.items()},
            row_index=self.row_index[idx],
            source=self.source,
        )


def parse_labels(values) -> np.ndarray:
    out = []
    for v in values:
        s = str(v).strip().lower()
        try:
            out.append(float(s) != 0.0)
        except ValueError:
            out.append(s not in _FALSE_LABELS)
    return np.array(out, dtype=bool)


def load_csv(path, schema: SchemaSpec, require_label: bool = True) -> RawTable:
    """Read a headed CSV. Leading lines starting with ``#`` are skipped.

    With ``require_label=False`` a file lacking the label column loads with
    ``labels=None`` instead of failing.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        skip = 0
        for line in fh:
            if not line.startswith("#"):
                break
            skip += 1
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, skiprows=skip)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty") from None
    frame.columns = [c.strip() for c in frame.columns]
    if len(frame) == 0:
        raise SchemaError(f"{path}: no data rows")
    return table_from_frame(frame, schema, source=str(path), require_label=require_label)


def table_from_frame(frame: pd.DataFrame, schema: SchemaSpec, source: str = "", require_label: bool = True) -> RawTable:
    columns = list(frame.columns)
    if not columns:
        raise SchemaError(f"{source}: no header row")
    required = [schema.target_column, *schema.numeric_columns]
    has_label = bool(schema.label_column) and schema.label_column in columns
    if schema.label_column and require_label:
        required.append(schema.label_column)
    missing_cols = [c for c in required if c not in columns]
    if missing_cols:
        raise SchemaError(f"{source}: missing required column(s): {', '.join(missing_cols)}")
    categorical = [c for c in schema.categorical_columns if c in columns]
    if schema.numeric_columns:
        numeric = list(schema.numeric_columns)
    else:
        taken = {schema.target_column, schema.label_column, *categorical, *schema.drop_columns}
        numeric = [c for c in columns if c not in taken]

    def parse(col: str) -> tuple[np.ndarray, np.ndarray]:
        cells = frame[col].str.strip()
        # to_numeric finds the parsable cells; numpy then parses them exactly
        # (pandas' fast float parser is not correctly rounded)
        ok = np.isfinite(pd.to_numeric(cells, errors="coerce").to_numpy(dtype=np.float64))
        vals = np.full(len(cells), np.nan)
        vals[ok] = cells.to_numpy(dtype=str)[ok].astype(np.float64)
        vals[~np.isfinite(vals)] = np.nan
        return vals, np.isnan(vals)

    num, missing = {}, {}
    for c in numeric:
        num[c], missing[c] = parse(c)
    target, target_missing = parse(schema.target_column)
    missing[schema.target_column] = target_missing
    labels = parse_labels(frame[schema.label_column]) if has_label else None
    table = RawTable(
        schema=schema,
        numeric=num,
        categorical={c: frame[c].str.strip().to_numpy(dtype=object) for c in categorical},
        target=target,
        labels=labels,
        missing=missing,
        row_index=np.arange(len(frame), dtype=np.int64),
        source=source,
    )
    n_bad = int(sum(m.sum() for m in missing.values()))
    if n_bad:
        log.info("%s: %d missing or unparsable numeric cells", source, n_bad)
    return table


@dataclass
class NormStats:
    schema: SchemaSpec
    numeric: dict[str, tuple[float, float]]  # kept column -> (mean, std)
    dropped: list[str]
    vocab: dict[str, list[str]]  # categorical column -> kept values (OTHER implied)
    target: tuple[float, float]
    missing_rate: dict[str, float] = field(default_factory=dict)

    @property
    def schema_hash(self) -> str:
        return self.schema.schema_hash()

    @property
    def feature_names(self) -> list[str]:
        names = list(self.numeric)
        for col, values in self.vocab.items():
            names += [f"{col}={v}" for v in values] + [f"{col}={OTHER}"]
        return names

    @property
    def input_dim(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema_hash,
            "numeric": {k: list(v) for k, v in self.numeric.items()},
            "dropped": list(self.dropped),
            "vocab": {k: list(v) for k, v in self.vocab.items()},
            "target": list(self.target),
            "missing_rate": dict(self.missing_rate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        stats = cls(
            schema=SchemaSpec.from_dict(d["schema"]),
            numeric={k: (float(v[0]), float(v[1])) for k, v in d["numeric"].items()},
            dropped=list(d["dropped"]),
            vocab={k: list(v) for k, v in d["vocab"].items()},
            target=(float(d["target"][0]), float(d["target"][1])),
            missing_rate={k: float(v) for k, v in d.get("missing_rate", {}).items()},
        )
        if d.get("schema_hash", stats.schema_hash) != stats.schema_hash:
            raise SchemaError("normalization statistics carry an inconsistent schema hash")
        return stats

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("missing_rate")
        return _hash(d)

    @classmethod
    def identity(cls, schema: SchemaSpec, numeric_columns) -> "NormStats":
        return cls(schema, {c: (0.0, 1.0) for c in numeric_columns}, [], {}, (0.0, 1.0))


@dataclass
class SyntheticTruth:
    """Ground truth of the bimodal generator: y = s * x + noise."""

    x: np.ndarray
    branch: np.ndarray  # +1 / -1
    noise_sigma: float

    def log_density(self, x, y) -> np.ndarray:
        """Exact log p(y | x) = log(0.5 N(y; x, s^2) + 0.5 N(y; -x, s^2))."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        s = self.noise_sigma
        terms = np.stack([-0.5 * ((y - x) / s) ** 2, -0.5 * ((y + x) / s) ** 2], axis=1)
        return log_sum_exp(terms, axis=1) + math.log(0.5) - 0.5 * LOG_2PI - math.log(s)

    def mean_nll(self, x, y) -> float:
        return float(-np.mean(self.log_density(x, y)))


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    labels: np.ndarray | None
    norm_stats: NormStats
    provenance: dict = field(default_factory=dict)
    row_index: np.ndarray | None = None
    truth: SyntheticTruth | None = None

    def __post_init__(self):
        if self.row_index is None:
            self.row_index = np.arange(len(self.targets), dtype=np.int64)

    def __len__(self) -> int:
        return self.targets.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        truth = None
        if self.truth is not None:
            truth = SyntheticTruth(self.truth.x[idx], self.truth.branch[idx], self.truth.noise_sigma)
        return replace(
            self,
            features=self.features[idx],
            targets=self.targets[idx],
            labels=None if self.labels is None else self.labels[idx],
            row_index=self.row_index[idx],
            truth=truth,
        )

    def normal_only(self) -> "Dataset":
        if self.labels is None:
            return self
        return self.subset(np.flatnonzero(~self.labels))

    def to_frame(self) -> pd.DataFrame:
        cols = {name: self.features[:, j] for j, name in enumerate(self.norm_stats.feature_names)}
        cols[self.norm_stats.schema.target_column] = self.targets
        if self.labels is not None and self.norm_stats.schema.label_column:
            cols[self.norm_stats.schema.label_column] = self.labels.astype(int)
        return pd.DataFrame(cols)


def _top_vocab(values: np.ndarray, cap: int) -> list[str]:
    uniq, counts = np.unique(values.astype(str), return_counts=True)
    # most frequent first; ties broken by value for determinism
    order = sorted(range(len(uniq)), key=lambda i: (-counts[i], uniq[i]))
    return [str(uniq[i]) for i in order[: cap - 1]]


def fit_preprocess(raw: RawTable, schema: SchemaSpec | None = None) -> tuple[Dataset, NormStats]:
    schema = schema or raw.schema
    if schema.schema_hash() != raw.schema.schema_hash():
        raise SchemaError("table was loaded with a different schema")
    numeric, dropped, missing_rate = {}, [], {}
    for col, vals in raw.numeric.items():
        observed = vals[~np.isnan(vals)]
        missing_rate[col] = float(1.0 - observed.size / max(vals.size, 1))
        if observed.size == 0:
            dropped.append(col)
            log.info("dropping column %s: no parsable values", col)
            continue
        mean = float(observed.mean())
        filled = np.where(np.isnan(vals), mean, vals)
        mean = float(filled.mean())
        std = float(filled.std())
        if not std > 0:
            dropped.append(col)
            log.info("dropping column %s: zero variance", col)
            continue
        numeric[col] = (mean, std)
    vocab = {col: _top_vocab(vals, schema.vocab_cap(col)) for col, vals in raw.categorical.items()}
    target = raw.target[~np.isnan(raw.target)]
    if target.size == 0:
        raise SchemaError(f"target column {schema.target_column!r} has no numeric values")
    t_std = float(target.std())
    if not t_std > 0:
        raise SchemaError(f"target column {schema.target_column!r} is constant")
    stats = NormStats(schema, numeric, dropped, vocab, (float(target.mean()), t_std), missing_rate)
    return apply_preprocess(raw, stats), stats


def apply_preprocess(raw: RawTable, stats: NormStats | None) -> Dataset:
    if stats is None:
        raise SchemaError("apply_preprocess called before fit_preprocess")
    if raw.schema.schema_hash() != stats.schema_hash:
        raise SchemaError("table schema does not match the fitted normalization statistics")
    raw = raw.drop_missing_target()
    n = len(raw)
    blocks = []
    for col, (mean, std) in stats.numeric.items():
        if col not in raw.numeric:
            raise SchemaError(f"column {col!r} missing from table")
        vals = raw.numeric[col]
        blocks.append(((np.where(np.isnan(vals), mean, vals) - mean) / std)[:, None])
    for col, values in stats.vocab.items():
        cells = raw.categorical[col] if col in raw.categorical else np.full(n, "", dtype=object)
        index = {v: i for i, v in enumerate(values)}
        onehot = np.zeros((n, len(values) + 1))
        onehot[np.arange(n), [index.get(str(c), len(values)) for c in cells]] = 1.0
        blocks.append(onehot)
    features = np.hstack(blocks) if blocks else np.zeros((n, 0))
    t_mean, t_std = stats.target
    return Dataset(
        features=features,
        targets=(raw.target - t_mean) / t_std,
        labels=raw.labels,
        norm_stats=stats,
        provenance={"source": raw.source, "schema_hash": stats.schema_hash, "rows": n},
        row_index=raw.row_index,
    )


def gen_synthetic_bimodal(n: int, rng: Rng, noise_sigma: float = 0.1) -> Dataset:
    """x ~ U(-1, 1); y = s * x + N(0, noise_sigma^2) with s = +/-1 equiprobable."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    x = rng.uniform(n) * 2.0 - 1.0
    branch = np.where(rng.uniform(n) < 0.5, 1.0, -1.0)
    y = branch * x + noise_sigma * rng.normal(n)
    schema = SchemaSpec.synthetic()
    return Dataset(
        features=x[:, None],
        targets=y,
        labels=np.zeros(n, dtype=bool),
        norm_stats=NormStats.identity(schema, ["x"]),
        provenance={"source": "synthetic_bimodal", "seed": rng.seed, "noise_sigma": noise_sigma},
        truth=SyntheticTruth(x, branch, noise_sigma),
    )


def inject_anomalies(dataset: Dataset, fraction: float, rng: Rng, shift: float = 10.0) -> Dataset:
    """Move ``round(fraction * n)`` targets off the data manifold and label them.

    For synthetic data the new target sits at ``+/-(|x| + shift * noise_sigma
    + |noise|)``, i.e. at least ``shift`` noise widths away from both modes.
    Without ground truth the target is offset by ``shift`` target standard
    deviations in a random direction.
    """
    if not 0.0 < fraction < 0.5:
        raise ValueError("anomaly fraction must lie in (0, 0.5)")
    n = len(dataset)
    count = int(math.floor(fraction * n + 0.5))
    idx = np.sort(rng.shuffle(n)[:count])
    sign = np.where(rng.uniform(count) < 0.5, 1.0, -1.0)
    targets = dataset.targets.copy()
    if dataset.truth is not None:
        sigma = dataset.truth.noise_sigma
        noise = np.abs(rng.normal(count)) * sigma
        targets[idx] = sign * (np.abs(dataset.truth.x[idx]) + shift * sigma + noise)
    else:
        targets[idx] = targets[idx] + sign * shift
    labels = np.zeros(n, dtype=bool) if dataset.labels is None else dataset.labels.copy()
    labels[idx] = True
    provenance = {**dataset.provenance, "anomaly_fraction": fraction, "anomaly_shift": shift, "anomalies": count}
    return replace(dataset, targets=targets, labels=labels, provenance=provenance)


def stratified_sample(table: RawTable, n: int, rng: Rng) -> RawTable:
    """Keep ``n`` rows with the label proportions of ``table``."""
    if n >= len(table):
        return table
    if table.labels is None:
        return table.subset(np.sort(rng.shuffle(len(table))[:n]))
    picked = []
    pos = np.flatnonzero(table.labels)
    neg = np.flatnonzero(~table.labels)
    n_pos = int(round(n * pos.size / len(table)))
    for group, k in ((pos, n_pos), (neg, n - n_pos)):
        picked.append(group[rng.shuffle(group.size)[:k]])
    return table.subset(np.sort(np.concatenate(picked)))


def write_synthetic_csv(dataset: Dataset, path) -> None:
    frame = pd.DataFrame({"x": dataset.features[:, 0], "y": dataset.targets})
    frame["label"] = (np.zeros(len(dataset), dtype=int) if dataset.labels is None else dataset.labels.astype(int))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
