"""Flat ``key = value`` run configuration.

Resolution order: built-in defaults, then the config file (``--config`` or
the ``MDNAD_CONFIG`` environment variable), then command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SchemaSpec
from .model import MdnConfig
from .optimizers import KINDS, OptimizerSpec
from .scoring import ThresholdPolicy
from .trainer import TrainConfig

CONFIG_ENV = "MDNAD_CONFIG"


class ConfigError(ValueError):
    pass


def _opt(default, help: str, choices=None):
    return field(default=default, metadata={"help": help, "choices": choices})


@dataclass
class RunConfig:
    # model
    hidden_dims: str = _opt("64,64", "comma-separated trunk widths; empty for no trunk")
    activation: str = _opt("relu", "trunk activation", ("relu", "tanh"))
    num_components: int = _opt(3, "mixture components K")
    sigma_floor: float = _opt(1e-3, "lower bound added to every component sigma")
    # training
    epochs: int = _opt(50, "training epochs")
    batch_size: int = _opt(256, "mini-batch size")
    optimizer: str = _opt("adamw", "optimizer kind", KINDS)
    learning_rate: float | None = _opt(None, "learning rate (default 1e-2 for sgd, 1e-3 otherwise)")
    momentum: float = _opt(0.9, "sgd momentum")
    beta1: float = _opt(0.9, "first-moment decay")
    beta2: float = _opt(0.999, "second-moment decay")
    epsilon: float = _opt(1e-8, "optimizer epsilon")
    weight_decay: float = _opt(1e-2, "decoupled weight decay (adamw)")
    val_fraction: float = _opt(0.2, "validation fraction of the records")
    seed: int = _opt(0, "run seed")
    variance_window: int = _opt(10, "trailing epochs used for loss variance")
    shuffle_each_epoch: bool = _opt(True, "reshuffle the training split every epoch")
    train_on: str = _opt("all", "records used for fitting: all, or normal-labeled only", ("all", "normal"))
    # scoring
    threshold_policy: str = _opt("quantile:0.99", "quantile:Q, mean_plus_k_sigma:K or fixed:V")
    # schema
    target_column: str = _opt("dur", "continuous column modeled as the target y")
    label_column: str = _opt("label", "binary anomaly label column; empty for none")
    numeric_columns: str = _opt("", "numeric feature columns; empty means every remaining column")
    categorical_columns: str = _opt("proto,service,state", "one-hot encoded columns (name or name:cap)")
    drop_columns: str = _opt("id,attack_cat,srcip,dstip,sport,dsport,stime,ltime", "ignored columns")
    vocab_cap: int = _opt(32, "default one-hot width per categorical column, OTHER included")
    sample_rows: int = _opt(0, "stratified subsample size before splitting; 0 keeps all rows")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            choices = f.metadata.get("choices")
            if choices and getattr(self, f.name) not in choices:
                raise ConfigError(f"{f.name} must be one of {', '.join(choices)}; got {getattr(self, f.name)!r}")
        try:
            self.model_config(1)
            self.train_config()
            self.policy()
            self.schema()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived views -------------------------------------------------------

    def model_config(self, input_dim: int) -> MdnConfig:
        return MdnConfig(
            input_dim=input_dim,
            hidden_dims=tuple(_ints(self.hidden_dims)),
            activation=self.activation,
            num_components=self.num_components,
            sigma_floor=self.sigma_floor,
        )

    def optimizer_spec(self, kind: str | None = None) -> OptimizerSpec:
        return OptimizerSpec(
            kind=kind or self.optimizer,
            learning_rate=self.learning_rate if kind in (None, self.optimizer) else None,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer_spec(),
            val_fraction=self.val_fraction,
            seed=self.seed,
            variance_window=self.variance_window,
            shuffle_each_epoch=self.shuffle_each_epoch,
        )

    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy.parse(self.threshold_policy)

    def schema(self) -> SchemaSpec:
        cats, caps = [], []
        for item in _names(self.categorical_columns):
            name, _, cap = item.partition(":")
            cats.append(name)
            if cap:
                caps.append((name, int(cap)))
        return SchemaSpec(
            target_column=self.target_column,
            numeric_columns=tuple(_names(self.numeric_columns)),
            categorical_columns=tuple(cats),
            vocab_caps=tuple(caps),
            label_column=self.label_column or None,
            drop_columns=tuple(_names(self.drop_columns)),
            default_vocab_cap=self.vocab_cap,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in _names(text)]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _convert(name: str, raw: str):
    f = FIELDS[name]
    text = raw.strip()
    kind = f.type
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "float | None":
        if text.lower() in ("", "none", "default"):
            return None
        kind = "float"
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind}, got {raw!r}") from None
    return text


FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        if key not in FIELDS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def resolve(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    values = {}
    path = config_path or os.environ.get(CONFIG_ENV)
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def write_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
