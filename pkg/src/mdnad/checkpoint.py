"""Text checkpoints.

A checkpoint is one JSON document::

    {
      "format_version": 1,
      "kind": "mdnad-checkpoint",
      "config": {...MdnConfig...},
      "norm_stats": {...NormStats...} | null,
      "calibration": {"source": str, "scores": "<floats>"} | null,
      "provenance": {...} | null,
      "params": [{"name": "trunk.0.weight", "shape": [16, 6], "data": "<floats>"}, ...]
    }

``<floats>`` is a space-separated list of ``%.17g`` decimals, which parse back
to the identical doubles. Scalars elsewhere use Python's shortest round-trip
repr. Loading never returns a partially built model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormStats
from .model import HEADS, MdnConfig, MdnModel, NetworkParams

FORMAT_VERSION = 1
KIND = "mdnad-checkpoint"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: MdnConfig
    params: NetworkParams
    norm_stats: NormStats | None = None
    calibration_scores: np.ndarray | None = None
    calibration_source: str = ""
    provenance: dict | None = None

    @property
    def model(self) -> MdnModel:
        return MdnModel(self.config, self.params)


def format_floats(a) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(a, dtype=np.float64).reshape(-1))


def parse_floats(text: str, count: int | None = None) -> np.ndarray:
    vals = np.array([float(t) for t in text.split()], dtype=np.float64)
    if count is not None and vals.size != count:
        raise CheckpointError(f"expected {count} values, found {vals.size}")
    return vals


def dumps(ckpt: Checkpoint) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": KIND,
        "config": ckpt.config.to_dict(),
        "norm_stats": None if ckpt.norm_stats is None else ckpt.norm_stats.to_dict(),
        "calibration": None
        if ckpt.calibration_scores is None
        else {"source": ckpt.calibration_source, "scores": format_floats(ckpt.calibration_scores)},
        "provenance": ckpt.provenance,
        "params": [
            {"name": name, "shape": list(a.shape), "data": format_floats(a)}
            for name, a in ckpt.params.named_arrays()
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_text(dumps(ckpt), encoding="utf-8")


def loads(text: str, expected_components: int | None = None) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint parse error: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != KIND:
        raise CheckpointError("not an mdnad checkpoint")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        config = MdnConfig.from_dict(doc["config"])
        arrays = []
        for entry in doc["params"]:
            shape = tuple(int(s) for s in entry["shape"])
            arrays.append((entry["name"], parse_floats(entry["data"], int(np.prod(shape))).reshape(shape)))
        n_trunk = len(config.hidden_dims)
        if len(arrays) != 2 * n_trunk + 2 * len(HEADS):
            raise CheckpointError(f"expected {2 * n_trunk + 6} parameter arrays, found {len(arrays)}")
        vals = [a for _, a in arrays]
        params = NetworkParams(
            trunk=[(vals[2 * i], vals[2 * i + 1]) for i in range(n_trunk)],
            head_pi=(vals[-6], vals[-5]),
            head_mu=(vals[-4], vals[-3]),
            head_sigma=(vals[-2], vals[-1]),
        )
        names = [name for name, _ in params.named_arrays()]
        if names != [name for name, _ in arrays]:
            raise CheckpointError("parameter names do not match the configured architecture")
        params.check_shapes(config)
        norm_stats = None if doc["norm_stats"] is None else NormStats.from_dict(doc["norm_stats"])
        calib = doc.get("calibration")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if not all(np.all(np.isfinite(a)) for a in params.arrays()):
        raise CheckpointError("checkpoint contains non-finite parameters")
    if norm_stats is not None and norm_stats.input_dim != config.input_dim:
        raise CheckpointError(
            f"normalization stats describe {norm_stats.input_dim} features but the model expects {config.input_dim}"
        )
    if expected_components is not None and config.num_components != expected_components:
        raise CheckpointError(
            f"checkpoint has {config.num_components} mixture components, caller expects {expected_components}"
        )
    return Checkpoint(
        config=config,
        params=params,
        norm_stats=norm_stats,
        calibration_scores=None if calib is None else parse_floats(calib["scores"]),
        calibration_source="" if calib is None else calib.get("source", ""),
        provenance=doc.get("provenance"),
    )


def load_checkpoint(path, expected_components: int | None = None) -> Checkpoint:
    return loads(Path(path).read_text(encoding="utf-8"), expected_components)

