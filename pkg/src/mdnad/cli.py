"""Command-line entry point: ``mdnad <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import data, metrics, scoring, trainer
from .config import ConfigError, RunConfig, resolve
from .core_math import Rng
from .optimizers import KINDS

FORMAT_VERSION = 1
log = logging.getLogger("mdnad")


class UsageError(Exception):
    """Bad flags, config or input paths (exit 2)."""


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _provenance(cfg: RunConfig | None, command: str, **extra) -> dict:
    out = {"command": command, **extra}
    if cfg is not None:
        out["run_config"] = cfg.to_dict()
        out["seed"] = cfg.seed
    return out


def _comment(prov: dict) -> str:
    return "provenance=" + json.dumps(prov, sort_keys=True, default=_json_default)


def _existing(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {p}")
    return p


def _write_csv(path, header, rows, prov: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_comment(prov)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _run_config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return resolve(getattr(args, "config", None), overrides)


def _load_training_table(cfg: RunConfig, path: Path) -> data.RawTable:
    raw = data.load_csv(path, cfg.schema()).drop_missing_target()
    if cfg.sample_rows and cfg.sample_rows < len(raw):
        raw = data.stratified_sample(raw, cfg.sample_rows, Rng(cfg.seed).derive(99))
    return raw


def _prepare(cfg: RunConfig, path: Path):
    """Split raw rows, fit preprocessing on the training rows, transform all rows."""
    raw = _load_training_table(cfg, path)
    tcfg = cfg.train_config()
    train_idx, val_idx = trainer.split_for(len(raw), tcfg)
    _, stats = data.fit_preprocess(raw.subset(train_idx))
    dataset = data.apply_preprocess(raw, stats)
    return dataset, stats, tcfg, (train_idx, val_idx)


def _fit_split(cfg: RunConfig, dataset: data.Dataset, split):
    train_idx, val_idx = split
    if cfg.train_on == "normal" and dataset.labels is not None:
        train_idx = train_idx[~dataset.labels[train_idx]]
    return train_idx, val_idx


# commands ---------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    if not (args.anomaly_fraction == 0 or 0 < args.anomaly_fraction < 0.5):
        raise UsageError("--anomaly-fraction must be 0 or lie in (0, 0.5)")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    root = Rng(args.seed)
    ds = data.gen_synthetic_bimodal(args.n, root.derive(1), args.noise_sigma)
    if args.anomaly_fraction > 0:
        ds = data.inject_anomalies(ds, args.anomaly_fraction, root.derive(2), args.shift)
    prov = {
        "command": "gen-synthetic",
        "n": args.n,
        "seed": args.seed,
        "noise_sigma": args.noise_sigma,
        "anomaly_fraction": args.anomaly_fraction,
        "shift": args.shift,
    }
    out = Path(args.out)
    rows = [[_fmt(float(x)), _fmt(float(y)), int(l)] for x, y, l in zip(ds.features[:, 0], ds.targets, ds.labels)]
    _write_csv(out, ["x", "y", "label"], rows, prov)
    truth = {
        "format_version": FORMAT_VERSION,
        "provenance": prov,
        "noise_sigma": args.noise_sigma,
        "branch": ds.truth.branch.astype(int).tolist(),
        "anomaly_index": np.flatnonzero(ds.labels).tolist(),
    }
    if args.noise_sigma > 0:
        truth["true_log_density"] = ckpt_io.format_floats(ds.truth.log_density(ds.truth.x, ds.targets))
    Path(str(out) + ".truth.json").write_text(_dumps(truth), encoding="utf-8")
    print(f"wrote {out} ({args.n} rows, {int(ds.labels.sum())} anomalies)")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    path = _existing(args.data, "--data")
    dataset, stats, tcfg, split = _prepare(cfg, path)
    model_cfg = cfg.model_config(stats.input_dim)
    model, report = trainer.train(model_cfg, dataset, tcfg, split=_fit_split(cfg, dataset, split))
    calib, source = trainer.calibration_subset(dataset, split[0])
    prov = _provenance(cfg, "train", data=str(path))
    ck = ckpt_io.Checkpoint(
        config=model_cfg,
        params=model.params,
        norm_stats=stats,
        calibration_scores=scoring.score_dataset(model, calib),
        calibration_source=source,
        provenance=prov,
    )
    ckpt_io.save_checkpoint(args.out_checkpoint, ck)
    if args.out_curves:
        trainer.write_curves(report, args.out_curves, _comment(prov))
    summary_path = args.out_summary or str(args.out_checkpoint) + ".summary.json"
    summary = {"format_version": FORMAT_VERSION, "provenance": prov, "report": report.summary()}
    Path(summary_path).write_text(_dumps(summary), encoding="utf-8")
    print(
        f"trained {report.epochs_run} epochs: train loss {report.train_loss_curve[-1]:.5f}, "
        f"val loss {report.val_loss_curve[-1]:.5f}"
    )
    return 0


def _load_scoring(args, require_label: bool):
    ck = ckpt_io.load_checkpoint(_existing(args.checkpoint, "--checkpoint"))
    if ck.norm_stats is None:
        raise ckpt_io.CheckpointError("checkpoint carries no normalization statistics")
    path = _existing(args.data, "--data")
    raw = data.load_csv(path, ck.norm_stats.schema, require_label=require_label)
    dataset = data.apply_preprocess(raw, ck.norm_stats)
    scores = scoring.score_dataset(ck.model, dataset, ck.norm_stats)
    policy = None
    if args.threshold_policy:
        try:
            policy = scoring.ThresholdPolicy.parse(args.threshold_policy)
        except ValueError as exc:
            raise UsageError(f"--threshold-policy: {exc}") from None
    else:
        stored = (ck.provenance or {}).get("run_config", {}).get("threshold_policy")
        policy = scoring.ThresholdPolicy.parse(stored) if stored else scoring.ThresholdPolicy()
    calib = ck.calibration_scores if ck.calibration_scores is not None else np.empty(0)
    det = scoring.detect(scores, calib, policy, ck.calibration_source)
    return ck, path, dataset, det


def cmd_score(args) -> int:
    ck, path, dataset, det = _load_scoring(args, require_label=False)
    prov = {"command": "score", "data": str(path), "checkpoint": str(args.checkpoint), "policy": det.policy.describe()}
    rows = [[int(i), _fmt(float(s)), int(f)] for i, s, f in zip(dataset.row_index, det.scores, det.flags)]
    _write_csv(args.out_scores, ["record_index", "score", "flag"], rows, prov)
    print(f"scored {len(rows)} records, {int(det.flags.sum())} flagged (threshold {det.threshold:.6g})")
    return 0


def cmd_evaluate(args) -> int:
    ck, path, dataset, det = _load_scoring(args, require_label=True)
    if dataset.labels is None:
        raise UsageError("evaluate needs a label column")
    result = metrics.evaluate(det.flags, dataset.labels, det.scores)
    doc = {
        "format_version": FORMAT_VERSION,
        "provenance": {
            "command": "evaluate",
            "data": str(path),
            "checkpoint": str(args.checkpoint),
            "train_provenance": ck.provenance,
        },
        "metrics": result.to_dict(),
        "threshold": det.threshold,
        "threshold_policy": det.policy.describe(),
        "calibration_stats": det.calibration_stats.to_dict(),
        "records": len(dataset),
    }
    text = _dumps(doc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare_optimizers(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise UsageError(f"unknown optimizer kind(s) {', '.join(bad)}; valid kinds: {', '.join(KINDS)}")
    if len(kinds) < 2:
        raise UsageError("--kinds needs at least two optimizers")
    cfg = _run_config(args)
    path = _existing(args.data, "--data")
    dataset, stats, tcfg, split = _prepare(cfg, path)
    if cfg.train_on == "normal":
        raise UsageError("compare-optimizers trains on all records; unset train_on")
    rows = trainer.compare_optimizers(cfg.model_config(stats.input_dim), dataset, tcfg, kinds, cfg.policy())
    prov = _provenance(cfg, "compare-optimizers", data=str(path), kinds=kinds)
    out = Path(args.out)
    csv_path = out if out.suffix == ".csv" else out.with_suffix(".csv")
    cols = ["kind", "accuracy", "f1", "loss_variance", "auc", "final_train_loss", "final_val_loss"]
    _write_csv(csv_path, cols, [[_fmt(r[c]) for c in cols] for r in rows], prov)
    doc = {"format_version": FORMAT_VERSION, "provenance": prov, "rows": rows}
    csv_path.with_suffix(".json").write_text(_dumps(doc), encoding="utf-8")
    for r in rows:
        print(f"{r['kind']:>10}  loss_variance={r['loss_variance']:.3g}  final_train_loss={r['final_train_loss']:.4f}")
    return 0


# argument parsing -------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    for f in fields(RunConfig):
        default = f.default
        g.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            default=None,
            metavar=f.name.upper(),
            help=f"{f.metadata['help']} (default: {default})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdnad", description="Mixture density network anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic bimodal CSV and its ground-truth sidecar")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--anomaly-fraction", type=float, default=0.05)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--shift", type=float, default=10.0, help="anomaly offset in noise widths")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a model and write checkpoint, loss curves and summary")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-curves")
    p.add_argument("--out-summary")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (
        ("score", cmd_score, "write per-record anomaly scores"),
        ("evaluate", cmd_evaluate, "report ACC, precision, recall, F1 and AUC"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--threshold-policy", help="quantile:Q, mean_plus_k_sigma:K or fixed:V")
        if name == "score":
            p.add_argument("--out-scores", required=True)
        else:
            p.add_argument("--out", help="JSON output path (default: stdout)")
        p.set_defaults(func=func)

    p = sub.add_parser("compare-optimizers", help="train one arm per optimizer from shared initialization")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--kinds", default=",".join(KINDS))
    p.add_argument("--out", required=True, help="output path; writes .csv and .json")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare_optimizers)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, data.SchemaError) as exc:
        print(f"mdnad {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (trainer.NonFiniteLossError, ckpt_io.CheckpointError, ValueError, OSError) as exc:
        print(f"mdnad {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
