"""Command-line pipeline: one subcommand per stage, files in between.

Stages: synth -> ingest -> featurize -> pretrain -> finetune ->
train-baselines -> eval -> predict / report, plus a ``pipeline`` command
that chains them.  Every stage writes ``config.resolved.json`` into its
output directory so any stage can be re-run from its artifacts alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, evaluation, synthetic, training
from .data_model import (DataFormatError, assemble_records, parse_gps, parse_labels,
                         parse_trips, stratified_split, write_gps, write_labels, write_trips)
from .feature_engine import (build_dataset, load_feature_tensor, observed_max_steps,
                             save_feature_tensor)
from .model import Checkpoint, ConfigError, ModelConfig, TransformerModel
from .synthetic import BoundingBox, SynthConfig
from .training import CheckpointError, TrainConfig, load_checkpoint, save_checkpoint

DEFAULT_CONFIG: dict = {
    "synth": {
        "n_bikes": 200, "faulty_fraction": 0.15, "days": 3,
        "lambda_normal": 8.0, "lambda_faulty": 2.0, "fragmentation": 0.8,
        "gps_period_s": 120, "seed": 42,
    },
    "split": {"ratio": 0.8, "seed": 42},
    "features": {"t_steps": 64},
    "model": {
        "d_model": 64, "n_heads": 4, "n_layers": 2, "d_ff": 128,
        "mask_ratio": 0.15, "mask_mean_len": 3.0, "dropout": 0.0, "n_classes": 2,
    },
    "pretrain": {"epochs": 50, "batch_size": 64, "lr": 1e-3, "seed": 42,
                 "loss_scope": "full", "precision": "f32"},
    "finetune": {"epochs": 30, "batch_size": 64, "lr": 1e-2, "seed": 42,
                 "label_fraction": 1.0, "precision": "f32"},
    "baselines": {"logreg_epochs": 500, "logreg_lr": 0.1, "knn_k": 5,
                  "scratch_epochs": 30, "scratch_lr": 1e-3, "seed": 42},
}


class CliError(Exception):
    """A stage failed in a way the user must fix (bad config, missing file)."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_config(args: argparse.Namespace) -> dict:
    config = DEFAULT_CONFIG
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            config = _deep_merge(config, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    return config


def _apply_override(config: dict, section: str, key: str, value) -> None:
    if value is not None:
        config.setdefault(section, {})[key] = value


def _write_resolved(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(json.dumps(config, indent=2, sort_keys=True))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {what}: {path}")
    return path


def _load_split_records(data_dir: Path):
    trips = parse_trips(_require(data_dir / "trips.csv", "trips file"))
    gps = parse_gps(_require(data_dir / "gps.csv", "gps file"))
    labels = parse_labels(_require(data_dir / "labels.csv", "labels file"))
    records, report = assemble_records(trips, gps, labels)
    return records, report


def _model_config(config: dict, t_steps: int, input_dim: int) -> ModelConfig:
    try:
        return ModelConfig(t_steps=t_steps, input_dim=input_dim, **config["model"])
    except (ConfigError, TypeError) as exc:
        raise CliError(f"invalid model config: {exc}") from None


def _train_config(section: dict, **extra) -> TrainConfig:
    merged = {**section, **extra}
    scope = merged.pop("loss_scope", "full")
    if scope == "masked":
        scope = "masked_only"
    try:
        return TrainConfig(loss_scope=scope, **merged)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid training config: {exc}") from None


# -- subcommands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _resolve_config(args)
    _apply_override(config, "synth", "seed", args.seed)
    section = dict(config["synth"])
    if isinstance(section.get("bbox"), dict):
        section["bbox"] = BoundingBox(**section["bbox"])
    if "ring_weights" in section:
        section["ring_weights"] = tuple(section["ring_weights"])
    try:
        scfg = SynthConfig(**section)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid synth config: {exc}") from None
    out = Path(args.out)
    manifest = synthetic.generate_fleet(scfg, out)
    _write_resolved(config, out)
    stats = manifest.class_stats
    print(f"wrote fleet of {scfg.n_bikes} bikes to {out} "
          f"({stats.get('unusable', {}).get('bikes', 0)} unusable)")
    return 0


def cmd_ingest(args) -> int:
    config = _resolve_config(args)
    _apply_override(config, "split", "seed", args.seed)
    _apply_override(config, "split", "ratio", args.ratio)
    data_dir = Path(args.data)
    records, report = _load_split_records(data_dir)
    unlabeled = [r.bike for r in records if r.label is None]
    if unlabeled:
        raise CliError(f"{len(unlabeled)} bikes have no label (first: {unlabeled[0]})")
    try:
        train, test = stratified_split(records, config["split"]["ratio"], config["split"]["seed"])
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    for name, split in (("train", train), ("test", test)):
        split_dir = out / name
        split_dir.mkdir(parents=True, exist_ok=True)
        write_trips(split_dir / "trips.csv", [t for r in split for t in r.trips])
        write_gps(split_dir / "gps.csv", [p for r in split for p in r.trajectory])
        write_labels(split_dir / "labels.csv", [(r.bike, r.label) for r in split])
    (out / "skip_report.json").write_text(json.dumps(
        {"no_gps": report.no_gps, "skipped_bikes": report.skipped_bikes}, indent=2))
    _write_resolved(config, out)
    print(f"split {len(records)} bikes into {len(train)} train / {len(test)} test "
          f"({report.no_gps} skipped)")
    return 0


def cmd_featurize(args) -> int:
    config = _resolve_config(args)
    _apply_override(config, "features", "t_steps", args.t_steps)
    t_steps = config["features"]["t_steps"]
    data_dir = Path(args.data)
    train_records, _ = _load_split_records(data_dir / "train")
    test_records, _ = _load_split_records(data_dir / "test")
    if not train_records:
        raise CliError(f"no train records under {data_dir}")
    if t_steps == "max":
        # longest trajectory observed in the training split, capped at 256
        t_steps = observed_max_steps(train_records)
        config["features"]["t_steps"] = t_steps
    elif not isinstance(t_steps, int) or t_steps < 1:
        raise CliError(f"features.t_steps must be a positive integer or 'max', got {t_steps!r}")
    train_tensor = build_dataset(train_records, norm="fit", t_steps=t_steps)
    test_tensor = build_dataset(test_records, norm=train_tensor.norm, t_steps=t_steps)
    out = Path(args.out)
    save_feature_tensor(train_tensor, out / "train")
    save_feature_tensor(test_tensor, out / "test")
    _write_resolved(config, out)
    print(f"wrote tensors {train_tensor.n}x{train_tensor.t}x{train_tensor.d} (train) and "
          f"{test_tensor.n}x{test_tensor.t}x{test_tensor.d} (test) to {out}")
    return 0


def cmd_pretrain(args) -> int:
    config = _resolve_config(args)
    for key, value in (("seed", args.seed), ("epochs", args.epochs),
                       ("loss_scope", args.loss_scope), ("precision", args.precision)):
        _apply_override(config, "pretrain", key, value)
    tensor = load_feature_tensor(_require(Path(args.tensor), "tensor directory"))
    mcfg = _model_config(config, tensor.t, tensor.d)
    tcfg = _train_config(config["pretrain"])
    ckpt, log = training.pretrain(tensor, mcfg, tcfg)
    out = Path(args.out)
    save_checkpoint(ckpt, out)
    log.write(out / "trainlog.jsonl")
    _write_resolved(config, out)
    print(f"pretrained {tcfg.epochs} epochs, final loss {ckpt.pretrain_final_loss:.4f} -> {out}")
    return 0


def cmd_finetune(args) -> int:
    config = _resolve_config(args)
    for key, value in (("seed", args.seed), ("epochs", args.epochs),
                       ("label_fraction", args.label_fraction), ("precision", args.precision)):
        _apply_override(config, "finetune", key, value)
    tensor = load_feature_tensor(_require(Path(args.tensor), "tensor directory"))
    ckpt = load_checkpoint(_require(Path(args.checkpoint), "checkpoint"))
    tcfg = _train_config(config["finetune"])
    try:
        model, log = training.finetune(tensor, ckpt, tcfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    save_checkpoint(Checkpoint(config=model.config, params=model.param_arrays(),
                                        pretrain_epochs=ckpt.pretrain_epochs,
                                        pretrain_final_loss=ckpt.pretrain_final_loss), out)
    log.write(out / "trainlog.jsonl")
    _write_resolved(config, out)
    print(f"finetuned {tcfg.epochs} epochs, final loss {log.losses()[-1]:.4f} -> {out}")
    return 0


def cmd_train_baselines(args) -> int:
    config = _resolve_config(args)
    _apply_override(config, "baselines", "seed", args.seed)
    section = config["baselines"]
    data_dir = Path(args.data)
    train_records, _ = _load_split_records(data_dir / "train")
    test_records, _ = _load_split_records(data_dir / "test")
    train_y = np.array([int(r.label) for r in train_records])
    test_y = [r.label for r in test_records]

    train_flat, stats = baselines.standardize_flat(baselines.flat_features(train_records))
    test_flat, _ = baselines.standardize_flat(baselines.flat_features(test_records), stats)

    reports = []
    logreg = baselines.train_logreg(train_flat, train_y, epochs=section["logreg_epochs"],
                                    lr=section["logreg_lr"], seed=section["seed"])
    reports.append(evaluation.metrics(
        evaluation.confusion(test_y, logreg.predict(test_flat)), model="logreg"))
    knn_pred = baselines.knn_predict_batch(train_flat, train_y, test_flat, k=section["knn_k"])
    reports.append(evaluation.metrics(
        evaluation.confusion(test_y, knn_pred), model=f"knn(k={section['knn_k']})"))

    train_tensor = load_feature_tensor(_require(Path(args.train_tensor), "train tensor"))
    test_tensor = load_feature_tensor(_require(Path(args.test_tensor), "test tensor"))
    mcfg = _model_config(config, train_tensor.t, train_tensor.d)
    tcfg = _train_config(config["finetune"], epochs=section["scratch_epochs"],
                         lr=section.get("scratch_lr", 1e-3), seed=section["seed"])
    scratch, _ = baselines.train_scratch_transformer(train_tensor, mcfg, tcfg)
    reports.append(evaluation.evaluate(scratch, test_tensor, model_name="transformer-scratch"))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, rows = evaluation.render_table(reports)
    (out / "baseline_reports.jsonl").write_text("\n".join(rows) + "\n")
    _write_resolved(config, out)
    print(f"evaluated {len(reports)} baselines -> {out / 'baseline_reports.jsonl'}")
    return 0


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    tensor = load_feature_tensor(_require(Path(args.tensor), "tensor directory"))
    ckpt = load_checkpoint(_require(Path(args.checkpoint), "checkpoint"))
    model = TransformerModel(ckpt.config, params=ckpt.params)
    try:
        report = evaluation.evaluate(model, tensor, model_name=args.name)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.jsonl").write_text(evaluation.report_row(report) + "\n")
    _write_resolved(config, out)
    print(f"{args.name}: acc {report.accuracy:.4f}, recall {report.recall:.4f}, "
          f"precision {report.precision:.4f}, f1 {report.f1:.4f}")
    return 0


def cmd_predict(args) -> int:
    config = _resolve_config(args)
    tensor = load_feature_tensor(_require(Path(args.tensor), "tensor directory"))
    ckpt = load_checkpoint(_require(Path(args.checkpoint), "checkpoint"))
    model = TransformerModel(ckpt.config, params=ckpt.params)
    probs, preds = evaluation.predict_statuses(model, tensor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bike_id", "prob_unusable", "status"])
        for bike, p, s in zip(tensor.bike_ids, probs[:, 1], preds):
            writer.writerow([bike, f"{float(p):.6f}", int(s)])
    _write_resolved(config, out)
    print(f"wrote {len(preds)} predictions ({int(preds.sum())} flagged) to {out}")
    return 0


def cmd_report(args) -> int:
    config = _resolve_config(args)
    rows: list[str] = []
    for path in args.rows:
        rows.extend(_require(Path(path), "report rows file").read_text().splitlines())
    reports = evaluation.parse_report_rows(rows)
    if not reports:
        raise CliError("no report rows found in the given files")
    table, out_rows = evaluation.render_table(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(table)
    (out / "reports.jsonl").write_text("\n".join(out_rows) + "\n")
    _write_resolved(config, out)
    print(table, end="")
    return 0


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    base = ["--config", args.config] if args.config else []
    run = lambda argv: main(argv)  # noqa: E731 (each stage already prints)
    steps = [
        ["synth", "--out", str(out / "data")] + base,
        ["ingest", "--data", str(out / "data"), "--out", str(out / "splits")] + base,
        ["featurize", "--data", str(out / "splits"), "--out", str(out / "tensors")] + base,
        ["pretrain", "--tensor", str(out / "tensors" / "train"),
         "--out", str(out / "checkpoints" / "pretrained")] + base,
        ["finetune", "--tensor", str(out / "tensors" / "train"),
         "--checkpoint", str(out / "checkpoints" / "pretrained"),
         "--out", str(out / "checkpoints" / "finetuned")] + base,
        ["train-baselines", "--data", str(out / "splits"),
         "--train-tensor", str(out / "tensors" / "train"),
         "--test-tensor", str(out / "tensors" / "test"),
         "--out", str(out / "baselines")] + base,
        ["eval", "--tensor", str(out / "tensors" / "test"),
         "--checkpoint", str(out / "checkpoints" / "finetuned"),
         "--name", "transformer-pretrained", "--out", str(out / "eval")] + base,
        ["report", "--rows", str(out / "eval" / "report.jsonl"),
         str(out / "baselines" / "baseline_reports.jsonl"),
         "--out", str(out / "report")] + base,
    ]
    if args.seed is not None:
        for step in steps[:6]:
            step += ["--seed", str(args.seed)]
    for step in steps:
        code = run(step)
        if code != 0:
            return code
    return 0


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bikefault",
                                     description="Unusable-bike detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file (overrides defaults)")
        p.add_argument("--seed", type=int, help="stage seed override")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic labeled fleet")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse raw files, join per bike, split by class")
    common(p)
    p.add_argument("--data", required=True, help="directory with trips/gps/labels CSVs")
    p.add_argument("--ratio", type=float, help="train fraction override")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="build normalized feature tensors per split")
    common(p)
    p.add_argument("--data", required=True, help="ingest output directory")
    p.add_argument("--t-steps", dest="t_steps", type=lambda v: v if v == "max" else int(v),
                   help="resampled trajectory length, or 'max' for the observed training maximum")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    common(p)
    p.add_argument("--tensor", required=True, help="training tensor directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss-scope", choices=["full", "masked"], dest="loss_scope")
    p.add_argument("--precision", choices=["f32", "f64"])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="linear probing on a frozen encoder")
    common(p)
    p.add_argument("--tensor", required=True, help="labeled training tensor directory")
    p.add_argument("--checkpoint", required=True, help="pretrained checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--label-fraction", type=float, dest="label_fraction")
    p.add_argument("--precision", choices=["f32", "f64"])
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-baselines", help="train and score the baseline models")
    common(p)
    p.add_argument("--data", required=True, help="ingest output directory")
    p.add_argument("--train-tensor", required=True, dest="train_tensor")
    p.add_argument("--test-tensor", required=True, dest="test_tensor")
    p.set_defaults(func=cmd_train_baselines)

    p = sub.add_parser("eval", help="score a trained model on a labeled tensor")
    common(p)
    p.add_argument("--tensor", required=True, help="labeled tensor directory")
    p.add_argument("--checkpoint", required=True, help="finetuned checkpoint directory")
    p.add_argument("--name", default="transformer-pretrained", help="model row name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-bike probabilities and statuses")
    common(p)
    p.add_argument("--tensor", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render the comparison table from report rows")
    common(p)
    p.add_argument("--rows", nargs="+", required=True, help="JSONL report row files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage in order")
    common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CheckpointError, DataFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except training.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
