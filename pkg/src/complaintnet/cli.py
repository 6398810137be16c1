"""Operator entry point: dataset generation, training, evaluation, ablations.

Configuration is a JSON document with four sections (model, train, synth,
paths); every key can be overridden on the command line with repeated
``--set section.key=value`` flags. Unknown keys are rejected and missing
required keys are reported together.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .classifier import NonFiniteError, predict_labels
from .data_model import (
    AspectCatalog,
    FormatError,
    decode_label,
    load_manifest,
    read_embeddings,
)
from .model import (
    ABLATION_CONDITIONS,
    ComplaintModel,
    ModelConfig,
    ablation_config,
    load_checkpoint,
)
from .synthetic import SynthSpec, generate
from .trainer import NumericalAbortError, TrainConfig, gradcheck, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CONFIG_ECHO_NAME = "config.echo"
REPORT_NAME = "report.csv"
PREDS_NAME = "preds.jsonl"

DEFAULT_ABLATION_SEEDS = (101, 102, 103)


class UsageError(Exception):
    """Bad flags or bad configuration; maps to exit code 1."""


def default_config() -> dict:
    return {
        "model": {
            "dim": 512,
            "isec_heads": 8,
            "classifier_heads": 8,
            "classifier_blocks": 16,
            "dropout": 0.2,
            "use_isec": True,
            "modality": "both",
        },
        "train": {
            "lr_isec": 1e-5,
            "lr_classifier": 1e-6,
            "batch_size": 8,
            "epochs": 100,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "seed": 0,
            "clip_norm": None,
        },
        "synth": {
            "num_samples": 64,
            "dim": 512,
            "max_chunks": 8,
            "seed": 0,
            "signal_strength": 3.0,
            "modality_split": 0.5,
            "train_fraction": 0.8,
            "state_weights": None,
        },
        "paths": {
            "manifest": None,
            "out_dir": None,
            "checkpoint": None,
            "embeddings": None,
        },
    }


class RunConfig:
    """Resolved configuration: defaults <- config file <- --set overrides."""

    def __init__(self, doc: dict):
        self.doc = doc

    @classmethod
    def resolve(cls, config_path: Optional[str], overrides: Sequence[str]) -> "RunConfig":
        doc = default_config()
        problems: list[str] = []
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise UsageError(f"config file not found: {path}")
            try:
                loaded = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
            for section, entries in loaded.items():
                if section not in doc:
                    problems.append(f"unknown config section {section!r}")
                    continue
                if not isinstance(entries, dict):
                    problems.append(f"config section {section!r} must be an object")
                    continue
                for key, value in entries.items():
                    if key not in doc[section]:
                        problems.append(f"unknown config key {section}.{key}")
                    else:
                        doc[section][key] = value
        for item in overrides:
            if "=" not in item:
                problems.append(f"--set needs section.key=value, got {item!r}")
                continue
            dotted, _, raw = item.partition("=")
            parts = dotted.split(".")
            if len(parts) != 2 or parts[0] not in doc or parts[1] not in doc[parts[0]]:
                problems.append(f"unknown config key {dotted!r}")
                continue
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw  # bare strings (paths etc.) pass through
            doc[parts[0]][parts[1]] = value
        if problems:
            raise UsageError("; ".join(problems))
        return cls(doc)

    def require(self, *dotted_keys: str) -> None:
        missing = [k for k in dotted_keys if self.get(k) is None]
        if missing:
            raise UsageError(
                "missing required config keys (set in the config file or via --set/flags): "
                + ", ".join(missing)
            )

    def get(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.doc[section][key]

    def set(self, dotted: str, value) -> None:
        section, _, key = dotted.partition(".")
        self.doc[section][key] = value

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.doc["model"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.doc["train"])

    def synth_spec(self) -> SynthSpec:
        doc = dict(self.doc["synth"])
        if doc.get("state_weights") is not None:
            doc["state_weights"] = tuple(doc["state_weights"])
        return SynthSpec(**doc)

    def echo(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_ECHO_NAME).write_text(json.dumps(self.doc, indent=2) + "\n")


def _write_preds(pairs, path: Path) -> None:
    with open(path, "w") as fh:
        for review_id, gold, pred in pairs:
            fh.write(
                json.dumps(
                    {"review_id": review_id, "gold": list(gold.states), "pred": list(pred.states)}
                )
                + "\n"
            )


def _print_report(report: metrics.EvalReport) -> None:
    print(f"{'aspect':<16} {'task':<5} {'macro_f1':>9} {'micro_f1':>9} {'hamming':>8}")
    for row in report.rows:
        print(
            f"{row.aspect:<16} {row.task:<5} {row.macro_f1:>9.4f} {row.micro_f1:>9.4f} "
            f"{row.hamming:>8.4f}"
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(cfg: RunConfig) -> int:
    cfg.require("paths.out_dir")
    out_dir = Path(cfg.get("paths.out_dir"))
    manifest = generate(cfg.synth_spec(), out_dir)
    cfg.echo(out_dir)
    counts = manifest.split_counts()
    print(
        f"generated {len(manifest.samples)} samples "
        f"({counts['train']} train / {counts['test']} test) in {out_dir}"
    )
    print(f"manifest: {out_dir / 'manifest.json'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("paths.manifest", "paths.out_dir")
    manifest = load_manifest(cfg.get("paths.manifest"))
    out_dir = Path(cfg.get("paths.out_dir"))
    model = ComplaintModel(cfg.model_config(), seed=cfg.get("train.seed"))
    cfg.echo(out_dir)
    result = train(manifest, model, cfg.train_config(), out_dir=out_dir)
    final = result.log[-1]
    print(f"trained {len(result.log)} epochs; final train loss {final.train_loss:.6f}")
    if final.test_exact_match is not None:
        print(
            f"test: hamming {final.test_hamming:.4f}, exact match {final.test_exact_match:.4f}, "
            f"mean AC micro-F1 {final.test_ac_micro_f1:.4f}"
        )
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, split: str) -> int:
    cfg.require("paths.manifest", "paths.checkpoint", "paths.out_dir")
    manifest = load_manifest(cfg.get("paths.manifest"))
    out_dir = Path(cfg.get("paths.out_dir"))
    report, pairs = metrics.evaluate(cfg.get("paths.checkpoint"), manifest, split=split)
    cfg.echo(out_dir)
    report.to_csv(out_dir / REPORT_NAME)
    _write_preds(pairs, out_dir / PREDS_NAME)
    _print_report(report)
    print(f"report: {out_dir / REPORT_NAME}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    cfg.require("paths.checkpoint", "paths.embeddings")
    model = load_checkpoint(cfg.get("paths.checkpoint"))
    review = read_embeddings(cfg.get("paths.embeddings"))
    text = review.text_sequence()
    image = review.image_sequence()
    logits = model.forward_sample(text.data, image.data, text.mask, training=False)
    pred = predict_labels(logits)
    catalog = AspectCatalog()
    print(f"review {review.review_id}: predicted states {list(pred.states)}")
    listing = decode_label(pred, catalog)
    if not listing:
        print("no aspects identified")
    for name, is_complaint in listing:
        print(f"  {name}: {'complaint' if is_complaint else 'non-complaint'}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    model = ComplaintModel(cfg.model_config(), seed=cfg.get("train.seed"))
    report = gradcheck(model, seed=cfg.get("train.seed"))
    for group, err in sorted(report.per_group.items()):
        print(f"group {group}: max relative error {err:.3e}")
    if report.passed:
        print(f"gradcheck PASS (tolerance {report.tolerance:g})")
        return EXIT_OK
    print(f"gradcheck FAIL (tolerance {report.tolerance:g}); failing parameters:")
    for name in report.failures():
        print(f"  {name}: {report.per_param[name]:.3e}")
    return EXIT_NUMERIC


def run_ablation(
    cfg: RunConfig, seeds: Sequence[int], out_dir: Path
) -> dict[str, dict[int, metrics.EvalReport]]:
    """Train and evaluate every ablation condition for every seed."""
    manifest = load_manifest(cfg.get("paths.manifest"))
    base_model_cfg = cfg.model_config()
    base_train_cfg = cfg.train_config()
    results: dict[str, dict[int, metrics.EvalReport]] = {}
    for condition in ABLATION_CONDITIONS:
        results[condition] = {}
        for seed in seeds:
            run_dir = out_dir / condition / f"seed{seed}"
            model_cfg = ablation_config(base_model_cfg, condition)
            train_cfg = replace(base_train_cfg, seed=seed)
            model = ComplaintModel(model_cfg, seed=seed)
            result = train(manifest, model, train_cfg, out_dir=run_dir)
            report, pairs = metrics.evaluate(result.checkpoint_path, manifest, split="test")
            report.to_csv(run_dir / REPORT_NAME)
            _write_preds(pairs, run_dir / PREDS_NAME)
            results[condition][seed] = report
            logger.info(
                "ablation %s seed %d: mean AC micro-F1 %.4f",
                condition,
                seed,
                report.mean_ac_micro_f1(),
            )
    return results


def ablation_summary(results: dict[str, dict[int, metrics.EvalReport]]) -> list[dict]:
    rows = []
    for condition, by_seed in results.items():
        ac = [r.mean_ac_micro_f1() for r in by_seed.values()]
        ham = [r.aggregate_hamming() for r in by_seed.values()]
        rows.append(
            {
                "condition": condition,
                "seeds": len(by_seed),
                "mean_ac_micro_f1": float(np.mean(ac)),
                "mean_hamming": float(np.mean(ham)),
            }
        )
    rows.sort(key=lambda r: -r["mean_ac_micro_f1"])
    return rows


def cmd_ablate(cfg: RunConfig, seeds: Sequence[int]) -> int:
    cfg.require("paths.manifest", "paths.out_dir")
    out_dir = Path(cfg.get("paths.out_dir"))
    cfg.echo(out_dir)
    results = run_ablation(cfg, seeds, out_dir)
    summary = ablation_summary(results)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["condition", "seeds", "mean_ac_micro_f1", "mean_hamming"]
        )
        writer.writeheader()
        writer.writerows(summary)
    print(f"{'condition':<14} {'mean AC micro-F1':>17} {'mean hamming':>13}")
    for row in summary:
        print(f"{row['condition']:<14} {row['mean_ac_micro_f1']:>17.4f} {row['mean_hamming']:>13.4f}")
    print(f"summary: {out_dir / 'ablation.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems become exit code 1, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="complaintnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config key (repeatable)",
        )

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--out", help="output directory (paths.out_dir)")

    p = sub.add_parser("train", help="train a model on a manifest")
    add_common(p)
    p.add_argument("--manifest", help="dataset manifest (paths.manifest)")
    p.add_argument("--out", help="output directory (paths.out_dir)")

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    add_common(p)
    p.add_argument("--manifest", help="dataset manifest (paths.manifest)")
    p.add_argument("--checkpoint", help="model checkpoint (paths.checkpoint)")
    p.add_argument("--out", help="output directory (paths.out_dir)")
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("predict", help="predict labels for one embedding file")
    add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint (paths.checkpoint)")
    p.add_argument("embeddings", nargs="?", help="MCEB embedding file (paths.embeddings)")

    p = sub.add_parser("ablate", help="train/evaluate the five ablation conditions")
    add_common(p)
    p.add_argument("--manifest", help="dataset manifest (paths.manifest)")
    p.add_argument("--out", help="output directory (paths.out_dir)")
    p.add_argument(
        "--seeds",
        default=",".join(str(s) for s in DEFAULT_ABLATION_SEEDS),
        help="comma-separated training seeds",
    )

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    add_common(p)
    return parser


def _flag_into_config(cfg: RunConfig, args: argparse.Namespace) -> None:
    mapping = {
        "manifest": "paths.manifest",
        "out": "paths.out_dir",
        "checkpoint": "paths.checkpoint",
        "embeddings": "paths.embeddings",
    }
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(dotted, value)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = RunConfig.resolve(args.config, args.overrides)
        _flag_into_config(cfg, args)
        if args.command == "gen":
            return cmd_gen_synthetic(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.split)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "ablate":
            try:
                seeds = [int(s) for s in str(args.seeds).split(",") if s.strip()]
            except ValueError as exc:
                raise UsageError(f"--seeds must be comma-separated integers: {args.seeds!r}") from exc
            if not seeds:
                raise UsageError("--seeds must name at least one seed")
            return cmd_ablate(cfg, seeds)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalAbortError, NonFiniteError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
