"""Command-line orchestration of the three-stage pipeline.

Every invocation works inside one run directory and writes nothing outside
it. Stages communicate only through files in that directory, so any stage can
be re-run on its own from the upstream artifacts:

    config.resolved.yaml         echo of the fully resolved configuration
    dataset/                     cached feature matrices for the dataset
    pretrain.ckpt                encoder trunk + projector after pretraining
    pseudolabels.txt             one cluster index per train item
    pseudolabels.manifest.txt    source checkpoint hash and diagnostics
    distill.ckpt                 distilled trunk + block heads + classifier
    metrics.jsonl                append-only per-epoch metrics
    eval.txt                     final linear-probe report

Stage seeds derive from the master seed by hashing "<seed>/<stage>", so
re-running a single stage uses the same randomness it saw inside `pipeline`.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import (Provenance, checkpoint_hash, encoder_from_checkpoint,
                         load_checkpoint, save_checkpoint)
from .config import (PROFILES, ExperimentConfig, config_hash, load_config,
                     write_resolved)
from .datasets import (LabeledDataset, generate_synthetic_dataset,
                       load_dataset_cache, load_wav_directory,
                       save_dataset_cache)
from .distill import PseudoLabels, generate_pseudo_labels, run_distillation
from .errors import (ConfigError, ContractError, DegenerateInputError,
                     FormatError, IntegrityError, StateError)
from .metrics import MetricsRecord, append_metrics, read_metrics, render_report
from .pretrain import run_pretraining
from .probe import evaluate, extract_frozen_features, train_linear_probe
from .seeding import derive_seed

_HANDLED_ERRORS = (ContractError, ConfigError, FormatError, IntegrityError,
                   StateError, DegenerateInputError, FileNotFoundError)


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.resolved.yaml"

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def pretrain_ckpt(self) -> Path:
        return self.root / "pretrain.ckpt"

    @property
    def pseudolabels(self) -> Path:
        return self.root / "pseudolabels.txt"

    @property
    def pseudolabel_manifest(self) -> Path:
        return self.root / "pseudolabels.manifest.txt"

    @property
    def distill_ckpt(self) -> Path:
        return self.root / "distill.ckpt"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.jsonl"

    @property
    def eval_report(self) -> Path:
        return self.root / "eval.txt"


def _require(path: Path, what: str, produced_by: str) -> Path:
    if not path.exists():
        raise StateError(
            f"missing artifact: {what} at {path}; run the {produced_by} stage first")
    return path


def _dataset_for(cfg: ExperimentConfig, paths: RunPaths) -> LabeledDataset:
    """Load the run's cached dataset, building and caching it on first use."""
    manifest = paths.dataset_dir / "manifest.txt"
    if manifest.exists():
        return load_dataset_cache(paths.dataset_dir)
    if cfg.dataset.kind == "synthetic":
        dataset = generate_synthetic_dataset(
            cfg.dataset.classes, cfg.dataset.train_per_class,
            derive_seed(cfg.seed, "data"),
            test_per_class=cfg.dataset.test_per_class)
    else:
        dataset = load_wav_directory(cfg.dataset.path)
    paths.dataset_dir.mkdir(parents=True, exist_ok=True)
    save_dataset_cache(dataset, paths.dataset_dir)
    return dataset


def _stage_pretrain(cfg: ExperimentConfig, paths: RunPaths) -> None:
    dataset = _dataset_for(cfg, paths)
    result = run_pretraining(cfg.pretrain, dataset, cfg.encoder_config(),
                             derive_seed(cfg.seed, "pretrain"))
    for rec in result.history:
        sizes = rec.cluster_size_hist
        append_metrics(paths.metrics, MetricsRecord(
            stage="pretrain", epoch=rec.epoch,
            values={"loss_mean": rec.loss_mean,
                    "kmeans_objective": rec.kmeans_objective,
                    "cluster_size_min": float(min(sizes)),
                    "cluster_size_max": float(max(sizes))}))
    digest = save_checkpoint(
        result.model,
        Provenance("pretrain", cfg.pretrain.epochs, config_hash(cfg), cfg.seed),
        paths.pretrain_ckpt)
    last = result.history[-1].loss_mean if result.history else float("nan")
    print(f"pretrain: {cfg.pretrain.epochs} epochs, final mean loss "
          f"{last:.4f}, checkpoint {paths.pretrain_ckpt.name} ({digest[:12]})")


def _stage_pseudolabel(cfg: ExperimentConfig, paths: RunPaths) -> None:
    ckpt_path = _require(paths.pretrain_ckpt, "pretraining checkpoint", "pretrain")
    source_hash = checkpoint_hash(ckpt_path)
    model = encoder_from_checkpoint(load_checkpoint(ckpt_path), seed=0)
    dataset = _dataset_for(cfg, paths)
    pseudo = generate_pseudo_labels(model, dataset, cfg.dataset.classes,
                                    derive_seed(cfg.seed, "pseudolabel"))
    with open(paths.pseudolabels, "w", encoding="utf-8") as fh:
        for label in pseudo.labels:
            fh.write(f"{int(label)}\n")
    with open(paths.pseudolabel_manifest, "w", encoding="utf-8") as fh:
        fh.write(f"source_checkpoint={source_hash}\n")
        fh.write(f"count={pseudo.labels.shape[0]}\n")
        fh.write(f"classes={cfg.dataset.classes}\n")
        fh.write(f"purity={'unknown' if pseudo.purity is None else repr(pseudo.purity)}\n")
    values = {"count": float(pseudo.labels.shape[0])}
    if pseudo.purity is not None:
        values["purity"] = pseudo.purity
    append_metrics(paths.metrics, MetricsRecord("pseudolabel", 0, values))
    shown = "n/a" if pseudo.purity is None else f"{pseudo.purity:.4f}"
    print(f"pseudolabel: {pseudo.labels.shape[0]} labels, purity {shown}")


def _read_pseudolabels(paths: RunPaths, classes: int) -> PseudoLabels:
    path = _require(paths.pseudolabels, "pseudo-label file", "pseudolabel")
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                value = int(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: not an integer") from exc
            if not 0 <= value < classes:
                raise FormatError(
                    f"{path}:{lineno}: label {value} outside [0, {classes})")
            labels.append(value)
    return PseudoLabels(labels=np.asarray(labels, dtype=np.int64))


def _stage_distill(cfg: ExperimentConfig, paths: RunPaths) -> None:
    pseudo = _read_pseudolabels(paths, cfg.dataset.classes)
    dataset = _dataset_for(cfg, paths)
    result = run_distillation(cfg.distill, dataset, pseudo, cfg.encoder_config(),
                              derive_seed(cfg.seed, "distill"))
    for rec in result.history:
        append_metrics(paths.metrics, MetricsRecord("distill", rec.epoch, rec.means))
    digest = save_checkpoint(
        result.model,
        Provenance("distill", cfg.distill.epochs, config_hash(cfg), cfg.seed),
        paths.distill_ckpt)
    last = result.history[-1].means.get("loss_all") if result.history else float("nan")
    print(f"distill: {cfg.distill.epochs} epochs, final mean loss "
          f"{last:.4f}, checkpoint {paths.distill_ckpt.name} ({digest[:12]})")


def _stage_eval(cfg: ExperimentConfig, paths: RunPaths) -> None:
    ckpt_path = _require(paths.distill_ckpt, "distillation checkpoint", "distill")
    encoder_id = checkpoint_hash(ckpt_path)
    model = encoder_from_checkpoint(load_checkpoint(ckpt_path), seed=0)
    dataset = _dataset_for(cfg, paths)
    train = dataset.subset("train")
    test = dataset.subset("test")
    if len(test.items) == 0:
        raise ContractError("dataset has no test split to evaluate on")
    if any(item.label is None for item in train.items + test.items):
        raise ContractError("linear evaluation requires labeled data")

    train_feats = extract_frozen_features(model, train)
    test_feats = extract_frozen_features(model, test)
    probe = train_linear_probe(train_feats, np.asarray(train.labels()),
                               cfg.probe, derive_seed(cfg.seed, "probe"),
                               class_count=cfg.dataset.classes)
    report = evaluate(probe, test_feats, np.asarray(test.labels()),
                      encoder_id=encoder_id, cfg=cfg.probe)
    with open(paths.eval_report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    values = {"accuracy": report.accuracy, "n_test": float(report.n_test)}
    for cls, acc in report.per_class.items():
        values[f"class_{cls}_accuracy"] = acc
    append_metrics(paths.metrics, MetricsRecord("eval", cfg.probe.epochs, values))
    print(f"eval: test accuracy {report.accuracy:.4f} on {report.n_test} items")


def _stage_report(paths: RunPaths) -> None:
    path = _require(paths.metrics, "metrics log", "pipeline")
    sys.stdout.write(render_report(read_metrics(path)))


_STAGES = {
    "pretrain": [_stage_pretrain],
    "pseudolabel": [_stage_pseudolabel],
    "distill": [_stage_distill],
    "eval": [_stage_eval],
    "pipeline": [_stage_pretrain, _stage_pseudolabel, _stage_distill, _stage_eval],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterdistill",
        description="Clustering-pretrained, self-distilled audio encoder pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "pretrain": "cluster-driven self-supervised pretraining",
        "pseudolabel": "cluster pretrained features into per-class pseudo-labels",
        "distill": "train a fresh encoder under the self-distillation objective",
        "eval": "linear probe on frozen student features",
        "pipeline": "run all four stages in order",
        "report": "render the metrics log as a table",
    }
    for name, help_text in descriptions.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="YAML config file")
        cmd.add_argument("--profile", choices=PROFILES, default=None,
                         help="hyperparameter profile (overrides the file)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="master seed (overrides the file)")
        cmd.add_argument("--run-dir", required=True,
                         help="directory for all artifacts of this run")
        cmd.add_argument("--data-dir", default=None,
                         help="directory of WAVs; overrides the dataset section")
    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    paths = RunPaths(root=Path(args.run_dir))
    try:
        if args.command == "report":
            _stage_report(paths)
            return 0
        cfg = load_config(args.config, profile=args.profile, seed=args.seed)
        if args.data_dir is not None:
            cfg = replace(cfg, dataset=replace(cfg.dataset, kind="wav_dir",
                                               path=args.data_dir))
        paths.root.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, paths.config)
        for stage in _STAGES[args.command]:
            stage(cfg, paths)
    except _HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
