"""Manifest-to-artifacts glue shared by the CLI and the experiment scripts."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import config as runconfig
from . import dataio
from .dataio import DataError, Task
from .features import FeatureConfig, FeatureSet, Normalizer, featurize
from .model import AudronModel
from .traineval import (MetricsReport, TrainHistory, TrainResult, ablate, ablation_csv, evaluate, load_bundle,
                        save_bundle, train)

log = logging.getLogger(__name__)


@dataclass
class Splits:
    train: FeatureSet
    val: FeatureSet
    norm: Normalizer
    labels: tuple


def load_split(manifest: dataio.DatasetManifest, root: Path, split: str, feat_cfg: FeatureConfig) -> tuple:
    rows = manifest.split(split)
    if not rows:
        raise DataError(f"manifest has no {split!r} rows")
    index = {label: i for i, label in enumerate(manifest.task.labels)}
    waves = [dataio.load_clip(root / r.path, r.label, feat_cfg.sample_rate_hz, feat_cfg.clip_samples).samples
             for r in rows]
    return waves, [index[r.label] for r in rows]


def prepare(manifest_path, task: Optional[Task], feat_cfg: FeatureConfig,
            norm: Optional[Normalizer] = None) -> Splits:
    """Featurize both splits; the normalizer is fitted on the train split unless given."""
    manifest_path = Path(manifest_path)
    manifest = dataio.load_manifest(manifest_path, task)
    root = manifest_path.parent
    tw, tl = load_split(manifest, root, "train", feat_cfg)
    train_set, norm = featurize(tw, tl, feat_cfg, norm)
    vw, vl = load_split(manifest, root, "val", feat_cfg)
    val_set, _ = featurize(vw, vl, feat_cfg, norm)
    return Splits(train_set, val_set, norm, manifest.task.labels)


def run_train(splits: Splits, cfg: runconfig.RunConfig, out_dir, branches: Optional[tuple] = None) -> TrainResult:
    """Train, then write history.csv, best.ckpt/.cfg, metrics.csv and confusion.txt under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = AudronModel(cfg.model_config(len(splits.labels), branches))
    result = train(model, splits.train, splits.val, cfg.train)
    (out / "history.csv").write_text(result.history.to_csv(), encoding="utf-8")
    save_bundle(out / "best.ckpt", model, cfg.feature_config(), splits.norm, splits.labels, result.best_state)
    write_metrics(evaluate(model, splits.val, splits.labels, cfg.train.batch_size), out)
    return result


def write_metrics(report: MetricsReport, out_dir) -> None:
    out = Path(out_dir)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "confusion.txt").write_text(report.confusion_text(), encoding="utf-8")


def run_eval(manifest_path, checkpoint_path, out_dir, split: str = "val") -> MetricsReport:
    model, feat_cfg, norm, labels = load_bundle(checkpoint_path)
    manifest_path = Path(manifest_path)
    manifest = dataio.load_manifest(manifest_path)
    if labels and tuple(manifest.task.labels) != tuple(labels):
        raise DataError(f"manifest labels {manifest.task.labels} differ from checkpoint labels {labels}")
    waves, idx = load_split(manifest, manifest_path.parent, split, feat_cfg)
    data, _ = featurize(waves, idx, feat_cfg, norm)
    report = evaluate(model, data, tuple(manifest.task.labels))
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    write_metrics(report, out_dir)
    return report


def run_ablation(splits: Splits, cfg: runconfig.RunConfig, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = cfg.model_config(len(splits.labels))

    def progress(row):
        log.info("ablation %s: acc %.4f", row.title, row.report.accuracy)

    rows = ablate(base, splits.train, splits.val, cfg.train, labels=splits.labels, on_row=progress)
    (out / "ablation.csv").write_text(ablation_csv(rows), encoding="utf-8")
    return rows


def file_digests(root) -> dict:
    """sha256 of every file under ``root`` keyed by relative path."""
    root = Path(root)
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def accuracy_of(history_csv) -> float:
    hist = TrainHistory.from_csv(Path(history_csv).read_text(encoding="utf-8"))
    return hist.best.val_acc

