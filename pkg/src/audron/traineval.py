"""Training recipe (AdamW, plateau LR schedule, early stopping), metrics and the ablation harness."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .features import FeatureConfig, FeatureSet, Normalizer
from .model import BRANCHES, AudronModel, ForwardOutput, ModelConfig
from .rng import generator
from .tensor import NumericError, Tensor, backward, checkpoint, no_grad, ops

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 50
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    early_stop_patience: int = 10
    recon_weight: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.recon_weight < 0:
            raise ValueError("recon_weight must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


# --- loss / optimizer / schedule ----------------------------------------------

def combined_loss(output: ForwardOutput, labels: np.ndarray, target: Optional[np.ndarray],
                  recon_weight: float = 0.1) -> Tensor:
    """Cross-entropy on logits plus recon_weight * MSE(reconstruction, target)."""
    labels = np.asarray(labels)
    k = output.logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    loss = ops.cross_entropy(output.logits, labels)
    if output.reconstruction is not None and recon_weight > 0:
        loss = ops.add(loss, ops.scale(ops.mse_loss(output.reconstruction, target), recon_weight))
    return loss


class AdamW:
    """Adam with decoupled weight decay (decay applied to every parameter)."""

    def __init__(self, params: Sequence, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            p.data *= 1 - self.lr * self.weight_decay
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class PlateauSchedule:
    """Tracks the best validation accuracy; multiplies lr by ``factor`` after ``patience``
    consecutive non-improving epochs and signals a stop after ``stop_patience`` of them."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5, stop_patience: int = 10):
        self.lr = lr
        self.patience, self.factor, self.stop_patience = patience, factor, stop_patience
        self.best = -np.inf
        self.since_reduce = 0
        self.since_best = 0

    def update(self, metric: float) -> bool:
        """Feed one epoch's metric; returns True if it is a new best."""
        if metric > self.best:
            self.best = metric
            self.since_reduce = self.since_best = 0
            return True
        self.since_reduce += 1
        self.since_best += 1
        if self.since_reduce >= self.patience:
            self.lr *= self.factor
            self.since_reduce = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.stop_patience


# --- history --------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


def select_best_epoch(records: Sequence[EpochRecord]) -> int:
    """Epoch number with the highest val accuracy; earliest wins ties."""
    if not records:
        raise ValueError("empty history")
    best = max(r.val_acc for r in records)
    return next(r.epoch for r in records if r.val_acc == best)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return select_best_epoch(self.records)

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc), repr(r.lr)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                float(r["val_loss"]), float(r["val_acc"]), float(r["lr"])) for r in rows])


# --- metrics --------------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    excluded: list = field(default_factory=list)
    labels: tuple = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name in ("accuracy", "precision", "recall", "f1"):
            w.writerow([name, repr(float(getattr(self, name)))])
        w.writerow(["samples", int(self.confusion.sum())])
        for i, label in enumerate(self.labels or range(len(self.confusion))):
            w.writerow([f"precision[{label}]", repr(float(self.per_class_precision[i]))])
            w.writerow([f"recall[{label}]", repr(float(self.per_class_recall[i]))])
            w.writerow([f"f1[{label}]", repr(float(self.per_class_f1[i]))])
        if self.excluded:
            w.writerow(["excluded_classes", ";".join(map(str, self.excluded))])
        return buf.getvalue()

    def confusion_text(self) -> str:
        names = [str(x) for x in (self.labels or range(len(self.confusion)))]
        width = max(6, max(len(n) for n in names), len(str(int(self.confusion.max(initial=0)))))
        lines = ["rows = true class, columns = predicted class",
                 " " * width + " " + " ".join(n.rjust(width) for n in names)]
        for name, row in zip(names, self.confusion):
            lines.append(name.rjust(width) + " " + " ".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth), np.asarray(pred)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, labels: tuple = ()) -> MetricsReport:
    """Accuracy plus macro precision/recall/F1; 0/0 counts as 0; classes absent from
    both truth and predictions are left out of the macro averages."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    tp = np.diag(cm).astype(float)
    pred_count = cm.sum(axis=0).astype(float)
    true_count = cm.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_count > 0, tp / pred_count, 0.0)
        recall = np.where(true_count > 0, tp / true_count, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    present = (pred_count + true_count) > 0
    excluded = [labels[i] if labels else i for i in np.flatnonzero(~present)]
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=float(precision[present].mean()),
        recall=float(recall[present].mean()),
        f1=float(f1[present].mean()),
        confusion=cm,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        excluded=excluded,
        labels=tuple(labels),
    )


def predict(model: AudronModel, data: FeatureSet, batch_size: int = 16) -> tuple:
    """Eval-mode logits and mean combined loss over ``data`` in its stored order."""
    was_training = model.training
    model.eval()
    logits = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            out = model(data.batch(np.arange(start, min(start + batch_size, len(data)))))
            logits.append(out.logits.data)
    model.train(was_training)
    return np.concatenate(logits)


def _eval_pass(model: AudronModel, data: FeatureSet, batch_size: int, recon_weight: float) -> tuple:
    model.eval()
    total_loss = 0.0
    preds = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            batch = data.batch(np.arange(start, min(start + batch_size, len(data))))
            out = model(batch)
            total_loss += combined_loss(out, batch.labels, batch.target, recon_weight).item() * len(batch)
            preds.append(out.logits.data.argmax(axis=1))
    preds = np.concatenate(preds)
    return total_loss / len(data), float((preds == data.labels).mean()), preds


def evaluate(model: AudronModel, data: FeatureSet, labels: tuple = (), batch_size: int = 16) -> MetricsReport:
    if len(data) == 0:
        raise DataError("cannot evaluate an empty dataset")
    preds = predict(model, data, batch_size).argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(data.labels, preds, model.n_classes), labels)


# --- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    history: TrainHistory
    best_state: dict
    seconds: float = 0.0


def train(model: AudronModel, train_set: FeatureSet, val_set: FeatureSet, config: TrainConfig = TrainConfig(),
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Fit with AdamW; keeps the state with the highest val accuracy and loads it back at the end."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("train and validation splits must be non-empty")
    started = time.perf_counter()
    params = model.parameters()
    opt = AdamW(params, config.lr, (config.beta1, config.beta2), config.adam_eps, config.weight_decay)
    sched = PlateauSchedule(config.lr, config.plateau_patience, config.plateau_factor, config.early_stop_patience)
    history = TrainHistory()
    best_state = model.state_dict()
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        lr = sched.lr
        opt.lr = lr
        order = generator(config.seed, 7919, epoch).permutation(n)
        model.train()
        loss_sum, correct = 0.0, 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = train_set.batch(order[start : start + config.batch_size])
            try:
                out = model(batch)
                loss = combined_loss(out, batch.labels, batch.target, config.recon_weight)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {bi}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"epoch {epoch} batch {bi}: loss is {value}")
            model.zero_grad()
            backward(loss)
            opt.step()
            loss_sum += value * len(batch)
            correct += int((out.logits.data.argmax(axis=1) == batch.labels).sum())
        val_loss, val_acc, _ = _eval_pass(model, val_set, config.batch_size, config.recon_weight)
        rec = EpochRecord(epoch, loss_sum / n, correct / n, val_loss, val_acc, lr)
        history.records.append(rec)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.2e",
                 epoch, rec.train_loss, rec.train_acc, val_loss, val_acc, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if sched.update(val_acc):
            best_state = model.state_dict()
        if sched.should_stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(history, best_state, time.perf_counter() - started)


def fit_steps(model: AudronModel, data: FeatureSet, config: TrainConfig, max_steps: int,
              stop_at_accuracy: Optional[float] = 1.0) -> tuple:
    """Full-batch steps on a small set; returns (steps taken, eval-mode accuracy)."""
    opt = AdamW(model.parameters(), config.lr, (config.beta1, config.beta2), config.adam_eps, config.weight_decay)
    batch = data.batch(np.arange(len(data)))
    acc = 0.0
    for step in range(1, max_steps + 1):
        model.train()
        loss = combined_loss(model(batch), batch.labels, batch.target, config.recon_weight)
        model.zero_grad()
        backward(loss)
        opt.step()
        _, acc, _ = _eval_pass(model, data, config.batch_size, config.recon_weight)
        if stop_at_accuracy is not None and acc >= stop_at_accuracy:
            return step, acc
    return max_steps, acc


# --- model bundles ----------------------------------------------------------------

def _cfg_path(ckpt_path) -> Path:
    return Path(ckpt_path).with_suffix(".cfg")


def model_config_text(model_cfg: ModelConfig, feat_cfg: FeatureConfig, norm: Normalizer, labels: tuple) -> str:
    dims = model_cfg.dims
    lines = {
        "n_classes": model_cfg.n_classes,
        "labels": ",".join(labels),
        "branches": ",".join(model_cfg.branches),
        "profile": model_cfg.profile,
        "dropout": repr(model_cfg.dropout),
        "seed": model_cfg.seed,
        "mfcc_out": dims.mfcc_out,
        "stft_out": dims.stft_out,
        "rnn_out": dims.rnn_out,
        "ae_embed": dims.ae_embed,
        "fused": model_cfg.fused_dim,
        "sample_rate_hz": feat_cfg.sample_rate_hz,
        "clip_samples": feat_cfg.clip_samples,
        "n_fft": feat_cfg.stft.n_fft,
        "hop": feat_cfg.stft.hop,
        "window": feat_cfg.stft.window,
        "n_mels": feat_cfg.n_mels,
        "f_min_hz": repr(feat_cfg.f_min_hz),
        "f_max_hz": repr(feat_cfg.f_max_hz),
        "ae_pool": feat_cfg.ae_pool,
        "spec_mean": repr(norm.spec_mean),
        "spec_std": repr(norm.spec_std),
        "mfcc_mean": ",".join(repr(float(v)) for v in norm.mfcc_mean),
        "mfcc_std": ",".join(repr(float(v)) for v in norm.mfcc_std),
    }
    return "".join(f"{k}={v}\n" for k, v in lines.items())


def parse_model_config(text: str) -> tuple:
    from .dsp import StftConfig

    kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip() and not line.startswith("#"))
    model_cfg = ModelConfig(n_classes=int(kv["n_classes"]), branches=tuple(kv["branches"].split(",")),
                            profile=kv["profile"], dropout=float(kv["dropout"]), seed=int(kv["seed"]))
    feat_cfg = FeatureConfig(sample_rate_hz=int(kv["sample_rate_hz"]), clip_samples=int(kv["clip_samples"]),
                             stft=StftConfig(int(kv["n_fft"]), int(kv["hop"]), kv["window"]),
                             n_mels=int(kv["n_mels"]), f_min_hz=float(kv["f_min_hz"]),
                             f_max_hz=float(kv["f_max_hz"]), ae_pool=int(kv["ae_pool"]))
    norm = Normalizer(float(kv["spec_mean"]), float(kv["spec_std"]),
                      np.array([float(v) for v in kv["mfcc_mean"].split(",")]),
                      np.array([float(v) for v in kv["mfcc_std"].split(",")]))
    labels = tuple(kv["labels"].split(",")) if kv.get("labels") else ()
    return model_cfg, feat_cfg, norm, labels


def save_bundle(path, model: AudronModel, feat_cfg: FeatureConfig, norm: Normalizer, labels: tuple,
                state: Optional[dict] = None) -> None:
    """Checkpoint plus a sibling ``.cfg`` that makes it self-describing."""
    checkpoint.save(state if state is not None else model.state_dict(), path)
    _cfg_path(path).write_text(model_config_text(model.config, feat_cfg, norm, labels), encoding="utf-8")


def load_bundle(path) -> tuple:
    model_cfg, feat_cfg, norm, labels = parse_model_config(_cfg_path(path).read_text(encoding="utf-8"))
    model = AudronModel(model_cfg)
    model.load_state_dict(checkpoint.load(path))
    model.eval()
    return model, feat_cfg, norm, labels


# --- ablation -------------------------------------------------------------------

BRANCH_TITLES = {"mfcc": "MFCC", "stft": "STFT-CNN", "rnn": "RNN", "ae": "Autoencoder"}


def ablation_configs() -> list:
    """The four three-branch configurations followed by the full model."""
    return [tuple(b for b in BRANCHES if b != drop) for drop in BRANCHES] + [BRANCHES]


def config_title(branches: Sequence[str]) -> str:
    return " + ".join(BRANCH_TITLES[b] for b in BRANCHES if b in branches)


@dataclass
class AblationRow:
    branches: tuple
    report: MetricsReport
    history: TrainHistory
    drop: float = 0.0

    @property
    def title(self) -> str:
        return config_title(self.branches)


def ablate(base: ModelConfig, train_set: FeatureSet, val_set: FeatureSet, train_config: TrainConfig,
           configs: Optional[Sequence[Sequence[str]]] = None, labels: tuple = (),
           on_row: Optional[Callable[[AblationRow], None]] = None) -> list:
    """Train each branch subset with identical seed/data/recipe; drop = (full - config) accuracy in points."""
    configs = [tuple(c) for c in (configs if configs is not None else ablation_configs())]
    for c in configs:
        if len(set(c)) < 3 or not set(c) <= set(BRANCHES):
            raise ValueError(f"ablation configs need at least 3 known branches, got {c}")
    full = tuple(BRANCHES)
    if full not in [tuple(b for b in BRANCHES if b in c) for c in configs]:
        configs.append(full)
    rows = []
    for branches in configs:
        cfg = ModelConfig(n_classes=base.n_classes, branches=branches, profile=base.profile,
                          dropout=base.dropout, seed=base.seed)
        model = AudronModel(cfg)
        result = train(model, train_set, val_set, train_config)
        row = AblationRow(cfg.branches, evaluate(model, val_set, labels, train_config.batch_size), result.history)
        rows.append(row)
        if on_row is not None:
            on_row(row)
    ref = next(r for r in rows if r.branches == full).report.accuracy
    for r in rows:
        r.drop = (ref - r.report.accuracy) * 100.0
    return rows


ABLATION_FIELDS = ("configuration", "branches", "accuracy", "precision", "recall", "f1", "perf_drop")


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_FIELDS)
    for r in rows:
        rep = r.report
        w.writerow([r.title, ",".join(r.branches), repr(rep.accuracy), repr(rep.precision), repr(rep.recall),
                    repr(rep.f1), repr(r.drop)])
    return buf.getvalue()
