"""Adam optimizer, the training loop, and the evaluation harness.

Training is deterministic for a fixed seed: weight init, batch shuffling,
and augmentation all draw from split streams of one root Rng, so a rerun
reproduces the history CSV byte for byte.
"""
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    BandStats,
    ChannelConfig,
    assemble_channels,
    fit_band_stats,
    iter_batches,
    normalize,
)
from .losses import LossConfig, make_loss
from .metrics import aggregate_metrics, benchmark_report, confusion
from .models import Model, ModelSpec, build_model, predict_mask
from .tensor import Rng, ShapeError, Tensor

HISTORY_COLUMNS = "epoch,train_loss,val_loss,val_precision,val_recall,val_f1,val_iou"


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries where it happened."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


# ---------------------------------------------------------------------------
# Adam


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999,
              eps_adam=1e-8, t=1):
    """One Adam update over aligned lists of arrays, in place.

    `state` is a dict holding the first/second moment lists under "m"/"v";
    pass {} for a fresh optimizer and keep passing the same dict back.
    At t=1 the bias correction collapses to theta -= lr * g / (|g| + eps).
    """
    if t < 1:
        raise ValueError(f"adam_step needs t >= 1, got {t}")
    if len(params) != len(grads):
        raise ShapeError(
            f"adam_step got {len(params)} params but {len(grads)} grads"
        )
    if not state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(
                f"adam_step param {i}: shape {p.shape} vs grad {g.shape}"
            )
        m, v = state["m"][i], state["v"][i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps_adam)
    return params, state


class Adam:
    """Stateful wrapper binding adam_step to a model's Parameter list."""

    def __init__(self, parameters, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps_adam=1e-8):
        self.parameters = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_adam = eps_adam
        self.state = {}
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(
            [p.data for p in self.parameters],
            [p.grad for p in self.parameters],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps_adam,
            self.t,
        )


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class TrainConfig:
    """Everything one run needs, loadable from a single JSON file.

    The model spec rides along so `train --config run.json` is self
    contained; the monitored metric is validation F1 (the headline metric)
    and that is the only supported monitor.
    """

    model: ModelSpec
    loss: LossConfig = field(default_factory=lambda: LossConfig(kind="bce"))
    channels: ChannelConfig = field(default_factory=ChannelConfig.identity14)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 10
    monitor: str = "val_f1"
    seed: int = 0
    augment: bool = False
    checkpoint_dir: str = "checkpoints"
    lr_decay_every: int = 0  # step decay, disabled by default
    lr_decay_factor: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(
                f"betas must lie in (0,1), got {self.beta1}, {self.beta2}"
            )
        if self.eps_adam <= 0:
            raise ValueError(f"eps_adam must be > 0, got {self.eps_adam}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.monitor != "val_f1":
            raise ValueError(
                f"unsupported monitor {self.monitor!r}; only val_f1"
            )
        if self.lr_decay_every < 0:
            raise ValueError("lr_decay_every must be >= 0")
        if not (0.0 < self.lr_decay_factor <= 1.0):
            raise ValueError("lr_decay_factor must lie in (0,1]")
        if self.model.in_channels != self.channels.n_channels:
            raise ValueError(
                f"model expects {self.model.in_channels} channels but the "
                f"channel config assembles {self.channels.n_channels}"
            )

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "lr", "beta1", "beta2", "eps_adam", "batch_size", "max_epochs",
            "patience", "monitor", "seed", "augment", "checkpoint_dir",
            "lr_decay_every", "lr_decay_factor",
        )}
        d["model"] = self.model.to_dict()
        d["loss"] = self.loss.to_dict()
        d["channels"] = self.channels.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelSpec.from_dict(d.pop("model"))
        loss = LossConfig.from_dict(d.pop("loss", {"kind": "bce"}))
        raw = d.pop("channels", None)
        if raw is None:
            channels = ChannelConfig.identity14()
        elif isinstance(raw, str):
            presets = {
                "identity14": ChannelConfig.identity14,
                "paper6": ChannelConfig.paper6,
            }
            if raw not in presets:
                raise ValueError(f"unknown channel preset {raw!r}")
            channels = presets[raw]()
        else:
            channels = ChannelConfig.from_dict(raw)
        return TrainConfig(model=model, loss=loss, channels=channels, **d)

    @staticmethod
    def from_json(path: str) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            return TrainConfig.from_dict(json.load(f))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_precision: float
    val_recall: float
    val_f1: float
    val_iou: float
    seconds: float


@dataclass
class TrainHistory:
    """Per-epoch trace plus the index (1-based) of the best epoch."""

    epochs: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        # seconds are excluded so a same-seed rerun is byte-identical
        lines = [HISTORY_COLUMNS]
        for r in self.epochs:
            lines.append(
                f"{r.epoch},{r.train_loss:.6f},{r.val_loss:.6f},"
                f"{r.val_precision:.6f},{r.val_recall:.6f},"
                f"{r.val_f1:.6f},{r.val_iou:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "best_epoch": self.best_epoch,
            "epochs": [vars(r) for r in self.epochs],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Forward helpers shared by the loop and the evaluator


def _ordered(samples):
    return sorted(samples, key=lambda s: s.id)


def _forward_chunks(model, samples, channels, stats, batch_size):
    """Yield (probs, targets, chunk) over id-sorted samples, eval order."""
    ordered = _ordered(samples)
    for i in range(0, len(ordered), batch_size):
        chunk = ordered[i:i + batch_size]
        xs = []
        ys = []
        for s in chunk:
            if s.mask is None:
                raise ValueError(f"sample {s.id!r} has no mask to score against")
            x = assemble_channels(s, channels)
            if stats is not None:
                x = normalize(x, stats)
            xs.append(x.data)
            ys.append(s.mask.astype(np.float32)[None, :, :])
        x = Tensor(np.stack(xs))
        y = Tensor(np.stack(ys))
        yield model.forward(x), y, chunk


def _validate(model, samples, channels, stats, loss_fn, batch_size, threshold):
    """Loss + pooled metrics + per-patch metrics on a frozen split."""
    loss_sum = 0.0
    counts = []
    per_patch = []
    n = 0
    for probs, y, chunk in _forward_chunks(model, samples, channels, stats,
                                           batch_size):
        value, _ = loss_fn(probs, y)
        loss_sum += value * len(chunk)
        n += len(chunk)
        masks = predict_mask(probs, threshold).data
        for j, s in enumerate(chunk):
            c = confusion(masks[j, 0], y.data[j, 0])
            counts.append(c)
            per_patch.append({"id": s.id, **{k: round(v, 6) for k, v in
                                             aggregate_metrics([c]).items()}})
    metrics = aggregate_metrics(counts, "micro")
    return loss_sum / n, metrics, per_patch


def train(config: TrainConfig, splits: dict):
    """Run the loop; returns (path of the best checkpoint, TrainHistory).

    `splits` maps "train"/"validation" to PatchSample lists. Per epoch:
    shuffled batches, forward, loss, backward, one Adam step per batch;
    then validation at threshold 0.5. The checkpoint is rewritten whenever
    validation F1 improves, and the loop stops after `patience` epochs
    without improvement. Band statistics are fit on the training split only.
    """
    train_samples = splits.get("train") or []
    val_samples = splits.get("validation") or []
    if not train_samples or not val_samples:
        raise ValueError("train() needs non-empty train and validation splits")

    root = Rng(config.seed)
    model_rng = root.split()
    shuffle_rng = root.split()
    augment_rng = root.split() if config.augment else None

    model = build_model(config.model, rng=model_rng)
    stats = fit_band_stats(train_samples, config.channels)
    loss_fn = make_loss(config.loss)
    opt = Adam(model.parameters(), lr=config.lr, beta1=config.beta1,
               beta2=config.beta2, eps_adam=config.eps_adam)

    os.makedirs(config.checkpoint_dir, exist_ok=True)
    best_path = os.path.join(config.checkpoint_dir, "best.lseg")
    history = TrainHistory()
    best_f1 = -1.0
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        if config.lr_decay_every > 0:
            opt.lr = config.lr * config.lr_decay_factor ** (
                (epoch - 1) // config.lr_decay_every
            )
        loss_sum = 0.0
        seen = 0
        batches = iter_batches(
            train_samples, config.channels, config.batch_size, stats=stats,
            shuffle=True, rng=shuffle_rng, augment_rng=augment_rng,
        )
        for b, (x, y) in enumerate(batches):
            probs = model.forward(x, training=True)
            value, grad = loss_fn(probs, y)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b)
            model.zero_grad()
            model.backward(grad)
            opt.step()
            loss_sum += value * x.shape[0]
            seen += x.shape[0]

        val_loss, val_metrics, _ = _validate(
            model, val_samples, config.channels, stats, loss_fn,
            config.batch_size, threshold=0.5,
        )
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / seen,
            val_loss=val_loss,
            val_precision=val_metrics["precision"],
            val_recall=val_metrics["recall"],
            val_f1=val_metrics["f1"],
            val_iou=val_metrics["iou"],
            seconds=time.perf_counter() - started,
        )
        history.epochs.append(record)

        if record.val_f1 > best_f1:
            best_f1 = record.val_f1
            history.best_epoch = epoch
            stale = 0
            save_checkpoint(
                model, best_path,
                band_stats=stats.to_dict(),
                channels=config.channels.to_dict(),
                meta={
                    "name": config.model.arch,
                    "epoch": epoch,
                    "val_f1": record.val_f1,
                    "seed": config.seed,
                },
            )
        else:
            stale += 1
            if stale >= config.patience:
                break

    _write_history(history, config.checkpoint_dir)
    return best_path, history


def _write_history(history: TrainHistory, out_dir: str) -> None:
    with open(os.path.join(out_dir, "history.csv"), "w", encoding="utf-8",
              newline="") as f:
        f.write(history.to_csv())
    with open(os.path.join(out_dir, "history.json"), "w",
              encoding="utf-8") as f:
        f.write(history.to_json())


# ---------------------------------------------------------------------------
# Evaluation


def _resolve(checkpoint, name):
    """Accept a path or a live (model, header-ish) and normalize."""
    if isinstance(checkpoint, str):
        model, header = load_checkpoint(checkpoint)
        meta = header.get("meta") or {}
        default = meta.get("name") or os.path.splitext(
            os.path.basename(checkpoint))[0]
        channels = (ChannelConfig.from_dict(header["channels"])
                    if header.get("channels")
                    else ChannelConfig.identity14())
        stats = (BandStats.from_dict(header["band_stats"])
                 if header.get("band_stats") else None)
        return model, channels, stats, (name or default)
    raise TypeError(f"expected a checkpoint path, got {type(checkpoint)!r}")


def evaluate(checkpoint, split, threshold: float = 0.5,
             averaging: str = "micro", batch_size: int = 8,
             name: str = None):
    """Score one checkpoint on a split.

    Returns (row, per_patch) where row carries the aggregated
    precision/recall/f1/iou plus the model name, and per_patch lists the
    same metrics for every sample id. Pure: rerunning yields equal output.
    """
    model, channels, stats, name = _resolve(checkpoint, name)
    counts = []
    per_patch = []
    for probs, y, chunk in _forward_chunks(model, split, channels, stats,
                                           batch_size):
        masks = predict_mask(probs, threshold).data
        for j, s in enumerate(chunk):
            c = confusion(masks[j, 0], y.data[j, 0])
            counts.append(c)
            per_patch.append({"id": s.id, **{k: round(v, 6) for k, v in
                                             aggregate_metrics([c]).items()}})
    row = {"model": name, **aggregate_metrics(counts, averaging)}
    return row, per_patch


def benchmark(checkpoints, split, threshold: float = 0.5,
              averaging: str = "micro", batch_size: int = 8):
    """Evaluate several checkpoints and rank them into a MetricsReport.

    `checkpoints` items are paths or (name, path) pairs.
    """
    if not checkpoints:
        raise ValueError("benchmark needs at least one checkpoint")
    entries = []
    for item in checkpoints:
        name, path = item if isinstance(item, tuple) else (None, item)
        row, _ = evaluate(path, split, threshold=threshold,
                          averaging=averaging, batch_size=batch_size,
                          name=name)
        entries.append((row["model"],
                        {k: row[k] for k in
                         ("precision", "recall", "f1", "iou")}))
    return benchmark_report(entries, mode=averaging)
