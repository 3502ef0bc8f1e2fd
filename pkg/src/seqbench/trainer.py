"""Training loop: sampled-softmax-free BCE over (positive | negatives) slots.

One optimizer step per batch, periodic validation on held-out next items, and
best-checkpoint retention: the returned model always carries the parameters of
the epoch with the highest validation metric seen.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SplitDataset, make_batches
from .emissions import EmissionsConfig
from .errors import ConfigError, TrainingDivergedError
from .evaluator import evaluate
from .models import Model, slot_logits
from .optim import AdamState, adam_step, clip_global_norm
from .rng import STREAMS, derive_seed, stream_rng
from .tensor import GradientTape, Tensor

HISTORY_COLUMNS = ("epoch", "loss", "val_metric", "seconds", "kwh")


class RngBundle:
    """The named generators a training run draws from, as one restorable unit."""

    def __init__(self, seed: int):
        self.seed = seed
        self.streams = {name: stream_rng(seed, name) for name in STREAMS}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.streams[name]

    def state(self) -> dict:
        return {name: g.bit_generator.state for name, g in self.streams.items()}

    def restore(self, state: dict) -> None:
        for name, g in self.streams.items():
            g.bit_generator.state = state[name]


def set_all_seeds(seed: int) -> RngBundle:
    return RngBundle(seed)


def parse_metric(name: str) -> tuple[str, int]:
    """'ndcg@10' -> ('ndcg', 10); validates both halves."""
    try:
        metric, at = name.split("@")
        k = int(at)
    except ValueError:
        raise ConfigError(f"metric {name!r} must look like 'ndcg@10'") from None
    if metric not in ("precision", "recall", "ndcg", "map"):
        raise ConfigError(f"unknown metric {metric!r} in {name!r}")
    if k < 1:
        raise ConfigError(f"metric cutoff must be >= 1, got {k} in {name!r}")
    return metric, k


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 128
    m_neg_train: int = 1
    lr: float = 1e-3
    seed: int = 42
    val_metric: str = "ndcg@10"
    validate_every: int = 5
    patience: int | None = None
    m_neg_eval: int | str = 100
    grad_clip: float = 5.0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.m_neg_train < 1:
            raise ConfigError(
                "epochs, batch_size and m_neg_train must be >= 1, got "
                f"{self.epochs}, {self.batch_size}, {self.m_neg_train}"
            )
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigError(f"lr and grad_clip must be > 0, got {self.lr}, {self.grad_clip}")
        if self.validate_every < 1:
            raise ConfigError(f"validate_every must be >= 1, got {self.validate_every}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be >= 1 or omitted, got {self.patience}")
        parse_metric(self.val_metric)
        if self.m_neg_eval != "all" and int(self.m_neg_eval) < 1:
            raise ConfigError(f"m_neg_eval must be >= 1 or 'all', got {self.m_neg_eval}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_metric: float | None
    seconds: float  # cumulative wall-clock
    kwh: float      # cumulative energy estimate


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for row in self.epochs:
                val = "" if row.val_metric is None else repr(float(row.val_metric))
                writer.writerow(
                    [row.epoch, repr(float(row.loss)), val,
                     repr(float(row.seconds)), repr(float(row.kwh))]
                )


def validate(
    model: Model,
    split: SplitDataset,
    m_neg_eval: int | str,
    k: int,
    metric: str = "ndcg",
    seed: int = 0,
) -> float:
    report = evaluate(model, split, "val", m_neg_eval=m_neg_eval, seed=seed, k_values=(k,))
    return float(report.get(metric, k))


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.params.items()}


def _restore(model: Model, snap: dict[str, np.ndarray]) -> None:
    for name, arr in snap.items():
        model.params[name].data[...] = arr


def train(
    model: Model,
    split: SplitDataset,
    cfg: TrainConfig,
    emissions: EmissionsConfig | None = None,
    log=None,
) -> tuple[Model, TrainHistory]:
    """Optimize in place; returns the model restored to its best-validation state.

    Determinism: with identical (model seed, cfg, split) the loss and metric
    columns of the history and the final parameters are bit-identical across
    runs. Wall-clock columns (seconds, kwh) are the only nondeterministic part.
    """
    cfg.validate()
    bundle = set_all_seeds(cfg.seed)
    opt = AdamState(lr=cfg.lr)
    param_names = list(model.params)
    metric_name, k = parse_metric(cfg.val_metric)
    eval_seed = derive_seed(cfg.seed, "validation")
    has_val = any(u.val is not None for u in split.users)
    history = TrainHistory()
    best = _snapshot(model)
    validations_since_best = 0
    t_start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        batches = make_batches(
            split,
            model.config.L,
            cfg.batch_size,
            model.mode,
            cfg.m_neg_train,
            bundle["negatives"],
            shuffle_rng=bundle["shuffle"],
        )
        loss_sum = 0.0
        slot_count = 0
        for bi, batch in enumerate(batches):
            with GradientTape() as tape:
                slots = model.training_slots(batch, bundle["dropout"])
                if slots is None:
                    continue
                logits = slot_logits(model, slots, bundle["dropout"])
                labels = np.zeros(logits.shape)
                labels[:, 0] = 1.0
                loss = T.bce_with_logits(logits, labels)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {bi}"
                )
            tape.backward(loss)
            grads = {name: model.params[name].grad for name in param_names}
            clip_global_norm(grads, cfg.grad_clip)
            adam_step(model.params, grads, opt)
            n = logits.data.size
            loss_sum += loss_value * n
            slot_count += n
        epoch_loss = loss_sum / slot_count if slot_count else float("nan")
        val_value = None
        if has_val and (epoch % cfg.validate_every == 0 or epoch == cfg.epochs):
            val_value = validate(
                model, split, cfg.m_neg_eval, k, metric=metric_name, seed=eval_seed
            )
            if val_value > history.best_metric:
                history.best_metric = val_value
                history.best_epoch = epoch
                best = _snapshot(model)
                validations_since_best = 0
            else:
                validations_since_best += 1
        elapsed = time.perf_counter() - t_start
        kwh = emissions.energy_kwh(elapsed) if emissions is not None else 0.0
        history.epochs.append(EpochStats(epoch, epoch_loss, val_value, elapsed, kwh))
        if log is not None:
            shown = "" if val_value is None else f"  {cfg.val_metric}={val_value:.4f}"
            log(f"epoch {epoch}/{cfg.epochs}  loss={epoch_loss:.4f}{shown}")
        if cfg.patience is not None and validations_since_best >= cfg.patience:
            break
    if not has_val or history.best_epoch == 0:
        # No validation signal: keep the final parameters.
        history.best_epoch = history.epochs[-1].epoch if history.epochs else 0
        history.best_metric = float("nan")
    else:
        _restore(model, best)
    return model, history


def load_history(path: str) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise ConfigError(
                f"{path}: expected history columns {','.join(HISTORY_COLUMNS)}, "
                f"got {','.join(reader.fieldnames or ())}"
            )
        for row in reader:
            val = float(row["val_metric"]) if row["val_metric"] else None
            history.epochs.append(
                EpochStats(
                    int(row["epoch"]),
                    float(row["loss"]),
                    val,
                    float(row["seconds"]),
                    float(row["kwh"]),
                )
            )
    for stats in history.epochs:
        if stats.val_metric is not None and stats.val_metric > history.best_metric:
            history.best_metric = stats.val_metric
            history.best_epoch = stats.epoch
    return history
