"""Multi-silo training with per-epoch parameter averaging.

Every epoch each silo runs one local pass of minibatch SGD starting
from the shared model, the server averages the updated parameter sets
(weighted by silo training size, or uniformly), validates the averaged
model on the concatenated validation sets, and early-stops on that
validation loss.

Privacy boundary: the orchestration functions (federated_train,
train_for_epochs, federated_validate) touch silos only through
local_train_epoch, local_validate, and the aggregate counters
(name, n_train, label_counts). Raw features and labels never cross
that interface; only parameters travel in, and parameters or
(logits, labels) travel out. The concatenated validation labels do
leave each silo, which is the documented cost of central validation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, UndefinedMetricError
from .network import (
    Batch,
    ModelParams,
    TrainConfig,
    average_models,
    backward,
    batch_loss,
    forward_batch,
    init_model,
    loss_from_logits,
    lr_at_epoch,
    sgd_step,
    sigmoid,
)
from .seeds import derive_seed, make_rng
from .stats import confusion, pr_auc, prf1, roc_auc


@dataclass(frozen=True, eq=False)
class Silo:
    """One institution's private shard: training and validation arrays."""

    name: str
    train_features: np.ndarray
    train_labels: np.ndarray
    val_features: np.ndarray
    val_labels: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValueError("silo name must be non-empty")
        tx = np.asarray(self.train_features, dtype=np.float64)
        ty = np.asarray(self.train_labels, dtype=np.float64)
        vx = np.asarray(self.val_features, dtype=np.float64)
        vy = np.asarray(self.val_labels, dtype=np.float64)
        if tx.ndim != 2 or tx.shape[0] != ty.shape[0]:
            raise ValueError("training features and labels must have matching lengths")
        if vx.ndim != 2 or vx.shape[0] != vy.shape[0]:
            raise ValueError("validation features and labels must have matching lengths")
        for arr in (tx, ty, vx, vy):
            arr.setflags(write=False)
        object.__setattr__(self, "train_features", tx)
        object.__setattr__(self, "train_labels", ty)
        object.__setattr__(self, "val_features", vx)
        object.__setattr__(self, "val_labels", vy)

    @property
    def n_train(self) -> int:
        return int(self.train_labels.shape[0])

    @property
    def n_val(self) -> int:
        return int(self.val_labels.shape[0])

    def label_counts(self) -> tuple[int, int]:
        """(negatives, positives) in the training shard."""
        pos = int(self.train_labels.sum())
        return self.n_train - pos, pos


@dataclass(frozen=True)
class RoundLog:
    """One epoch of the shared loop."""

    epoch: int
    lr: float
    train_losses: dict[str, float]
    val_loss: float | None
    metrics: dict[str, float | None] | None


@dataclass(frozen=True)
class EarlyStopState:
    """Best checkpoint so far plus the non-improvement counter."""

    patience: int
    best_loss: float = math.inf
    best_params: ModelParams | None = None
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


def early_stop_update(
    state: EarlyStopState, loss: float, params: ModelParams
) -> tuple[EarlyStopState, bool]:
    """Fold one validation loss into the state; True means stop now.

    Strict improvement resets the counter and stores the checkpoint;
    otherwise the counter grows and training stops once it reaches the
    patience.
    """
    if not np.isfinite(loss):
        raise NumericalError(f"validation loss is not finite: {loss}")
    if loss < state.best_loss:
        return replace(state, best_loss=loss, best_params=params, epochs_since_improvement=0), False
    counter = state.epochs_since_improvement + 1
    return replace(state, epochs_since_improvement=counter), counter >= state.patience


def local_train_epoch(model: ModelParams, silo: Silo, config: TrainConfig, epoch: int) -> ModelParams:
    """One full local pass in shuffled minibatches; returns new parameters.

    The shuffle stream is named by (config.seed, silo.name, epoch), so
    the pass is reproducible regardless of when or where it runs.
    """
    if silo.n_train < 1:
        raise ValueError(f"silo {silo.name!r} has no training data")
    if config.pos_weight is None:
        raise ValueError("config.pos_weight must be resolved before local training")
    lr = lr_at_epoch(config.lr0, config.gamma, epoch)
    order = make_rng(config.seed, "shuffle", silo.name, epoch).permutation(silo.n_train)
    for start in range(0, silo.n_train, config.batch_size):
        chunk = order[start : start + config.batch_size]
        batch = Batch(features=silo.train_features[chunk], labels=silo.train_labels[chunk])
        model = sgd_step(model, backward(model, batch, config.pos_weight), lr, config.weight_decay)
    return model


def local_validate(model: ModelParams, silo: Silo) -> tuple[np.ndarray, np.ndarray]:
    """Silo-side evaluation: (logits, labels) for the local validation set."""
    if silo.n_val < 1:
        raise ValueError(f"silo {silo.name!r} has no validation data")
    return forward_batch(model, silo.val_features), silo.val_labels


def threshold_and_rank_metrics(labels: np.ndarray, scores: np.ndarray) -> dict[str, float | None]:
    """F1/precision/recall at 0.5 plus AUCs, None where undefined."""
    preds = (scores >= 0.5).astype(np.int64)
    precision, recall, f1 = prf1(confusion(labels.astype(np.int64), preds))
    out: dict[str, float | None] = {"f1": f1, "precision": precision, "recall": recall}
    try:
        out["roc_auc"] = roc_auc(labels, scores)
        out["pr_auc"] = pr_auc(labels, scores)
    except UndefinedMetricError:
        out["roc_auc"] = None
        out["pr_auc"] = None
    return out


def federated_validate(
    model: ModelParams, silos: list[Silo], pos_weight: float
) -> tuple[float, dict[str, float | None], np.ndarray, np.ndarray]:
    """Validate one model across all silos.

    Each silo evaluates locally; the server concatenates in fixed silo
    order and computes the loss and metrics over the concatenation.
    Returns (loss, metrics, scores, labels).
    """
    if not silos:
        raise ValueError("at least one silo is required")
    logits_parts = []
    label_parts = []
    for silo in silos:
        logits, labels = local_validate(model, silo)
        logits_parts.append(logits)
        label_parts.append(labels)
    logits = np.concatenate(logits_parts)
    labels = np.concatenate(label_parts)
    loss = loss_from_logits(logits, labels, pos_weight)
    scores = sigmoid(logits)
    return loss, threshold_and_rank_metrics(labels, scores), scores, labels


def resolve_pos_weight(config: TrainConfig, silos: list[Silo]) -> float:
    """Use the configured weight, or the global negative/positive ratio."""
    if config.pos_weight is not None:
        return config.pos_weight
    neg = 0
    pos = 0
    for silo in silos:
        n, p = silo.label_counts()
        neg += n
        pos += p
    if pos == 0:
        raise ValueError("cannot derive pos_weight: no positive training samples")
    return neg / pos


def _aggregation_weights(silos: list[Silo], uniform_weights: bool) -> list[float]:
    if uniform_weights:
        return [1.0] * len(silos)
    return [float(s.n_train) for s in silos]


def federated_train(
    silos: list[Silo], config: TrainConfig, uniform_weights: bool = False
) -> tuple[ModelParams, list[RoundLog]]:
    """Train across silos with per-epoch averaging and early stopping.

    Returns the checkpoint with the lowest validation loss and the
    per-epoch logs. With a single silo this reduces exactly to plain
    centralized training.
    """
    if not silos:
        raise ValueError("at least one silo is required")
    if len({s.name for s in silos}) != len(silos):
        raise ValueError("silo names must be unique")
    for silo in silos:
        if silo.n_train < 1:
            raise ValueError(f"silo {silo.name!r} has no training data")
        if silo.n_val < 1:
            raise ValueError(f"silo {silo.name!r} has no validation data")
    pos_weight = resolve_pos_weight(config, silos)
    cfg = replace(config, pos_weight=pos_weight)
    weights = _aggregation_weights(silos, uniform_weights)

    model = init_model(cfg.hidden_size, derive_seed(cfg.seed, "init"))
    state = EarlyStopState(patience=cfg.patience)
    logs: list[RoundLog] = []
    for epoch in range(cfg.max_epochs):
        updated = [local_train_epoch(model, silo, cfg, epoch) for silo in silos]
        model = average_models(updated, weights)
        train_losses = {
            silo.name: _silo_train_loss(local_model, silo, pos_weight)
            for silo, local_model in zip(silos, updated)
        }
        val_loss, metrics, _, _ = federated_validate(model, silos, pos_weight)
        logs.append(
            RoundLog(
                epoch=epoch,
                lr=lr_at_epoch(cfg.lr0, cfg.gamma, epoch),
                train_losses=train_losses,
                val_loss=val_loss,
                metrics=metrics,
            )
        )
        state, stop = early_stop_update(state, val_loss, model)
        if stop:
            break
    assert state.best_params is not None
    return state.best_params, logs


def _silo_train_loss(model: ModelParams, silo: Silo, pos_weight: float) -> float:
    """Silo-side: loss of its own updated model over its training shard."""
    batch = Batch(features=silo.train_features, labels=silo.train_labels)
    return batch_loss(model, batch, pos_weight)


def train_for_epochs(
    silos: list[Silo], config: TrainConfig, n_epochs: int, uniform_weights: bool = False
) -> tuple[ModelParams, list[RoundLog]]:
    """Fixed-budget variant: no validation, no early stopping."""
    if not silos:
        raise ValueError("at least one silo is required")
    if n_epochs < 1:
        raise ValueError("n_epochs must be at least 1")
    for silo in silos:
        if silo.n_train < 1:
            raise ValueError(f"silo {silo.name!r} has no training data")
    pos_weight = resolve_pos_weight(config, silos)
    cfg = replace(config, pos_weight=pos_weight)
    weights = _aggregation_weights(silos, uniform_weights)

    model = init_model(cfg.hidden_size, derive_seed(cfg.seed, "init"))
    logs: list[RoundLog] = []
    for epoch in range(n_epochs):
        updated = [local_train_epoch(model, silo, cfg, epoch) for silo in silos]
        model = average_models(updated, weights)
        train_losses = {
            silo.name: _silo_train_loss(local_model, silo, pos_weight)
            for silo, local_model in zip(silos, updated)
        }
        logs.append(
            RoundLog(
                epoch=epoch,
                lr=lr_at_epoch(cfg.lr0, cfg.gamma, epoch),
                train_losses=train_losses,
                val_loss=None,
                metrics=None,
            )
        )
    return model, logs


def round_log_to_dict(log: RoundLog) -> dict:
    return {
        "epoch": log.epoch,
        "lr": log.lr,
        "train_losses": dict(sorted(log.train_losses.items())),
        "val_loss": log.val_loss,
        "metrics": log.metrics,
    }


def write_round_logs(path, logs: list[RoundLog]) -> None:
    """One JSON object per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(json.dumps(round_log_to_dict(log)) + "\n")
