"""Training loop with early stopping and best-model retention."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.checkpoint import save_checkpoint
from .autodiff.optim import RMSprop
from .autodiff.tensor import no_grad
from .model import ModelGraph
from .patchset import PatchSet, make_batches

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "split_index", "train_loss", "train_oa", "val_loss", "val_oa")


class NumericError(RuntimeError):
    """Loss became NaN or infinite."""


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 1024
    lr: float = 1e-5
    rho: float = 0.9
    eps: float = 1e-7
    n_splits: int = 9
    transforms_per_split: int = 2
    p_augment: float = 0.1
    patience: int = 20
    seed: int = 0
    eval_batch_size: int = 512


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to lower the monitored loss."""

    def __init__(self, patience: int = 20):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; returns True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    epochs_run: int = 0
    stopped_early: bool = False

    def epoch_rows(self) -> list[dict]:
        return [r for r in self.history if r.get("val_loss") is not None]


def class_index(labels: np.ndarray) -> np.ndarray:
    """Class ids 1..c to network output indices 0..c-1."""
    return np.asarray(labels, dtype=np.int64) - 1


def evaluate_loss(model: ModelGraph, patches: PatchSet, batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and overall accuracy in inference mode."""
    if len(patches) == 0:
        return float("nan"), float("nan")
    logits = model.predict_logits(patches.features, batch_size)
    y = class_index(patches.labels)
    with no_grad():
        loss = float(ops.softmax_cross_entropy(logits.astype(np.float64), y).data)
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def train(model: ModelGraph, train_set: PatchSet, val_set: PatchSet, cfg: TrainConfig,
          callbacks: Sequence[Callable] = (), checkpoint_path: str | os.PathLike | None = None,
          optimizer: RMSprop | None = None, target_oa: float | None = None) -> TrainResult:
    """Fit ``model`` with RMSprop on augmented, chunked batches.

    After every epoch the validation loss drives early stopping and the
    best-so-far weights; the best weights are restored before returning.
    ``callbacks`` are called as ``cb(epoch, logs, model)`` and may edit
    ``logs`` before the stopping logic reads them.  With ``target_oa`` the
    run also ends as soon as validation OA reaches it.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    opt = optimizer or RMSprop(model.parameters(trainable_only=True).values(), cfg.lr, cfg.rho, cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult()
    best_state = model.state_dict()
    for epoch in range(cfg.epochs):
        per_split: dict[int, list] = {}
        for x, y, split_index in make_batches(train_set, cfg.batch_size, cfg.n_splits,
                                              cfg.transforms_per_split, cfg.seed * 100_003 + epoch,
                                              cfg.p_augment):
            opt.zero_grad()
            logits = model.forward(x, training=True)
            yi = class_index(y)
            loss = ops.softmax_cross_entropy(logits, yi)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, split {split_index}")
            loss.backward()
            opt.step()
            correct = int(np.sum(logits.data.argmax(axis=1) == yi))
            acc = per_split.setdefault(split_index, [0.0, 0, 0])
            acc[0] += value * len(y)
            acc[1] += correct
            acc[2] += len(y)
        val_loss, val_oa = evaluate_loss(model, val_set, cfg.eval_batch_size)
        last = max(per_split)
        for si in sorted(per_split):
            s_loss, s_correct, s_n = per_split[si]
            row = {"epoch": epoch, "split_index": si, "train_loss": s_loss / s_n,
                   "train_oa": s_correct / s_n, "val_loss": None, "val_oa": None}
            if si == last:
                row["val_loss"], row["val_oa"] = val_loss, val_oa
            result.history.append(row)
        logs = result.history[-1]
        for cb in callbacks:
            cb(epoch, logs, model)
        val_loss = logs["val_loss"]
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_oa=%.4f",
                 epoch, logs["train_loss"], val_loss, logs["val_oa"])
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, best_state)
        result.epochs_run = epoch + 1
        if stop:
            result.stopped_early = True
            break
        if target_oa is not None and logs["val_oa"] >= target_oa:
            break
    model.load_state_dict(best_state)
    result.best_epoch, result.best_val_loss = stopper.best_epoch, float(stopper.best)
    return result


def write_history(path: str | os.PathLike, history: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in HISTORY_COLUMNS})
    return path
