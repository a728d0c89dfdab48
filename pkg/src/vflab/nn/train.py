"""Seeded mini-batch training loop with patience-based early stopping.

The loop is objective-agnostic: callers hand in a callable that maps a
batch of row indices to (loss, gradient list). Shuffling is driven only
by the seed, so identical inputs and seed reproduce the trace and the
final weights bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, TrainingError
from .optim import ListAdam

# objective(batch_indices) -> (mean loss over the batch, grads or None)
BatchObjective = Callable[[np.ndarray, bool], tuple[float, Optional[list]]]


@dataclass
class TrainConfig:
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    loss: str = "mse"
    seed: int = 0
    lr: float = 1e-3

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainTrace:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    epochs_run: int = 0
    best_epoch: int = 0
    best_val: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
        }


def batch_slices(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Half-open slice bounds covering n rows; the final partial batch is kept."""
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def run_epoch(
    objective: BatchObjective,
    perm: np.ndarray,
    batch_size: int,
    optimizer,
    *,
    epoch: int,
) -> float:
    """One pass over `perm` in mini-batches; returns the row-weighted mean loss."""
    n = len(perm)
    total = 0.0
    for b, (lo, hi) in enumerate(batch_slices(n, batch_size)):
        idx = perm[lo:hi]
        loss, grads = objective(idx, True)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch}, batch {b}"
            )
        optimizer.step(grads)
        total += loss * (hi - lo)
    return total / n


def train(
    params: list[np.ndarray],
    objective: BatchObjective,
    n_rows: int,
    cfg: TrainConfig,
    val_loss: Callable[[], float] | None = None,
    optimizer=None,
) -> TrainTrace:
    """Train `params` in place (default optimizer: Adam at cfg.lr).

    Early stopping (when `val_loss` is given): the validation loss must
    strictly improve; after `cfg.patience` consecutive non-improving
    epochs the loop stops and the best epoch's snapshot is restored.
    Without a validation callback the loop runs to max_epochs and the
    final weights stand.
    """
    if n_rows < 1:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if optimizer is None:
        optimizer = ListAdam(params, lr=cfg.lr)
    trace = TrainTrace()
    best = np.inf
    bad = 0
    snapshot = None
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n_rows)
        tl = run_epoch(objective, perm, cfg.batch_size, optimizer, epoch=epoch)
        trace.train_losses.append(tl)
        trace.epochs_run = epoch
        if val_loss is None:
            trace.best_epoch = epoch
            continue
        vl = float(val_loss())
        if not np.isfinite(vl):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        trace.val_losses.append(vl)
        if vl < best:
            best = vl
            bad = 0
            trace.best_epoch = epoch
            trace.best_val = vl
            snapshot = [p.copy() for p in params]
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    if snapshot is not None:
        for p, s in zip(params, snapshot):
            np.copyto(p, s)
    return trace
