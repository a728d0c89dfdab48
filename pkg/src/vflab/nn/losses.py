"""Elementwise regression losses with analytic gradients.

Values are means over every entry (rows * cols); reductions run in
float64 regardless of the input dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError

LOSS_MSE = "mse"
LOSS_MAE = "mae"


def _check(pred, target):
    if pred.shape != target.shape:
        raise DimensionError(
            f"pred shape {pred.shape} != target shape {target.shape}"
        )


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and d(value)/d(pred)."""
    _check(pred, target)
    diff = pred - target
    value = float(np.mean(diff * diff, dtype=np.float64))
    grad = diff * (2.0 / diff.size)
    return value, grad


def mae(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error; the subgradient at zero is taken as 0."""
    _check(pred, target)
    diff = pred - target
    value = float(np.mean(np.abs(diff), dtype=np.float64))
    grad = np.sign(diff) * (1.0 / diff.size)
    return value, grad


def loss_value_and_grad(kind: str, pred, target):
    if kind == LOSS_MSE:
        return mse(pred, target)
    if kind == LOSS_MAE:
        return mae(pred, target)
    raise ConfigError(f"unknown loss kind {kind!r}")
