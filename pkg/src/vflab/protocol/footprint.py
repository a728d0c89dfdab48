"""Analytic communication-footprint calculators (4 bytes per element).

These are used for reporting and cross-method comparison; the
representation-transfer method's number also reconciles exactly with its
ledger's data bytes.
"""

from __future__ import annotations

import math

from ..errors import ConfigError

# Final layer of the feature-only party's local encoder: 128 -> 256.
PASSIVE_FINAL_LAYER_PARAMS = 128 * 256 + 256  # 33024


def _positive(**kw):
    for name, v in kw.items():
        if v < 0:
            raise ConfigError(f"{name} must be >= 0, got {v}")


def footprint_apcvfl(d_a: int, z_p: int = 256) -> int:
    """Bytes for the single representation transfer: one d_a x z_p matrix."""
    _positive(d_a=d_a, z_p=z_p)
    return d_a * z_p * 4


def footprint_splitnn(
    epochs: int,
    d_a: int,
    z_p: int = 256,
    batch: int = 128,
    p_params: int = PASSIVE_FINAL_LAYER_PARAMS,
) -> int:
    """Forward embeddings every epoch plus one gradient message per batch.

    forward  = epochs * d_a * z_p * 4
    backward = epochs * ceil(d_a / batch) * p_params * 4
    """
    _positive(epochs=epochs, d_a=d_a, z_p=z_p, p_params=p_params)
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    forward = epochs * d_a * z_p * 4
    backward = epochs * math.ceil(d_a / batch) * p_params * 4
    return forward + backward


def footprint_vfedtrans(d_a: int, x_t: int, x_d: int) -> int:
    """Bytes for the SVD-based federated representation pipeline (five
    exchanges; the d_a x d_a mixing matrix dominates quadratically).
    """
    _positive(d_a=d_a, x_t=x_t, x_d=x_d)
    x_total = x_t + x_d
    elements = (
        2 * d_a * d_a
        + x_t * x_total
        + x_d * x_total
        + d_a * x_t
        + d_a * x_d
        + d_a * x_total
    )
    return elements * 4


def format_bytes(n: int) -> str:
    """Exact integer bytes and decimal megabytes to two decimals."""
    return f"{n} B ({n / 1e6:.2f} MB)"
