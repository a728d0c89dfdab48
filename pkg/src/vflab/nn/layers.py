"""Dense layers and the minimal multilayer perceptron.

All math is plain numpy. Parameters are stored as float32 by default
(the wire and model-file formats are 4 bytes per element); training
promotes them to a working dtype chosen by the caller, so the same
forward/backward code runs in float64 for gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError

ACT_SELU = "selu"
ACT_IDENTITY = "identity"
_ACTIVATIONS = (ACT_SELU, ACT_IDENTITY)

# Self-normalizing exponential-linear constants.
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def selu(x):
    """SELU: scale*x for x>0, scale*alpha*(e^x - 1) otherwise.

    Written as max/min + expm1 so the exponential is never evaluated on
    the positive branch (no overflow, no boolean temporaries).
    """
    x = np.asarray(x)
    return SELU_SCALE * (np.maximum(x, 0) + SELU_ALPHA * np.expm1(np.minimum(x, 0)))


def selu_grad_from_output(y):
    """Derivative of SELU expressed through its own output.

    For x > 0 the output is positive and the slope is `scale`; for
    x <= 0, y = scale*alpha*(e^x - 1) so the slope scale*alpha*e^x
    equals y + scale*alpha.
    """
    return np.where(y > 0, SELU_SCALE, y + SELU_SCALE * SELU_ALPHA)


@dataclass
class DenseLayer:
    """Fully connected layer: y = act(x @ W.T + b).

    weights has shape (out_dim, in_dim); bias has shape (out_dim,).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = ACT_SELU

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class Mlp:
    """Ordered stack of dense layers with chained dimensions."""

    layers: list[DenseLayer]

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer dims do not chain: {prev.out_dim} -> {cur.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W1, b1, W2, b2, ...] (live references)."""
        out = []
        for l in self.layers:
            out.append(l.weights)
            out.append(l.bias)
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise DimensionError(
                f"expected {2 * len(self.layers)} arrays, got {len(params)}"
            )
        for i, l in enumerate(self.layers):
            l.weights = params[2 * i]
            l.bias = params[2 * i + 1]

    def astype(self, dtype) -> "Mlp":
        return Mlp(
            [
                DenseLayer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation)
                for l in self.layers
            ]
        )


def build_mlp(widths, activations=None, *, rng=None, seed=0, dtype=np.float32) -> Mlp:
    """Build an Mlp with LeCun-normal weights (std = 1/sqrt(fan_in)), zero bias.

    `widths` is [in, h1, ..., out]; `activations` one tag per layer
    (default: SELU everywhere).
    """
    widths = list(widths)
    if len(widths) < 2:
        raise ConfigError("need at least [in, out] widths")
    if any(w <= 0 for w in widths):
        raise ConfigError(f"layer widths must be positive, got {widths}")
    n_layers = len(widths) - 1
    if activations is None:
        activations = [ACT_SELU] * n_layers
    if len(activations) != n_layers:
        raise ConfigError(
            f"{len(activations)} activation tags for {n_layers} layers"
        )
    if rng is None:
        rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(widths, widths[1:], activations):
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append(
            DenseLayer(w.astype(dtype), np.zeros(fan_out, dtype=dtype), act)
        )
    return Mlp(layers)


def repack_into_flat(mlps: list[Mlp]) -> np.ndarray:
    """Copy the networks' parameters into one contiguous buffer and point
    every layer at a view of it, so an optimizer can update all of them
    in a single fused pass. Returns the flat buffer.
    """
    params = [p for m in mlps for p in m.params()]
    flat = np.concatenate([p.reshape(-1) for p in params])
    off = 0
    for m in mlps:
        views = []
        for p in m.params():
            views.append(flat[off : off + p.size].reshape(p.shape))
            off += p.size
        m.set_params(views)
    return flat


def forward(mlp: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Run a batch through the network; return every post-activation output.

    The returned list has one entry per layer; the last one is the
    network output. The input batch is never modified.
    """
    if x.ndim != 2 or x.shape[1] != mlp.input_dim:
        raise DimensionError(
            f"batch has shape {x.shape}, expected (n, {mlp.input_dim})"
        )
    acts = []
    a = x
    for layer in mlp.layers:
        z = a @ layer.weights.T
        z += layer.bias
        a = selu(z) if layer.activation == ACT_SELU else z
        acts.append(a)
    return acts


def backward(
    mlp: Mlp,
    x: np.ndarray,
    activations: list[np.ndarray],
    upstream_grad: np.ndarray,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass given forward activations.

    `upstream_grad` is dLoss/d(output), same shape as the final
    activation. Returns ([dW1, db1, dW2, db2, ...], dLoss/d(x)).
    """
    if upstream_grad.shape != activations[-1].shape:
        raise DimensionError(
            f"upstream grad shape {upstream_grad.shape} != output shape "
            f"{activations[-1].shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    g = upstream_grad
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if layer.activation == ACT_SELU:
            d = g * selu_grad_from_output(activations[i])
        else:
            d = g
        below = activations[i - 1] if i > 0 else x
        grads[2 * i] = d.T @ below
        grads[2 * i + 1] = d.sum(axis=0)
        g = d @ layer.weights
    return grads, g
