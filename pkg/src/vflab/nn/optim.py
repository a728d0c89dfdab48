"""Adam with bias correction, updating parameter arrays in place."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, TrainingError

try:  # single fused pass; pure-numpy fallback below is ~4x slower
    from numba import njit

    @njit(cache=True)
    def _fused_adam_update(flat, m, v, g, b1, b2, lr_c, eps_c):
        for i in range(flat.size):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            flat[i] -= lr_c * mi / (np.sqrt(vi) + eps_c)

except ImportError:  # pragma: no cover - numba is a hard wheel everywhere we run
    _fused_adam_update = None


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the step counter.

    Defaults follow the original recommendation: lr=1e-3, beta1=0.9,
    beta2=0.999, eps=1e-8.
    """

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kwargs) -> "AdamState":
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        return cls(m=m, v=v, **kwargs)


class FlatAdam:
    """Adam over one contiguous parameter buffer.

    Layer arrays are expected to be views into `flat` (see
    layers.repack_into_flat), so a single fused update per step replaces
    one small-array pass per parameter tensor. Algebraically identical
    to adam_step:

        update = lr/ (1-b1^t) * m / (sqrt(v/(1-b2^t)) + eps)
               = lr*sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps*sqrt(1-b2^t))
    """

    def __init__(self, flat: np.ndarray, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.flat = flat
        self.m = np.zeros_like(flat)
        self.v = np.zeros_like(flat)
        self._tmp = np.empty_like(flat)
        self._g = np.empty_like(flat)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, grads: list[np.ndarray]) -> None:
        g = self._g
        off = 0
        for a in grads:
            n = a.size
            g[off : off + n] = a.reshape(-1)
            off += n
        if off != g.size:
            raise DimensionError(f"gradients cover {off} of {g.size} parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        sc2 = float(np.sqrt(c2))
        lr_c = self.lr * sc2 / c1
        eps_c = self.eps * sc2
        if _fused_adam_update is not None:
            _fused_adam_update(self.flat, self.m, self.v, g, self.beta1, self.beta2, lr_c, eps_c)
            return
        np.multiply(g, g, out=self._tmp)
        self.v *= self.beta2
        self._tmp *= 1.0 - self.beta2
        self.v += self._tmp
        self.m *= self.beta1
        g *= 1.0 - self.beta1
        self.m += g
        np.sqrt(self.v, out=self._tmp)
        self._tmp += eps_c
        np.divide(self.m, self._tmp, out=self._tmp)
        self._tmp *= lr_c
        self.flat -= self._tmp


class ListAdam:
    """adam_step wrapped for parameter lists that share no flat buffer."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, **kw):
        self.params = params
        self.state = AdamState.for_params(params, lr=lr, **kw)

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, grads: list[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, check_finite=False)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    *,
    check_finite: bool = True,
) -> AdamState:
    """One bias-corrected Adam update; mutates `params` and `state`.

    The training loop validates batch losses itself and passes
    check_finite=False to keep the hot path free of extra scans.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"param/grad/state lengths differ: {len(params)}/{len(grads)}/{len(state.m)}"
        )
    if check_finite:
        for g in grads:
            if not np.isfinite(g).all():
                raise TrainingError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise DimensionError(
                f"grad shape {g.shape} != param shape {p.shape}"
            )
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p -= (state.lr / c1) * m / denom
    return state
