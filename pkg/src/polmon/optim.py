"""RMSProp with L2 regularization, the single optimizer used everywhere."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


def rmsprop_update(w, g, acc, lr, decay, eps, l2):
    """One update: returns (new_w, new_acc).

    The L2 term folds into the gradient before the squared-gradient
    accumulator, so the normalized step stays bounded: the update is
    lr * g' / sqrt(acc' + eps) with g' = g + l2*w.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    if w.shape != g.shape or w.shape != acc.shape:
        raise ShapeError(f"rmsprop: shapes {w.shape}/{g.shape}/{acc.shape} differ")
    g_eff = g + l2 * w
    acc2 = decay * acc + (1.0 - decay) * g_eff * g_eff
    step = lr * g_eff / np.sqrt(acc2 + eps)
    return w - step, acc2


@dataclass
class RmsPropState:
    """Optimizer config plus per-parameter squared-gradient accumulators."""

    lr: float = 1e-4
    decay: float = 0.9
    eps: float = 1e-8
    l2: float = 1e-2
    acc: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            a = self.acc.get(name)
            if a is None:
                a = np.zeros_like(p.data)
            p.data, self.acc[name] = rmsprop_update(
                p.data, p.grad, a, self.lr, self.decay, self.eps, self.l2)

    def zero_grad(self, params: dict[str, Tensor]) -> None:
        for p in params.values():
            p.zero_grad()
