"""RMSProp with inverse-time learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .core import Tensor, check_finite


@dataclass
class OptimizerState:
    lr: float = 1e-5
    decay: float = 1e-6
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    accumulators: dict = field(default_factory=dict)

    def lr_at(self, step: int) -> float:
        return self.lr / (1.0 + self.decay * step)


def rmsprop_step(params, grads, state: OptimizerState):
    """Apply one update in place.

    ``params`` and ``grads`` are parallel sequences of arrays (or ``Tensor``
    objects whose ``.values`` are updated).  The learning rate for this update
    is ``lr / (1 + decay * k)`` where ``k`` counts completed updates.
    """
    lr_t = state.lr_at(state.step)
    for i, (p, g) in enumerate(zip(params, grads)):
        values = p.values if isinstance(p, Tensor) else p
        key = p.name if isinstance(p, Tensor) and p.name else i
        if g.shape != values.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {values.shape}")
        acc = state.accumulators.get(key)
        if acc is None:
            acc = np.zeros_like(values)
            state.accumulators[key] = acc
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        values -= (lr_t * g / np.sqrt(acc + state.eps)).astype(values.dtype)
        check_finite(values, str(key))
    state.step += 1
    return params


class RMSProp:
    def __init__(self, params, lr=1e-5, decay=1e-6, rho=0.9, eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr, decay, rho, eps)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]
        rmsprop_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
