"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

# Entries whose gradient magnitude is below this are compared in absolute
# terms; finite differences cannot resolve them relatively.
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(network, inputs, loss_fn, epsilon: float = 1e-5, coords_per_param: int | None = None,
               seed: int = 0, detail: bool = False):
    """Largest relative error between backprop and central differences.

    ``network`` exposes ``params`` (Tensors), ``forward(*inputs, training)``
    and ``backward(dout)``; ``loss_fn(output) -> (loss, dout)``.  Every entry
    of every parameter is checked unless ``coords_per_param`` limits it to a
    seeded random subset.  Dropout must be inactive, so the forward pass runs
    in eval mode.
    """
    params = list(network.params)
    for p in params:
        if p.values.dtype != np.float64:
            raise ConfigurationError("gradient checking requires 64-bit parameters")
    for p in params:
        p.zero_grad()
    out = network.forward(*inputs, training=False)
    _, dout = loss_fn(out)
    network.backward(dout)
    analytic = [p.grad.copy() for p in params]

    def loss_at() -> float:
        return loss_fn(network.forward(*inputs, training=False))[0]

    rng = np.random.default_rng(seed)
    worst = 0.0
    per_param = {}
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=coords_per_param, replace=False))
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + epsilon
            up = loss_at()
            flat[i] = old - epsilon
            down = loss_at()
            flat[i] = old
            num[k] = (up - down) / (2.0 * epsilon)
        err = float(relative_error(a.reshape(-1)[idx], num).max()) if idx.size else 0.0
        per_param[p.name] = err
        worst = max(worst, err)
    if detail:
        return worst, per_param
    return worst
