"""Finite-difference check of the quality and displacement networks.

The networks keep the full topology (three strided convolutions, the
two-branch merge, dropout, each head) but shrink the image and channel
widths so every parameter entry can be perturbed in a few seconds.
"""

from __future__ import annotations

import numpy as np

from ..models import NetSpec, TwoBranchNet
from ..tensor import bce_loss, gaussian_nll_loss, grad_check, sigmoid

SMALL_SPEC = NetSpec(image_size=16, channels=(2, 3, 4), image_fc=8, action_fc=4, merge_fc=6)


def _gqn_loss(labels):
    def fn(z):
        q = sigmoid(z[:, 0])
        loss, dq = bce_loss(q, labels)
        return loss, (dq * q * (1.0 - q))[:, None]
    return fn


def _gdn_loss(target, with_variance: bool):
    def fn(out):
        lv = out[:, 4:] if with_variance else np.zeros_like(out[:, :4])
        loss, dmu, dlv = gaussian_nll_loss(out[:, :4], lv, target)
        return loss, np.concatenate([dmu, dlv], axis=1) if with_variance else dmu
    return fn


def check_networks(seed: int, spec: NetSpec = SMALL_SPEC, batch: int = 4, epsilon: float = 1e-5,
                   coords_per_param: int | None = None) -> dict:
    """Max relative error for the GQN, GDN-M and GDN-M+V shapes at ``seed``."""
    rng = np.random.default_rng(seed)
    images = rng.normal(size=(batch, spec.image_size, spec.image_size))
    out = {}
    gqn = TwoBranchNet(3, 1, seed, spec)
    labels = (rng.random(batch) < 0.5).astype(np.float64)
    out["GQN"] = grad_check(gqn, (images, rng.normal(size=(batch, 3))), _gqn_loss(labels), epsilon,
                            coords_per_param, seed)
    target = rng.normal(size=(batch, 4))
    for name, dim, mv in (("GDN-M", 4, False), ("GDN-M+V", 4, True)):
        net = TwoBranchNet(dim, 8 if mv else 4, seed, spec)
        out[name] = grad_check(net, (images, rng.normal(size=(batch, dim))), _gdn_loss(target, mv), epsilon,
                               coords_per_param, seed)
    return out


def run_gradcheck(seeds, spec: NetSpec = SMALL_SPEC, verbose: bool = False, **kw) -> float:
    worst = 0.0
    for s in seeds:
        res = check_networks(s, spec, **kw)
        if verbose:
            print(f"seed {s}: " + " ".join(f"{k}={v:.2e}" for k, v in res.items()))
        worst = max(worst, *res.values())
    return worst
