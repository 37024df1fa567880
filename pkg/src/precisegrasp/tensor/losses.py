"""Binary cross-entropy and the heteroscedastic Gaussian loss."""

from __future__ import annotations

import numpy as np

from .core import check_finite

Q_CLAMP = 1e-7
LOG_VAR_MIN = -12.0
LOG_VAR_MAX = 6.0


def bce_loss(q: np.ndarray, s: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``q``.

    ``q`` is clamped to [1e-7, 1 - 1e-7]; the gradient is zero where the clamp
    is active.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(q.shape)
    n = max(q.shape[0], 1) if q.ndim else 1
    qc = np.clip(q, Q_CLAMP, 1.0 - Q_CLAMP)
    loss = -(s * np.log(qc) + (1.0 - s) * np.log(1.0 - qc))
    grad = (-(s / qc) + (1.0 - s) / (1.0 - qc)) / n
    grad = np.where((q >= Q_CLAMP) & (q <= 1.0 - Q_CLAMP), grad, 0.0)
    return float(loss.sum() / n), grad


def clamp_log_var(log_var: np.ndarray) -> np.ndarray:
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def gaussian_nll_loss(mu: np.ndarray, log_var: np.ndarray, target: np.ndarray,
                      weights: np.ndarray | None = None):
    """sum_j [log s2_j + (t_j - mu_j)^2 / s2_j], averaged over the batch.

    Inputs have shape (batch, dims) or (dims,).  ``log_var`` is clamped to
    [-12, 6] and the clamp passes no gradient.  ``weights`` optionally scales
    each dimension's term.  Returns (loss, dL/dmu, dL/dlog_var).
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    for name, a in (("mu", mu), ("log_var", log_var), ("target", target)):
        check_finite(a, name)
    single = mu.ndim == 1
    if single:
        mu, log_var, target = mu[None], log_var[None], target[None]
    n = mu.shape[0]
    lv = clamp_log_var(log_var)
    inv = np.exp(-lv)
    r = target - mu
    terms = lv + r * r * inv
    w = np.ones(mu.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float((terms * w).sum() / n)
    dmu = -2.0 * r * inv * w / n
    dlv = (1.0 - r * r * inv) * w / n
    dlv = np.where((log_var >= LOG_VAR_MIN) & (log_var <= LOG_VAR_MAX), dlv, 0.0)
    if single:
        return loss, dmu[0], dlv[0]
    return loss, dmu, dlv
