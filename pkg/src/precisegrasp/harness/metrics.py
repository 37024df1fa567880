"""Displacement error metrics."""

from __future__ import annotations

import math

import numpy as np

from ..errors import RejectedInputError


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.mod(np.asarray(a, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


def rmse_metrics(pred, true) -> tuple[float, float]:
    """(translational RMSE in cm, rotational RMSE in degrees) over paired rows.

    Rows are (dx, dy, dz, dtheta).  The translational error is the 3D
    Euclidean norm; angle errors are wrapped before squaring.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    true = np.atleast_2d(np.asarray(true, dtype=np.float64))
    if pred.shape != true.shape:
        raise RejectedInputError(f"prediction shape {pred.shape} does not match ground truth {true.shape}")
    if len(pred) == 0:
        raise RejectedInputError("rmse of an empty sequence")
    d = pred[:, :3] - true[:, :3]
    trans = math.sqrt(float((d * d).sum(axis=1).mean())) * 100.0
    rot = math.degrees(math.sqrt(float((wrap_angles(pred[:, 3] - true[:, 3]) ** 2).mean())))
    return trans, rot
