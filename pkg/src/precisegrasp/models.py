"""Grasp quality network, displacement networks, and the LOWESS baseline.

Every network shares one two-branch layout::

    image  (1 x 64 x 64)
      conv 5x5x16 stride 2 pad 2 -> ReLU      32 x 32
      conv 5x5x32 stride 2 pad 2 -> ReLU      16 x 16
      conv 3x3x64 stride 2 pad 1 -> ReLU       8 x 8
      flatten -> FC 128 -> ReLU
    action (3 or 4)
      FC 16 -> ReLU
    concat (144) -> FC 64 -> ReLU -> dropout 0.5 -> head

Heads: quality 1 unit + sigmoid; mean-only 4 units; mean and variance 8 units
(4 means then 4 log-variances).

=========== ====== ======== ===========
model       action head     parameters
=========== ====== ======== ===========
GQN         3      1        565,569
GCIP-M      3      4        565,764
GCIP-M+V    3      8        566,024
OCFI-M      4      4        565,780
OCFI-M+V    4      8        566,040
=========== ====== ======== ===========

Displacement targets are trained in the closing-axis frame: the in-plane
part of the grasp displacement is rotated by ``-gtheta`` before scaling, and
predictions are rotated back by ``gtheta``.  Predicted variances reported in
the part frame are the diagonal of the rotated covariance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RejectedInputError, TransferError, UnknownObjectError
from .parts import rotation
from .sensor import standardize
from .tensor.core import check_finite
from .tensor.layers import Conv2D, Dense, Dropout, Flatten, ReLU, Sequential, sigmoid, sigmoid_backward
from .tensor.losses import LOG_VAR_MAX, LOG_VAR_MIN, bce_loss, clamp_log_var, gaussian_nll_loss
from .tensor.optim import RMSProp

VARIANTS = ("OCFI-M", "OCFI-M+V", "GCIP-M", "GCIP-M+V")

TRANSLATION_RANGE = 0.075
HEIGHT_BOUND = 0.08
ANGLE_RANGE = 0.5 * math.pi
TARGET_TRANSLATION_SCALE = 0.05
TARGET_ANGLE_SCALE = 0.5 * math.pi

LOWESS_SIGMA = (0.02, 0.02, 0.05, 1.00)


# ---------------------------------------------------------------------------
# scaling


class ActionScaler:
    """Affine map of (gx, gy, gz[, gtheta]) into [-1, 1], counting clips."""

    def __init__(self):
        self.clipped = 0

    @staticmethod
    def ranges(dim: int) -> np.ndarray:
        r = np.array([TRANSLATION_RANGE, TRANSLATION_RANGE, HEIGHT_BOUND, ANGLE_RANGE])
        return r[:dim]

    def scale(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        s = g / self.ranges(g.shape[-1])
        out = np.clip(s, -1.0, 1.0)
        self.clipped += int(np.count_nonzero(out != s))
        return out

    def unscale(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        return a * self.ranges(a.shape[-1])


_DEFAULT_SCALER = ActionScaler()


def scale_action(g, scaler: ActionScaler | None = None) -> np.ndarray:
    return (scaler or _DEFAULT_SCALER).scale(g)


def unscale_action(a) -> np.ndarray:
    return ActionScaler().unscale(a)


_TARGET_SCALE = np.array([TARGET_TRANSLATION_SCALE, TARGET_TRANSLATION_SCALE,
                          TARGET_TRANSLATION_SCALE, TARGET_ANGLE_SCALE])


def scale_target(dg) -> np.ndarray:
    return np.asarray(dg, dtype=np.float64) / _TARGET_SCALE


def unscale_prediction(mu, var=None):
    mu = np.asarray(mu, dtype=np.float64) * _TARGET_SCALE
    if var is None:
        return mu, None
    return mu, np.asarray(var, dtype=np.float64) * _TARGET_SCALE ** 2


def to_closing_frame(dg: np.ndarray, gtheta: np.ndarray) -> np.ndarray:
    """Rotate the in-plane components of part-frame vectors by ``-gtheta``."""
    dg = np.array(dg, dtype=np.float64)
    c, s = np.cos(gtheta), np.sin(gtheta)
    x, y = dg[..., 0].copy(), dg[..., 1].copy()
    dg[..., 0] = c * x + s * y
    dg[..., 1] = -s * x + c * y
    return dg


def from_closing_frame(u: np.ndarray, gtheta: np.ndarray, var: np.ndarray | None = None):
    """Inverse of :func:`to_closing_frame`; also rotates a diagonal variance."""
    u = np.array(u, dtype=np.float64)
    c, s = np.cos(gtheta), np.sin(gtheta)
    x, y = u[..., 0].copy(), u[..., 1].copy()
    u[..., 0] = c * x - s * y
    u[..., 1] = s * x + c * y
    if var is None:
        return u, None
    var = np.array(var, dtype=np.float64)
    vx, vy = var[..., 0].copy(), var[..., 1].copy()
    var[..., 0] = c * c * vx + s * s * vy
    var[..., 1] = s * s * vx + c * c * vy
    return u, var


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class NetSpec:
    image_size: int = 64
    channels: tuple = (16, 32, 64)
    kernels: tuple = (5, 5, 3)
    pads: tuple = (2, 2, 1)
    stride: int = 2
    image_fc: int = 128
    action_fc: int = 16
    merge_fc: int = 64
    dropout: float = 0.5

    def flat_size(self) -> int:
        size = self.image_size
        for k, p in zip(self.kernels, self.pads):
            size = (size + 2 * p - k) // self.stride + 1
        return self.channels[-1] * size * size


FULL_SPEC = NetSpec()


class TwoBranchNet:
    """Image and action branches merged into a linear head."""

    def __init__(self, action_dim: int, out_dim: int, seed: int = 0, spec: NetSpec = FULL_SPEC,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.spec, self.action_dim, self.out_dim, self.dtype = spec, action_dim, out_dim, dtype
        convs, layers, in_ch = [], [], 1
        for i, (ch, k, p) in enumerate(zip(spec.channels, spec.kernels, spec.pads)):
            conv = Conv2D(in_ch, ch, k, spec.stride, p, rng, f"conv{i + 1}", dtype, need_dx=i > 0)
            convs.append(conv)
            layers += [conv, ReLU()]
            in_ch = ch
        self.convs = convs
        self.image = Sequential(layers + [Flatten(), Dense(spec.flat_size(), spec.image_fc, rng, "image_fc", dtype),
                                          ReLU()])
        self.action = Sequential([Dense(action_dim, spec.action_fc, rng, "action_fc", dtype), ReLU()])
        self.dropout = Dropout(spec.dropout, seed=int(rng.integers(2 ** 63)))
        self.merge = Sequential([Dense(spec.image_fc + spec.action_fc, spec.merge_fc, rng, "merge_fc", dtype),
                                 ReLU(), self.dropout])
        self.head = Dense(spec.merge_fc, out_dim, rng, "head", dtype, gain=1.0)
        self.params = self.image.params + self.action.params + self.merge.params + self.head.params

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def named_params(self) -> dict:
        return {p.name: p for p in self.params}

    def forward(self, images: np.ndarray, actions: np.ndarray, training: bool = False) -> np.ndarray:
        if images.ndim == 3:
            images = images[..., None]
        images = images.astype(self.dtype, copy=False)
        actions = actions.astype(self.dtype, copy=False)
        hi = self.image.forward(images, training)
        ha = self.action.forward(actions, training)
        self._split = hi.shape[1]
        h = self.merge.forward(np.concatenate([hi, ha], axis=1), training)
        return self.head.forward(h, training)

    def backward(self, dout: np.ndarray):
        dh = self.merge.backward(self.head.backward(dout.astype(self.dtype, copy=False)))
        self.image.backward(dh[:, :self._split])
        self.action.backward(dh[:, self._split:])

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {p.name: p.values.astype(np.float64) for p in self.params}

    def load_state_dict(self, named: dict):
        own = self.named_params()
        if set(own) != set(named):
            raise ConfigurationError("checkpoint parameter names do not match the network")
        for k, v in named.items():
            if own[k].values.shape != v.shape:
                raise ConfigurationError(f"shape mismatch for {k}: {v.shape} vs {own[k].values.shape}")
            own[k].values[...] = v


# ---------------------------------------------------------------------------
# models


def _images(images) -> np.ndarray:
    return standardize(np.asarray(images, dtype=np.float64))


class GqnModel:
    """Lift probability from a grasp-aligned patch and (gx, gy, gz)."""

    kind = "GQN"

    def __init__(self, seed: int = 0, spec: NetSpec = FULL_SPEC, dtype=np.float64):
        self.net = TwoBranchNet(3, 1, seed, spec, dtype)

    def forward(self, images_std, actions_scaled, training=False) -> np.ndarray:
        return sigmoid(self.net.forward(images_std, actions_scaled, training)[:, 0])

    def predict(self, patches, grasps, batch: int = 256) -> np.ndarray:
        """Quality for raw (unstandardized) patches and physical grasp arrays."""
        grasps = np.atleast_2d(grasps)
        out = np.empty(len(grasps))
        for i in range(0, len(grasps), batch):
            out[i:i + batch] = self.forward(_images(patches[i:i + batch]),
                                            scale_action(grasps[i:i + batch, :3]))
        return out


class GdnModel:
    """Per-dimension Gaussian over the grasp displacement."""

    def __init__(self, variant: str, seed: int = 0, spec: NetSpec = FULL_SPEC, dtype=np.float64):
        if variant not in VARIANTS:
            raise RejectedInputError(f"unknown displacement model variant {variant!r}")
        self.variant = variant
        self.kind = variant
        self.observation = "gcip" if variant.startswith("GCIP") else "ocfi"
        self.action_dim = 3 if self.observation == "gcip" else 4
        self.has_variance = variant.endswith("+V")
        self.net = TwoBranchNet(self.action_dim, 8 if self.has_variance else 4, seed, spec, dtype)

    def split(self, out: np.ndarray):
        mu = out[:, :4]
        if not self.has_variance:
            return mu, None
        return mu, clamp_log_var(out[:, 4:])

    def forward_scaled(self, images_std, actions_scaled, training=False):
        """(mu, log_var or None) in scaled closing-axis units."""
        return self.split(self.net.forward(images_std, actions_scaled, training))

    def predict(self, images, grasps, batch: int = 256):
        """Part-frame displacement mean and variance in physical units.

        ``images`` are raw full views or patches to match the variant;
        ``grasps`` are physical (gx, gy, gz, gtheta) rows.
        """
        grasps = np.atleast_2d(grasps)
        mus, vars_ = [], []
        for i in range(0, len(grasps), batch):
            g = grasps[i:i + batch]
            mu, lv = self.forward_scaled(_images(images[i:i + batch]), scale_action(g[:, :self.action_dim]))
            mu, var = unscale_prediction(mu, None if lv is None else np.exp(lv))
            mu, var = from_closing_frame(mu, g[:, 3], var)
            mus.append(mu)
            vars_.append(var)
        mu = np.concatenate(mus)
        var = np.concatenate(vars_) if self.has_variance else None
        return mu, var


def transfer_conv(src: TwoBranchNet, dst: TwoBranchNet):
    if len(src.convs) != len(dst.convs):
        raise TransferError("convolution stacks differ in depth")
    for a, b in zip(src.convs, dst.convs):
        for pa, pb in zip(a.params, b.params):
            if pa.values.shape != pb.values.shape or pa.values.dtype != pb.values.dtype:
                raise TransferError(f"cannot transfer {pa.name}: {pa.values.shape} vs {pb.values.shape}")
            pb.values = pa.values.copy()


def init_gdn_from_gqn(gqn: GqnModel, variant: str, seed: int = 0) -> GdnModel:
    """Fresh displacement model; patch variants start from the GQN's filters."""
    spec = gqn.net.spec
    gdn = GdnModel(variant, seed, spec, gqn.net.dtype)
    if gdn.observation == "gcip":
        transfer_conv(gqn.net, gdn.net)
    return gdn


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-5
    decay: float = 1e-6
    seed: int = 0
    metrics_csv: str | None = None


@dataclass
class TrainResult:
    model: object
    metrics: list = field(default_factory=list)


def _write_metrics(path, rows):
    if not path or not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _prepare_images(images, dtype) -> np.ndarray:
    return standardize(np.asarray(images, dtype=np.float64)).astype(dtype)[..., None]


def _batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch):
        yield order[i:i + batch]


def gqn_accuracy(model: GqnModel, images_std, actions, labels, batch: int = 512) -> float:
    if len(labels) == 0:
        return float("nan")
    hits = 0
    for i in range(0, len(labels), batch):
        q = model.forward(images_std[i:i + batch], actions[i:i + batch])
        hits += int(np.count_nonzero((q >= 0.5) == (labels[i:i + batch] > 0.5)))
    return hits / len(labels)


def train_gqn(train, val=None, cfg: TrainConfig = TrainConfig(), model: GqnModel | None = None,
              spec: NetSpec = FULL_SPEC, dtype=np.float64) -> TrainResult:
    """Train on (patches, grasps, labels) tuples of raw arrays."""
    patches, grasps, labels = train
    if len(labels) == 0:
        raise RejectedInputError("no training data for the quality network")
    model = model or GqnModel(cfg.seed, spec, dtype)
    x = _prepare_images(patches, model.net.dtype)
    a = scale_action(np.asarray(grasps)[:, :3]).astype(model.net.dtype)
    y = np.asarray(labels, dtype=np.float64)
    if val is not None and len(val[2]):
        xv = _prepare_images(val[0], model.net.dtype)
        av = scale_action(np.asarray(val[1])[:, :3]).astype(model.net.dtype)
        yv = np.asarray(val[2], dtype=np.float64)
    else:
        xv = None
    opt = RMSProp(model.net.params, cfg.lr, cfg.decay)
    rng = np.random.default_rng(cfg.seed)
    model.net.dropout.reseed(int(rng.integers(2 ** 63)))
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(len(y), cfg.batch_size, rng):
            opt.zero_grad()
            logits = model.net.forward(x[idx], a[idx], training=True)
            q = sigmoid(logits[:, 0].astype(np.float64))
            loss, dq = bce_loss(q, y[idx])
            dz = sigmoid_backward(dq, q)
            model.net.backward(dz[:, None])
            opt.step()
            total += loss * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "loss": total / seen, "train_accuracy": gqn_accuracy(model, x, a, y)}
        row["val_accuracy"] = gqn_accuracy(model, xv, av, yv) if xv is not None else float("nan")
        rows.append(row)
    _write_metrics(cfg.metrics_csv, rows)
    return TrainResult(model, rows)


def gdn_targets(dg: np.ndarray, grasps: np.ndarray) -> np.ndarray:
    """Scaled closing-axis-frame training targets."""
    return scale_target(to_closing_frame(dg, np.asarray(grasps)[:, 3]))


def displacement_rmse(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Per-dimension RMSE: cm for translations, degrees for rotation."""
    err = pred - true
    err[:, 3] = _wrap_array(err[:, 3])
    rmse = np.sqrt((err ** 2).mean(axis=0))
    return rmse * np.array([100.0, 100.0, 100.0, 180.0 / math.pi])


def train_gdn(train, variant: str, val=None, cfg: TrainConfig = TrainConfig(),
              model: GdnModel | None = None, spec: NetSpec = FULL_SPEC, dtype=np.float64) -> TrainResult:
    """Train on (images, grasps, grasp displacements) of successful attempts.

    Mean-only variants hold the variance at one, which turns the loss into a
    sum of squared errors.
    """
    images, grasps, dg = train
    if len(dg) == 0:
        raise RejectedInputError("no successful grasps to train a displacement model")
    model = model or GdnModel(variant, cfg.seed, spec, dtype)
    if model.variant != variant:
        raise RejectedInputError(f"model is {model.variant}, asked to train {variant}")
    grasps = np.asarray(grasps, dtype=np.float64)
    x = _prepare_images(images, model.net.dtype)
    a = scale_action(grasps[:, :model.action_dim]).astype(model.net.dtype)
    t = gdn_targets(np.asarray(dg, dtype=np.float64), grasps)
    opt = RMSProp(model.net.params, cfg.lr, cfg.decay)
    rng = np.random.default_rng(cfg.seed)
    model.net.dropout.reseed(int(rng.integers(2 ** 63)))
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(len(t), cfg.batch_size, rng):
            opt.zero_grad()
            out = model.net.forward(x[idx], a[idx], training=True).astype(np.float64)
            mu = out[:, :4]
            if model.has_variance:
                loss, dmu, dlv = gaussian_nll_loss(mu, out[:, 4:], t[idx])
                dout = np.concatenate([dmu, dlv], axis=1)
            else:
                loss, dout, _ = gaussian_nll_loss(mu, np.zeros_like(mu), t[idx])
            check_finite(dout, "loss gradient")
            model.net.backward(dout)
            opt.step()
            total += loss * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "loss": total / seen}
        if val is not None and len(val[2]):
            pred, _ = model.predict(val[0], val[1])
            r = displacement_rmse(pred, np.asarray(val[2], dtype=np.float64))
            row.update({"val_rmse_x_cm": r[0], "val_rmse_y_cm": r[1], "val_rmse_z_cm": r[2],
                        "val_rmse_theta_deg": r[3]})
        rows.append(row)
    _write_metrics(cfg.metrics_csv, rows)
    return TrainResult(model, rows)


# ---------------------------------------------------------------------------
# LOWESS


def object_frame_grasps(pose, grasps: np.ndarray) -> np.ndarray:
    """Camera-aligned grasp rows (relative to the centroid) -> part frame."""
    grasps = np.atleast_2d(np.asarray(grasps, dtype=np.float64))
    out = grasps.copy()
    out[:, :2] = grasps[:, :2] @ rotation(pose.theta)
    return out


def _wrap_array(a: np.ndarray) -> np.ndarray:
    w = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


class LowessModel:
    """Kernel-weighted average of stored part-frame grasp displacements."""

    kind = "LOWESS"
    has_variance = True

    def __init__(self, memory: dict, sigma=LOWESS_SIGMA):
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self._inv = 1.0 / self.sigma
        self.memory = {}
        for pid, (g, dg) in memory.items():
            g = np.array(np.atleast_2d(g), dtype=np.float64)
            dg = np.array(np.atleast_2d(dg), dtype=np.float64)
            if len(g) == 0 or len(g) != len(dg):
                raise RejectedInputError(f"part {pid}: need matching, non-empty grasp and displacement rows")
            g.setflags(write=False)
            dg.setflags(write=False)
            self.memory[int(pid)] = (g, dg)

    @classmethod
    def from_records(cls, part_ids, poses, grasps, dg, sigma=LOWESS_SIGMA) -> "LowessModel":
        """Build from columnar successful attempts; grasps are camera-aligned."""
        part_ids = np.asarray(part_ids)
        mem = {}
        for pid in np.unique(part_ids):
            sel = np.flatnonzero(part_ids == pid)
            gs = np.concatenate([object_frame_grasps(poses[i], grasps[i]) for i in sel])
            mem[int(pid)] = (gs, np.asarray(dg)[sel])
        return cls(mem, sigma)

    def knows(self, part_id: int) -> bool:
        return int(part_id) in self.memory

    def _weights(self, stored: np.ndarray, query: np.ndarray):
        d = query[:, None, :] - stored[None, :, :]
        d[..., 3] = _wrap_array(d[..., 3])
        m = (d * d * self._inv).sum(axis=-1)
        return np.exp(-0.5 * m), m

    def predict(self, part_id: int, query, with_variance: bool = False):
        """Part-frame query rows (gx, gy, gz, gtheta) -> predicted displacement rows."""
        if not self.knows(part_id):
            raise UnknownObjectError(f"part {part_id} is not in the LOWESS memory")
        stored, dg = self.memory[int(part_id)]
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        w, m = self._weights(stored, q)
        total = w.sum(axis=1)
        mu = np.empty((len(q), 4))
        var = np.empty((len(q), 4))
        ok = total >= 1e-300
        if ok.any():
            wn = w[ok] / total[ok, None]
            mu[ok] = wn @ dg
            var[ok] = wn @ (dg * dg) - mu[ok] ** 2
        for i in np.flatnonzero(~ok):
            j = int(np.argmin(m[i]))
            mu[i] = dg[j]
            var[i] = 0.0
        var = np.maximum(var, 0.0)
        if with_variance:
            return mu, var
        return mu


def lowess_predict(model: LowessModel, part_id: int, query) -> np.ndarray:
    out = model.predict(part_id, query)
    return out[0] if np.ndim(query) == 1 else out


def variance_bounds() -> tuple[float, float]:
    return math.exp(LOG_VAR_MIN), math.exp(LOG_VAR_MAX)
