"""Layer primitives with hand-written backward passes.

The public convolution functions take (batch, channels, rows, cols) input;
layer objects keep activations channel-last, (batch, rows, cols, channels),
which makes the im2col gather and the matrix product layout-friendly.
Convolution is plain cross-correlation.  Strided convolutions fold the
stride phases into channels first (space-to-depth), so the im2col gather and
the backward scatter copy contiguous rows, one copy per folded tap.
"""

from __future__ import annotations

import numpy as np
from ..errors import ShapeError
from .core import Tensor


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _phase_weights(w: np.ndarray, stride: int) -> np.ndarray:
    """(out, in, k, k) filters -> (kk, kk, s*s*in, out) phase matrix, kk = ceil(k / s).

    Taps past the kernel edge are zero.
    """
    f, c, k, _ = w.shape
    kk = -(-k // stride)
    wp = np.zeros((f, c, kk * stride, kk * stride), dtype=w.dtype)
    wp[:, :, :k, :k] = w
    # wp[f, c, a*s + r, b*s + t] -> [a, b, r, t, c, f]
    wp = wp.reshape(f, c, kk, stride, kk, stride).transpose(2, 4, 3, 5, 1, 0)
    return np.ascontiguousarray(wp.reshape(kk, kk, stride * stride * c, f))


def _phase_grad_to_filters(dwp: np.ndarray, stride: int, c: int, k: int) -> np.ndarray:
    kk, _, _, f = dwp.shape
    g = dwp.reshape(kk, kk, stride, stride, c, f).transpose(5, 4, 0, 2, 1, 3)
    g = g.reshape(f, c, kk * stride, kk * stride)
    return np.ascontiguousarray(g[:, :, :k, :k])


def _space_to_depth(x: np.ndarray, pad: int, stride: int, rows: int, cols: int) -> np.ndarray:
    """Zero-pad channel-last input to (rows*s, cols*s) and fold s x s phases into channels."""
    n, h, wd, c = x.shape
    xp = np.zeros((n, rows * stride, cols * stride, c), dtype=x.dtype)
    hh = min(h, rows * stride - pad)
    ww = min(wd, cols * stride - pad)
    xp[:, pad:pad + hh, pad:pad + ww, :] = x[:, :hh, :ww, :]
    xs = xp.reshape(n, rows, stride, cols, stride, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(xs).reshape(n, rows, cols, stride * stride * c)


def _depth_to_space(xs: np.ndarray, pad: int, stride: int, h: int, wd: int, c: int) -> np.ndarray:
    n, rows, cols, _ = xs.shape
    xp = xs.reshape(n, rows, cols, stride, stride, c).transpose(0, 1, 3, 2, 4, 5)
    xp = xp.reshape(n, rows * stride, cols * stride, c)
    out = np.zeros((n, h, wd, c), dtype=xs.dtype)
    hh = min(h, rows * stride - pad)
    ww = min(wd, cols * stride - pad)
    out[:, :hh, :ww, :] = xp[:, pad:pad + hh, pad:pad + ww, :]
    return out


def conv2d_forward_nhwc(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, pad: int = 0):
    """Cross-correlation on channel-last input; ``w`` is (out, in, k, k).

    A stride-s convolution is evaluated as a stride-1 convolution over the
    space-to-depth folded input, so every gather copies whole rows.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and filters, got {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"input has {c} channels, filters expect {cw}")
    if kh != kw:
        raise ShapeError("only square kernels are supported")
    k = kh
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(wd, k, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"kernel {k} does not fit input {h}x{wd} with padding {pad}")
    kk = -(-k // stride)
    xs = _space_to_depth(x, pad, stride, ho + kk - 1, wo + kk - 1)
    cs = xs.shape[-1]
    cols = np.empty((n, ho, wo, kk, kk, cs), dtype=x.dtype)
    for a in range(kk):
        for bb in range(kk):
            cols[:, :, :, a, bb, :] = xs[:, a:a + ho, bb:bb + wo, :]
    cols = cols.reshape(n * ho * wo, kk * kk * cs)
    wmat = _phase_weights(w, stride).reshape(kk * kk * cs, f)
    out = cols @ wmat
    if b is not None:
        out += b
    return out.reshape(n, ho, wo, f), (x.shape, cols, w, wmat, stride, pad, ho, wo)


def conv2d_backward_nhwc(dout: np.ndarray, cache, need_dx: bool = True):
    """Returns (dx, dw, db); dx is None when ``need_dx`` is false."""
    xshape, cols, w, wmat, stride, pad, ho, wo = cache
    n, h, wd, c = xshape
    f, _, k, _ = w.shape
    if dout.shape != (n, ho, wo, f):
        raise ShapeError(f"upstream gradient {dout.shape} does not match output {(n, ho, wo, f)}")
    kk = -(-k // stride)
    cs = stride * stride * c
    d2 = dout.reshape(-1, f)
    dw = _phase_grad_to_filters((cols.T @ d2).reshape(kk, kk, cs, f), stride, c, k)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ wmat.T).reshape(n, ho, wo, kk, kk, cs)
    dxs = np.zeros((n, ho + kk - 1, wo + kk - 1, cs), dtype=dout.dtype)
    for a in range(kk):
        for bb in range(kk):
            dxs[:, a:a + ho, bb:bb + wo, :] += dcols[:, :, :, a, bb, :]
    return _depth_to_space(dxs, pad, stride, h, wd, c), dw, db


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, pad: int = 0):
    """Cross-correlation on (batch, channels, rows, cols) input.  Returns (output, cache)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input, got {x.shape}")
    out, cache = conv2d_forward_nhwc(x.transpose(0, 2, 3, 1), w, b, stride, pad)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cache


def conv2d_backward(dout: np.ndarray, cache):
    """Returns (dx, dw, db) for :func:`conv2d_forward`."""
    if dout.ndim != 4:
        raise ShapeError(f"conv2d gradient must be 4-d, got {dout.shape}")
    dx, dw, db = conv2d_backward_nhwc(np.ascontiguousarray(dout.transpose(0, 2, 3, 1)), cache)
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), dw, db


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"fully connected layer expects (n, {w.shape[0]}), got {x.shape}")
    return x @ w + b, (x, w)


def fc_backward(dout: np.ndarray, cache):
    x, w = cache
    if dout.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(f"upstream gradient {dout.shape} does not match {(x.shape[0], w.shape[1])}")
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dout * y * (1.0 - y)


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def dropout(x: np.ndarray, rate: float = 0.5, training: bool = False, seed: int | None = None):
    """Returns (output, mask); the mask is None in eval mode."""
    if not training or rate == 0.0:
        return x, None
    mask = dropout_mask(x.shape, rate, np.random.default_rng(seed), x.dtype)
    return x * mask, mask


# ---------------------------------------------------------------------------
# layer objects


class Layer:
    params: tuple = ()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """Channel-last convolution; filters are stored as (out, in, k, k)."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, name: str, dtype=np.float64, need_dx: bool = True):
        std = np.sqrt(2.0 / (in_ch * k * k))
        self.w = Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)), f"{name}.w", dtype)
        self.b = Tensor(np.zeros(out_ch), f"{name}.b", dtype)
        self.stride, self.pad = stride, pad
        self.need_dx = need_dx
        self.params = (self.w, self.b)

    def forward(self, x, training=False):
        out, self._cache = conv2d_forward_nhwc(x, self.w.values, self.b.values, self.stride, self.pad)
        return out

    def backward(self, dout):
        dx, dw, db = conv2d_backward_nhwc(dout, self._cache, self.need_dx)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return dx


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str,
                 dtype=np.float64, gain: float = 2.0):
        std = np.sqrt(gain / n_in)
        self.w = Tensor(rng.normal(0.0, std, size=(n_in, n_out)), f"{name}.w", dtype)
        self.b = Tensor(np.zeros(n_out), f"{name}.b", dtype)
        self.params = (self.w, self.b)

    def forward(self, x, training=False):
        out, self._cache = fc_forward(x, self.w.values, self.b.values)
        return out

    def backward(self, dout):
        dx, dw, db = fc_backward(dout, self._cache)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return dx


class ReLU(Layer):
    def forward(self, x, training=False):
        self._x = x
        return relu(x)

    def backward(self, dout):
        return relu_backward(dout, self._x)


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout drawing masks from a generator owned by the layer."""

    def __init__(self, rate: float = 0.5, seed: int = 0):
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self._mask = None

    def reseed(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = dropout_mask(x.shape, self.rate, self.rng, x.dtype)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)
        self.params = tuple(p for layer in self.layers for p in layer.params)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
