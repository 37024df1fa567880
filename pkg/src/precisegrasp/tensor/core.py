"""Dense tensor with value and gradient storage."""

from __future__ import annotations

import numpy as np

from ..errors import NumericFault, ShapeError


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericFault(f"non-finite values in {what}")
    return a


class Tensor:
    """A named parameter or activation buffer.

    ``values`` default to float64; ``grad`` is allocated lazily and always has
    the same shape and dtype as ``values``.
    """

    def __init__(self, values, name: str = "", dtype=np.float64):
        self.values = np.array(values, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0.0)

    def accumulate(self, g: np.ndarray):
        if g.shape != self.values.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match {self.values.shape} for {self.name}")
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def astype(self, dtype) -> "Tensor":
        t = Tensor(self.values.astype(dtype), self.name, dtype)
        return t

    def copy(self) -> "Tensor":
        return Tensor(self.values.copy(), self.name, self.values.dtype)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.values.dtype})"
