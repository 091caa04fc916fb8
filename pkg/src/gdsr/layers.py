"""Parameterized building blocks shared by both branches."""

from __future__ import annotations

import numpy as np

from .autograd import Module, Parameter, Tensor
from .autograd import functional as F


class Conv2d(Module):
    """Same-size k x k convolution with bias.

    Weights are drawn uniformly with bound 1/sqrt(fan_in); ``zero=True`` makes
    the layer start at exactly zero (used for residual branch outputs).
    """

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 dtype=np.float32, zero: bool = False):
        bound = 1.0 / np.sqrt(cin * k * k)
        if zero:
            w = np.zeros((cout, cin, k, k))
            b = np.zeros(cout)
        else:
            w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
            b = rng.uniform(-bound, bound, size=cout)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(b, dtype=dtype)
        self.pad = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=1, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, c: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(c), dtype=dtype)
        self.beta = Parameter(np.zeros(c), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


def scalar_param(value: float, dtype=np.float32) -> Parameter:
    return Parameter(np.asarray(value), dtype=dtype)


def conv_param_count(cin: int, cout: int, k: int) -> int:
    return cout * cin * k * k + cout
