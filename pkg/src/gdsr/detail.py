"""Detail branch: residual convolution blocks and their plain sequential group."""

from __future__ import annotations

import numpy as np

from .autograd import Module, Tensor
from .autograd import functional as F
from .layers import Conv2d, conv_param_count, scalar_param


class Rcb(Module):
    """out = alpha * x + w1(leaky_relu(w0(x))), with w1 starting at zero."""

    def __init__(self, c: int, rng: np.random.Generator, dtype=np.float32):
        self.w0 = Conv2d(c, c, 3, rng, dtype)
        self.w1 = Conv2d(c, c, 3, rng, dtype, zero=True)
        self.alpha = scalar_param(1.0, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.alpha * x + self.w1(F.leaky_relu(self.w0(x)))


class Rdeg(Module):
    def __init__(self, c: int, n_blocks: int, rng: np.random.Generator, dtype=np.float32):
        if n_blocks < 1:
            raise ValueError("a detail group needs at least one RCB")
        self.blocks = [Rcb(c, rng, dtype) for _ in range(n_blocks)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    @property
    def radius(self) -> int:
        """Half-width of the receptive field (two 3x3 convs per block)."""
        return 2 * len(self.blocks)


def rcb_param_count(c: int) -> int:
    return 2 * conv_param_count(c, c, 3) + 1


def rdeg_param_count(c: int, n_blocks: int) -> int:
    return n_blocks * rcb_param_count(c)


def rcb_forward(x: Tensor, p: Rcb) -> Tensor:
    return p(x)


def rdeg_forward(x: Tensor, g: Rdeg) -> Tensor:
    return g(x)
