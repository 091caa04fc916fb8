"""Permuted spatial attention and the global-detail reconstruction module."""

from __future__ import annotations

import numpy as np

from .autograd import DimensionError, Module, Tensor
from .autograd import functional as F
from .layers import Conv2d, conv_param_count

SA_KERNEL = 7

# Axis orders that move the pooled axis into the channel slot. Each is its own inverse.
PERMUTATIONS = {
    "hw": None,            # pool over C, gate over (H, W)
    "cw": (0, 2, 1, 3),    # N x H x C x W: pool over H, gate over (C, W)
    "hc": (0, 3, 2, 1),    # N x W x H x C: pool over W, gate over (H, C)
}


class SpatialAttention(Module):
    """x * sigmoid(conv7([mean_c(x); max_c(x)]))."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.conv7 = Conv2d(2, 1, SA_KERNEL, rng, dtype)

    def gate(self, x: Tensor) -> Tensor:
        pooled = F.concat([F.mean(x, axis=1, keepdims=True), F.max(x, axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv7(pooled))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class Psam(Module):
    def __init__(self, rng: np.random.Generator, dtype=np.float32, coeff: float = 1.0 / 3.0):
        self.sa_hw = SpatialAttention(rng, dtype)
        self.sa_cw = SpatialAttention(rng, dtype)
        self.sa_hc = SpatialAttention(rng, dtype)
        self.coeff = coeff

    def forward(self, x: Tensor) -> Tensor:
        total = None
        for key, sa in (("hw", self.sa_hw), ("cw", self.sa_cw), ("hc", self.sa_hc)):
            axes = PERMUTATIONS[key]
            y = sa(x) if axes is None else F.transpose(sa(F.transpose(x, axes)), axes)
            total = y if total is None else total + y
        return total * self.coeff


class Gdrm(Module):
    """out = w * (g + d) + b with w = sigmoid(W0(lrelu(s))), b = W1(s), s = Wshared([g; d])."""

    def __init__(self, c: int, rng: np.random.Generator, dtype=np.float32, coeff: float = 1.0 / 3.0):
        self.psam_g = Psam(rng, dtype, coeff)
        self.psam_d = Psam(rng, dtype, coeff)
        self.w_shared = Conv2d(2 * c, c, 3, rng, dtype)
        self.w0 = Conv2d(c, c, 3, rng, dtype)
        self.w1 = Conv2d(c, c, 3, rng, dtype)

    def gate_and_bias(self, g: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        s = self.w_shared(F.concat([g, d], axis=1))
        return F.sigmoid(self.w0(F.leaky_relu(s))), self.w1(s)

    def forward(self, f_g: Tensor, f_d: Tensor) -> Tensor:
        if f_g.shape != f_d.shape:
            raise DimensionError(f"GDRM inputs differ: {f_g.shape} vs {f_d.shape}")
        g = self.psam_g(f_g)
        d = self.psam_d(f_d)
        w, b = self.gate_and_bias(g, d)
        return w * (g + d) + b


def psam_param_count() -> int:
    return 3 * conv_param_count(2, 1, SA_KERNEL)


def gdrm_param_count(c: int) -> int:
    return 2 * psam_param_count() + conv_param_count(2 * c, c, 3) + 2 * conv_param_count(c, c, 3)


def spatial_attention(x: Tensor, p: SpatialAttention) -> Tensor:
    return p(x)


def psam(x: Tensor, p: Psam) -> Tensor:
    return p(x)


def gdrm_forward(f_g: Tensor, f_d: Tensor, p: Gdrm) -> Tensor:
    return p(f_g, f_d)
