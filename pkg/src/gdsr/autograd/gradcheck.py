"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    data = x.data
    num = np.zeros(data.shape)
    with no_grad():
        # index the array itself: reshape(-1) would copy a non-contiguous view
        for idx in np.ndindex(data.shape):
            orig = data[idx]
            data[idx] = orig + h
            fp = f(x).item()
            data[idx] = orig - h
            fm = f(x).item()
            data[idx] = orig
            num[idx] = (fp - fm) / (2.0 * h)
    return num


def analytic_gradient(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        f(x).backward()
        g = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    finally:
        x.grad = None
        x.requires_grad = was
    return g


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``x`` may also be a parameter that ``f`` reads through a closure; it is
    perturbed in place and restored. Use float64 data.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check needs float64 tensors")
    ana = analytic_gradient(f, x)
    num = numerical_gradient(f, x, h)
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
    return float(np.max(np.abs(ana - num) / denom)) if ana.size else 0.0
