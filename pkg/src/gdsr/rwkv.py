"""Global branch: Omni-Shift, bidirectional WKV attention and the RWKV residual group.

The bidirectional WKV of a token sequence ``k, v`` (shape ``T x C``) is, per
channel,

    out_t = (sum_{i != t} e^{k_i - w(|t-i|-1)/T} v_i + e^{k_t + u} v_t)
          / (sum_{i != t} e^{k_i - w(|t-i|-1)/T}     + e^{k_t + u})

so every output is a convex combination of the values. Three evaluators are
provided: a direct per-row-stabilized O(T^2) form (the oracle), an O(T)
two-sided recurrence, and a dense Toeplitz form that trades memory for
vectorization on short sequences. The differentiable op uses either of the
latter two; its backward is analytic and reuses the same decay sums.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import GeometryError, Module, NumericError, Parameter, Tensor
from .autograd import functional as F
from .layers import Conv2d, LayerNorm, conv_param_count, scalar_param

OMNI_KERNEL = 5
DENSE_LIMIT = 1 << 16  # C * T * T entries above which the scan evaluator is used


# -- WKV evaluators (plain numpy) ---------------------------------------------


def bi_wkv_naive(k: np.ndarray, v: np.ndarray, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Direct evaluation of the bidirectional WKV formula; inputs ``(..., T, C)``."""
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    T = k.shape[-2]
    dist = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :])
    # logits[..., t, i, c]
    logits = k[..., None, :, :] - w * ((dist[..., None] - 1.0) / T)
    diag = np.arange(T)
    logits[..., diag, diag, :] = k + u
    logits -= logits.max(axis=-2, keepdims=True)
    e = np.exp(logits)
    num = (e * v[..., None, :, :]).sum(axis=-2)
    den = e.sum(axis=-2)
    out = num / den
    if not np.all(np.isfinite(out)):
        raise NumericError("bi_wkv_naive produced non-finite values")
    return out


def _one_sided_scan(x: np.ndarray, decay: np.ndarray, weighted: bool):
    """P_t = sum_{i<t} d^{t-1-i} x_i and Q_t = sum_{i<t} (t-1-i) d^{t-1-i} x_i."""
    T = x.shape[-2]
    P = np.empty_like(x)
    Q = np.empty_like(x) if weighted else None
    acc = np.zeros(x.shape[:-2] + x.shape[-1:], dtype=x.dtype)
    wacc = np.zeros_like(acc)
    for t in range(T):
        P[..., t, :] = acc
        if weighted:
            Q[..., t, :] = wacc
            wacc = decay * (wacc + acc)
        acc = decay * acc + x[..., t, :]
    return P, Q


def decay_sum_scan(x: np.ndarray, decay: np.ndarray, weighted: bool = False):
    """Two-sided decayed sums over the token axis in O(T).

    Returns ``S_t = sum_{i != t} d^{|t-i|-1} x_i`` and, when ``weighted``,
    ``sum_{i != t} (|t-i|-1) d^{|t-i|-1} x_i`` (else ``None``).
    """
    fwd, fwd_w = _one_sided_scan(x, decay, weighted)
    bwd, bwd_w = _one_sided_scan(x[..., ::-1, :], decay, weighted)
    s = fwd + bwd[..., ::-1, :]
    sw = fwd_w + bwd_w[..., ::-1, :] if weighted else None
    return s, sw


def _decay_matrix(T: int, decay: np.ndarray, weighted: bool) -> np.ndarray:
    dist = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :]).astype(np.float64)
    expo = np.maximum(dist - 1.0, 0.0)
    mat = decay[:, None, None] ** expo
    mat[:, np.arange(T), np.arange(T)] = 0.0
    if weighted:
        mat = mat * expo
    return mat


def _toeplitz_apply(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    lead = x.shape[:-2]
    T, C = x.shape[-2:]
    xm = x.reshape(-1, T, C).transpose(2, 1, 0)  # C, T, M
    out = mat @ xm
    return out.transpose(2, 1, 0).reshape(lead + (T, C))


def decay_sum_dense(x: np.ndarray, decay: np.ndarray, weighted: bool = False):
    """Same contract as :func:`decay_sum_scan`, via explicit C x T x T matrices."""
    T = x.shape[-2]
    s = _toeplitz_apply(_decay_matrix(T, decay, False), x)
    sw = _toeplitz_apply(_decay_matrix(T, decay, True), x) if weighted else None
    return s, sw


def _pick_method(method: str, T: int, C: int) -> str:
    if method == "auto":
        return "dense" if C * T * T <= DENSE_LIMIT else "scan"
    if method not in ("dense", "scan"):
        raise ValueError(f"unknown WKV method {method!r}")
    return method


def _decay_sums(x, decay, weighted, method):
    if method == "dense":
        return decay_sum_dense(x, decay, weighted)
    return decay_sum_scan(x, decay, weighted)


def _wkv_core(k, v, w, u, method):
    T = k.shape[-2]
    decay = np.exp(-w / T)
    shift = k.max(axis=-2, keepdims=True) + np.maximum(u, 0.0)
    a = np.exp(k - shift)
    eu = np.exp(u)
    sums, _ = _decay_sums(np.stack([a * v, a]), decay, False, method)
    bonus = eu * a
    num = sums[0] + bonus * v
    den = sums[1] + bonus
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    if not (np.all(np.isfinite(out)) and np.all(den > 0)):
        raise NumericError("bi_wkv: non-finite intermediate (keys or decay out of range)")
    return out, a, den, decay, eu


def bi_wkv_scan(k: np.ndarray, v: np.ndarray, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """O(T) bidirectional WKV via forward and backward decayed prefix sums."""
    k, v, w, u = (np.asarray(t, dtype=np.float64) for t in (k, v, w, u))
    return _wkv_core(k, v, w, u, "scan")[0]


def bi_wkv(k: Tensor, v: Tensor, w: Tensor, u: Tensor, method: str = "auto") -> Tensor:
    """Differentiable bidirectional WKV over ``(..., T, C)`` token tensors.

    Evaluated in float64 internally and cast back to the dtype of ``k``.
    """
    if k.shape != v.shape:
        raise GeometryError(f"bi_wkv: k {k.shape} and v {v.shape} differ")
    T, C = k.shape[-2:]
    if w.shape != (C,) or u.shape != (C,):
        raise GeometryError(f"bi_wkv: decay/bonus must have shape ({C},)")
    how = _pick_method(method, T, C)
    k64, v64 = k.data.astype(np.float64), v.data.astype(np.float64)
    w64, u64 = w.data.astype(np.float64), u.data.astype(np.float64)
    out, a, den, decay, eu = _wkv_core(k64, v64, w64, u64, how)
    red = tuple(range(k.ndim - 1))

    def backward(g):
        G = g.astype(np.float64) / den
        Go = G * out
        sums, _ = _decay_sums(np.stack([G, Go]), decay, False, how)
        direct = sums[0] + eu * G
        gv = a * direct
        gk = a * (v64 * direct - sums[1] - eu * Go)
        gu = (eu * a * G * (v64 - out)).sum(axis=red) if u.requires_grad else None
        gw = None
        if w.requires_grad:
            _, wsum = _decay_sums(np.stack([a * v64, a]), decay, True, how)
            gw = -(G * wsum[0] - Go * wsum[1]).sum(axis=red) / T
        return (gk.astype(k.dtype), gv.astype(v.dtype),
                None if gw is None else gw.astype(w.dtype),
                None if gu is None else gu.astype(u.dtype))

    return Tensor._from_op(out.astype(k.dtype), (k, v, w, u), backward)


def re_wkv(k: Tensor, v: Tensor, w: Tensor, u: Tensor, method: str = "auto") -> Tensor:
    """Two recurrent scan directions over a ``(..., H, W, C)`` token grid.

    Pass 1 attends in row-major order; pass 2 re-attends in column-major
    order using pass 1's output as values. Both passes share ``w`` and ``u``.
    """
    *lead, H, W, C = k.shape
    n = int(np.prod(lead)) if lead else 1
    k4 = k.reshape(n, H, W, C)
    v4 = v.reshape(n, H, W, C)
    o1 = bi_wkv(k4.reshape(n, H * W, C), v4.reshape(n, H * W, C), w, u, method)
    k_col = k4.transpose(0, 2, 1, 3).reshape(n, H * W, C)
    o1_col = o1.reshape(n, H, W, C).transpose(0, 2, 1, 3).reshape(n, H * W, C)
    o2 = bi_wkv(k_col, o1_col, w, u, method)
    return o2.reshape(n, W, H, C).transpose(0, 2, 1, 3).reshape(tuple(lead) + (H, W, C))


# -- token/map conversion -----------------------------------------------------


def to_tokens(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def to_map(t: Tensor, h: int, w: int) -> Tensor:
    n, T, c = t.shape
    if T != h * w:
        raise GeometryError(f"{T} tokens do not tile a {h}x{w} grid")
    return t.transpose(0, 2, 1).reshape(n, c, h, w)


def _batched(x: Tensor):
    return (x.reshape(1, *x.shape), True) if x.ndim == 2 else (x, False)


# -- parameter bundles --------------------------------------------------------


class OmniShift(Module):
    """5x5 depthwise mixing; starts as the identity."""

    def __init__(self, c: int, dtype=np.float32):
        kern = np.zeros((c, OMNI_KERNEL, OMNI_KERNEL))
        kern[:, OMNI_KERNEL // 2, OMNI_KERNEL // 2] = 1.0
        self.kernel = Parameter(kern, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.kernel, pad=OMNI_KERNEL // 2)


def _projection(c: int, rng, dtype) -> Parameter:
    bound = 1.0 / np.sqrt(c)
    return Parameter(rng.uniform(-bound, bound, size=(c, c)), dtype=dtype)


class SpatialMix(Module):
    def __init__(self, c: int, rng: np.random.Generator, dtype=np.float32):
        self.ln = LayerNorm(c, dtype)
        self.shift = OmniShift(c, dtype)
        self.w_r = _projection(c, rng, dtype)
        self.w_k = _projection(c, rng, dtype)
        self.w_v = _projection(c, rng, dtype)
        self.w_o = _projection(c, rng, dtype)
        self.w_decay = Parameter(np.linspace(1.0, 8.0, c) if c > 1 else [1.0], dtype=dtype)
        self.u_bonus = Parameter(np.zeros(c), dtype=dtype)
        self.method = "auto"

    def forward(self, x: Tensor, geom: Sequence[int]) -> Tensor:
        h, w = geom
        x, squeeze = _batched(x)
        n, T, c = x.shape
        if T != h * w:
            raise GeometryError(f"spatial_mix: {T} tokens for a {h}x{w} grid")
        fs = to_tokens(self.shift(to_map(self.ln(x), h, w)))
        r = F.linear(fs, self.w_r)
        k = F.linear(fs, self.w_k)
        v = F.linear(fs, self.w_v)
        attn = re_wkv(k.reshape(n, h, w, c), v.reshape(n, h, w, c),
                      self.w_decay, self.u_bonus, self.method).reshape(n, T, c)
        out = F.linear(F.sigmoid(r) * attn, self.w_o)
        return out.reshape(T, c) if squeeze else out


class ChannelMix(Module):
    def __init__(self, c: int, rng: np.random.Generator, dtype=np.float32):
        self.ln = LayerNorm(c, dtype)
        self.shift = OmniShift(c, dtype)
        self.w_r = _projection(c, rng, dtype)
        self.w_k = _projection(c, rng, dtype)
        self.w_v = _projection(c, rng, dtype)
        self.w_o = _projection(c, rng, dtype)

    def forward(self, y: Tensor, geom: Sequence[int]) -> Tensor:
        h, w = geom
        y, squeeze = _batched(y)
        n, T, c = y.shape
        if T != h * w:
            raise GeometryError(f"channel_mix: {T} tokens for a {h}x{w} grid")
        fc = to_tokens(self.shift(to_map(self.ln(y), h, w)))
        r = F.linear(fc, self.w_r)
        vc = F.linear(F.squared_relu(F.linear(fc, self.w_k)), self.w_v)
        out = F.linear(F.sigmoid(r) * vc, self.w_o)
        return out.reshape(T, c) if squeeze else out


class RRwkvBlock(Module):
    """y1 = alpha1*x + SM(x); out = alpha2*y1 + CM(y1)."""

    def __init__(self, c: int, rng: np.random.Generator, dtype=np.float32):
        self.sm = SpatialMix(c, rng, dtype)
        self.cm = ChannelMix(c, rng, dtype)
        self.alpha1 = scalar_param(1.0, dtype)
        self.alpha2 = scalar_param(1.0, dtype)

    def forward(self, x: Tensor, geom: Sequence[int]) -> Tensor:
        y1 = self.alpha1 * x + self.sm(x, geom)
        return self.alpha2 * y1 + self.cm(y1, geom)


class Rgeg(Module):
    """Residual group: tail_conv(block_L(...block_1(x))) + x on N x C x H x W maps."""

    def __init__(self, c: int, n_blocks: int, rng: np.random.Generator, dtype=np.float32):
        if n_blocks < 1:
            raise ValueError("an RWKV group needs at least one block")
        self.blocks = [RRwkvBlock(c, rng, dtype) for _ in range(n_blocks)]
        self.tail_conv = Conv2d(c, c, 3, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        t = to_tokens(x)
        for block in self.blocks:
            t = block(t, (h, w))
        return self.tail_conv(to_map(t, h, w)) + x


def block_param_count(c: int) -> int:
    mix = 2 * c + OMNI_KERNEL * OMNI_KERNEL * c + 4 * c * c
    return 2 * mix + 2 * c + 2


def rgeg_param_count(c: int, n_blocks: int) -> int:
    return n_blocks * block_param_count(c) + conv_param_count(c, c, 3)


# Functional spellings of the module forwards.


def omni_shift(x: Tensor, p: OmniShift) -> Tensor:
    return p(x)


def spatial_mix(x: Tensor, geom, p: SpatialMix) -> Tensor:
    return p(x, geom)


def channel_mix(y: Tensor, geom, p: ChannelMix) -> Tensor:
    return p(y, geom)


def rrwkvb_forward(x: Tensor, geom, b: RRwkvBlock) -> Tensor:
    return b(x, geom)


def rgeg_forward(x: Tensor, g: Rgeg) -> Tensor:
    return g(x)
