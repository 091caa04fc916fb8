"""Quick built-in consistency checks used by ``gdsr selftest``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, grad_check, make_rng
from .autograd import functional as F
from .model import GdsrModel, ModelConfig
from .rwkv import bi_wkv, bi_wkv_naive, bi_wkv_scan, re_wkv
from .wavelet import WaveletLossConfig, haar, multiscale_wavelet_loss, swt2

GRAD_TOL = 1e-5
MODEL_GRAD_TOL = 1e-4
WKV_TOL = 1e-10


def _sq(x: Tensor) -> Tensor:
    return x * x


def _grad_cases(rng):
    def t(*shape, scale=1.0):
        return Tensor(rng.normal(size=shape) * scale)

    w3, b3 = t(4, 3, 3, 3), t(4)
    dw = t(3, 3, 3)
    gamma, beta = t(5), t(5)
    kw, uw = Tensor(rng.uniform(0.5, 3.0, 4)), t(4)
    kv = t(2, 3, 3, 4)
    target = Tensor(rng.random((3, 8, 8)))
    return {
        "conv2d": (lambda x: _sq(F.conv2d(x, w3, b3, pad=1)).sum(), t(2, 3, 6, 5)),
        "depthwise_conv2d": (lambda x: _sq(F.depthwise_conv2d(x, dw, pad=1)).sum(), t(1, 3, 5, 5)),
        "layer_norm": (lambda x: (_sq(F.layer_norm(x, gamma, beta)) * x).sum(), t(3, 5)),
        "pixel_shuffle": (lambda x: (_sq(F.pixel_shuffle(x, 2)) * 0.5).sum(), t(1, 8, 3, 3)),
        "bi_wkv": (lambda x: _sq(bi_wkv(x, x * 0.5 + 1.0, kw, uw)).sum(), t(2, 7, 4)),
        "re_wkv": (lambda x: _sq(re_wkv(kv, x, kw, uw)).sum(), t(2, 3, 3, 4)),
        "wavelet_loss": (lambda x: multiscale_wavelet_loss(x, target, WaveletLossConfig(levels=1), haar()),
                         Tensor(rng.random((3, 8, 8)))),
    }


def run_selftest(log: Callable[[str], None] = print) -> bool:
    rng = make_rng(2024)
    ok = True

    def report(name, passed, detail):
        nonlocal ok
        ok &= bool(passed)
        log(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    for name, (fn, x) in _grad_cases(rng).items():
        err = grad_check(fn, x)
        report(f"grad {name}", err < GRAD_TOL, f"max rel err {err:.2e}")

    cfg = ModelConfig(channels=4, blocks_per_rgeg=1, rcbs_per_rdeg=1, dtype="float64")
    model = GdsrModel(cfg, seed=1)
    x = Tensor(rng.random((1, 3, 8, 8)))
    err = grad_check(lambda t: _sq(model(t)).mean(), x)
    report("grad end-to-end model", err < MODEL_GRAD_TOL, f"max rel err {err:.2e}")

    worst = 0.0
    for _ in range(20):
        T, C = int(rng.integers(1, 65)), int(rng.integers(1, 5))
        k, v = rng.normal(size=(T, C)) * 2, rng.normal(size=(T, C))
        w, u = rng.uniform(0.1, 8, C), rng.normal(size=C)
        worst = max(worst, float(np.abs(bi_wkv_scan(k, v, w, u) - bi_wkv_naive(k, v, w, u)).max()))
    report("wkv scan vs naive", worst <= WKV_TOL, f"max abs diff {worst:.2e}")

    f = haar()
    a, b = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    pa, pb, pab = swt2(a, f, 2), swt2(b, f, 2), swt2(2 * a - 3 * b, f, 2)
    lin = max(float(np.abs(pab[j][s].data - 2 * pa[j][s].data + 3 * pb[j][s].data).max())
              for j in range(2) for s in pa[j])
    report("swt linearity", lin <= 1e-12, f"max deviation {lin:.2e}")
    ps = swt2(np.roll(a, (3, 5), axis=(0, 1)), f, 2)
    shift_ok = all(np.array_equal(ps[j][s].data, np.roll(pa[j][s].data, (3, 5), axis=(0, 1)))
                   for j in range(2) for s in pa[j])
    report("swt shift equivariance", shift_ok, "exact" if shift_ok else "mismatch")
    pc = swt2(np.full((8, 8), 0.5), f, 2)
    hf_zero = all(not pc[j][s].data.any() for j in range(2) for s in ("LH", "HL", "HH"))
    gain = float(np.abs(pc[1]["LL"].data - 2.0).max())
    report("swt constant image", hf_zero and gain < 1e-12, f"HF zero={hf_zero}, LL gain error {gain:.1e}")
    return ok
