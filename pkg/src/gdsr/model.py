"""Full network assembly, parameter accounting and effective-receptive-field maps."""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autograd import GeometryError, Module, Tensor, make_rng
from .autograd import functional as F
from .detail import Rdeg, rdeg_param_count
from .fusion import Gdrm, gdrm_param_count
from .layers import Conv2d, conv_param_count
from .rwkv import Rgeg, rgeg_param_count

BRANCHES = ("both", "detail", "global")
MIN_SIDE = 8


@dataclass
class ModelConfig:
    """Network hyperparameters. Defaults are the desk-scale micro model."""

    scale: int = 2
    channels: int = 16
    n_groups: int = 1
    blocks_per_rgeg: int = 2
    rcbs_per_rdeg: int = 2
    psam_coeff: float = 1.0 / 3.0
    dtype: str = "float32"
    branches: str = "both"

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("channels", "n_groups", "blocks_per_rgeg", "rcbs_per_rdeg"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.psam_coeff <= 0:
            raise ValueError("psam_coeff must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.branches not in BRANCHES:
            raise ValueError(f"branches must be one of {BRANCHES}")

    @classmethod
    def full_scale(cls, scale: int = 3) -> "ModelConfig":
        return cls(scale=scale, channels=96, n_groups=4, blocks_per_rgeg=6, rcbs_per_rdeg=12)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in types:
                raise KeyError(f"unknown model field {key!r}")
            kind = types[key]
            if kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = str(value)
        return cls(**kwargs)


class GroupStage(Module):
    """One depth step: an RWKV group, a detail group and their fusion module."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c, dt = cfg.channels, cfg.np_dtype
        if cfg.branches in ("both", "global"):
            self.rgeg = Rgeg(c, cfg.blocks_per_rgeg, rng, dt)
        if cfg.branches in ("both", "detail"):
            self.rdeg = Rdeg(c, cfg.rcbs_per_rdeg, rng, dt)
        if cfg.branches == "both":
            self.gdrm = Gdrm(c, rng, dt, cfg.psam_coeff)


class GdsrModel(Module):
    """Shallow conv -> K stages with GDRM feedback into the detail path -> residual -> pixel shuffle."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = make_rng(seed)
        c, r, dt = cfg.channels, cfg.scale, cfg.np_dtype
        self.shallow = Conv2d(3, c, 3, rng, dt)
        self.groups = [GroupStage(cfg, rng) for _ in range(cfg.n_groups)]
        self.up_conv = Conv2d(c, r * r * c, 3, rng, dt)
        self.up_tail = Conv2d(c, 3, 3, rng, dt)

    def features(self, lr: Tensor) -> Tensor:
        """Deep feature f_K + F_S fed to the upsampler."""
        fs = self.shallow(lr)
        g = d = fs
        f = fs
        for stage in self.groups:
            if self.cfg.branches == "both":
                g = stage.rgeg(g)
                f = stage.gdrm(g, stage.rdeg(d))
                d = f
            elif self.cfg.branches == "detail":
                f = d = stage.rdeg(d)
            else:
                f = g = stage.rgeg(g)
        return f + fs

    def forward(self, lr) -> Tensor:
        if not isinstance(lr, Tensor):
            lr = Tensor(np.asarray(lr, dtype=self.cfg.np_dtype))
        if lr.ndim == 3:
            lr = lr.reshape(1, *lr.shape)
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise GeometryError(f"expected N x 3 x H x W input, got {lr.shape}")
        if min(lr.shape[2:]) < MIN_SIDE:
            raise GeometryError(f"input sides must be >= {MIN_SIDE}, got {lr.shape[2:]}")
        up = F.pixel_shuffle(self.up_conv(self.features(lr)), self.cfg.scale)
        return self.up_tail(up)


def param_breakdown(cfg: ModelConfig) -> "OrderedDict[str, int]":
    """Closed-form trainable-scalar count per top-level component."""
    c, r = cfg.channels, cfg.scale
    per_stage = OrderedDict()
    if cfg.branches in ("both", "global"):
        per_stage["rgeg"] = rgeg_param_count(c, cfg.blocks_per_rgeg)
    if cfg.branches in ("both", "detail"):
        per_stage["rdeg"] = rdeg_param_count(c, cfg.rcbs_per_rdeg)
    if cfg.branches == "both":
        per_stage["gdrm"] = gdrm_param_count(c)
    out = OrderedDict(shallow=conv_param_count(3, c, 3))
    for key, n in per_stage.items():
        out[key] = cfg.n_groups * n
    out["up_conv"] = conv_param_count(c, r * r * c, 3)
    out["up_tail"] = conv_param_count(c, 3, 3)
    return out


def param_count(cfg: ModelConfig) -> int:
    return int(sum(param_breakdown(cfg).values()))


@contextlib.contextmanager
def _frozen(model: Module):
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def compute_erf(model: GdsrModel, size: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Mean |d(sum_c out[c, centre]) / d lr| over random inputs, max-normalised to [0, 1]."""
    r = model.cfg.scale
    centre = (r * size) // 2
    acc = np.zeros((size, size))
    with _frozen(model):
        for _ in range(n_samples):
            x = Tensor(rng.random((1, 3, size, size)).astype(model.cfg.np_dtype), requires_grad=True)
            out = model(x)
            out[0, :, centre, centre].sum().backward()
            acc += np.abs(x.grad).sum(axis=(0, 1))
    acc /= n_samples
    peak = acc.max()
    return acc / peak if peak > 0 else acc


def detail_support(cfg: ModelConfig, size: int) -> tuple[int, int]:
    """Inclusive LR row/column range that can influence the centre output of a detail-only model.

    up_tail (3x3 at HR) reaches HR rows centre-1..centre+1, i.e. LR rows
    floor((centre-1)/r)..floor((centre+1)/r); up_conv, the RCB convs and the
    shallow conv then each widen the window by one LR pixel per 3x3 layer.
    """
    r = cfg.scale
    centre = (r * size) // 2
    reach = 1 + 2 * cfg.rcbs_per_rdeg * cfg.n_groups + 1
    lo = (centre - 1) // r - reach
    hi = (centre + 1) // r + reach
    return max(lo, 0), min(hi, size - 1)
