"""Luminance extraction, undecimated (a trous) 2-D wavelet transform and the dual-group multiscale wavelet loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .autograd import GeometryError, Tensor, as_tensor
from .autograd import functional as F
from .degradation import resize_matrix, save_pgm

Y_WEIGHTS = (0.299, 0.587, 0.114)
SUBBANDS = ("LL", "LH", "HL", "HH")
HF_ORDER = ("LH", "HL", "HH")


@dataclass(frozen=True)
class WaveletFilter:
    """Orthogonal analysis pair; ``g`` is derived from ``h`` by the quadrature-mirror rule."""

    name: str
    h: np.ndarray
    g: np.ndarray = field(default=None)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.ndim != 1 or len(h) < 2 or len(h) % 2:
            raise ValueError(f"{self.name}: low-pass filter needs an even number (>= 2) of taps")
        object.__setattr__(self, "h", h)
        if self.g is None:
            object.__setattr__(self, "g", qmf(h))
        self.validate()

    def validate(self, tol: float = 1e-10) -> None:
        energy = float(np.sum(self.h ** 2))
        if abs(energy - 1.0) > tol:
            raise ValueError(f"{self.name}: sum h^2 = {energy!r}, expected 1")
        if not np.allclose(self.g, qmf(self.h), rtol=0, atol=tol):
            raise ValueError(f"{self.name}: high-pass is not the quadrature mirror of h")
        if abs(float(np.sum(self.g))) > tol:
            raise ValueError(f"{self.name}: high-pass taps do not sum to 0")

    @property
    def length(self) -> int:
        return len(self.h)


def qmf(h: np.ndarray) -> np.ndarray:
    """g[k] = (-1)^k h[L-1-k]."""
    h = np.asarray(h, dtype=np.float64)
    signs = np.where(np.arange(len(h)) % 2 == 0, 1.0, -1.0)
    return signs * h[::-1]


def haar() -> WaveletFilter:
    return WaveletFilter("haar", np.full(2, 1.0 / math.sqrt(2.0)))


def parse_filter(text: str, source: str = "<string>") -> WaveletFilter:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValueError(f"{source}: need a name line and a tap-count line")
    name = lines[0]
    try:
        n = int(lines[1])
        taps = [float(v) for v in lines[2:]]
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None
    if len(taps) != n:
        raise ValueError(f"{source}: header says {n} taps, found {len(taps)}")
    return WaveletFilter(name, np.array(taps))


def load_filter(path) -> WaveletFilter:
    return parse_filter(Path(path).read_text(), str(path))


def get_filter(name_or_path: str) -> WaveletFilter:
    """'haar', a bundled filter name such as 'sym19', or a coefficient file path."""
    if name_or_path == "haar":
        return haar()
    bundled = resources.files("gdsr") / "data" / f"{name_or_path}.txt"
    if bundled.is_file():
        return parse_filter(bundled.read_text(), name_or_path)
    path = Path(name_or_path)
    if path.is_file():
        return load_filter(path)
    raise FileNotFoundError(f"no wavelet filter named or stored at {name_or_path!r}")


# -- transforms ---------------------------------------------------------------


def rgb_to_y(img, clamp: bool = True) -> Tensor:
    """Full-range luma of a (..., 3, H, W) image -> (..., H, W).

    ``clamp`` limits the input to [0, 1] first; the loss path disables it so
    that gradients flow through out-of-range predictions.
    """
    img = as_tensor(img)
    if img.ndim < 3 or img.shape[-3] != 3:
        raise GeometryError(f"rgb_to_y expects (..., 3, H, W), got {img.shape}")
    if clamp:
        img = Tensor(np.clip(img.data, 0.0, 1.0)) if not img.requires_grad else _clamp01(img)
    r, g, b = (img[(Ellipsis, i, slice(None), slice(None))] for i in range(3))
    return r * Y_WEIGHTS[0] + g * Y_WEIGHTS[1] + b * Y_WEIGHTS[2]


def _clamp01(x: Tensor) -> Tensor:
    inside = (x.data >= 0.0) & (x.data <= 1.0)

    def backward(g):
        return (g * inside,)

    return Tensor._from_op(np.clip(x.data, 0.0, 1.0), (x,), backward)


def swt2(y, filt: WaveletFilter, levels: int) -> list[dict]:
    """Undecimated 2-D transform with periodic extension.

    Returns one ``{LL, LH, HL, HH}`` dict per level, each plane shaped like
    ``y``. Level j filters with taps spaced 2^(j-1) apart and decomposes the
    previous LL. LH is low-pass along columns (width) and high-pass along rows
    (height); HL is the transpose arrangement.
    """
    y = as_tensor(y)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if y.ndim < 2:
        raise GeometryError("swt2 expects (..., H, W)")
    h, w = y.shape[-2:]
    step = 1 << levels
    if h % step or w % step:
        raise GeometryError(f"plane {h}x{w} not divisible by 2^levels = {step}")
    row_axis, col_axis = y.ndim - 2, y.ndim - 1
    pyramid, ll = [], y
    for j in range(levels):
        dil = 1 << j
        lo_w = F.circular_filter(ll, filt.h, dil, col_axis)
        hi_w = F.circular_filter(ll, filt.g, dil, col_axis)
        bands = {
            "LL": F.circular_filter(lo_w, filt.h, dil, row_axis),
            "LH": F.circular_filter(lo_w, filt.g, dil, row_axis),
            "HL": F.circular_filter(hi_w, filt.h, dil, row_axis),
            "HH": F.circular_filter(hi_w, filt.g, dil, row_axis),
        }
        pyramid.append(bands)
        ll = bands["LL"]
    return pyramid


def dual_group(pyramid: list[dict]) -> tuple[Tensor, Tensor]:
    """Final-level LL as (..., 1, H, W) and stacked LH, HL, HH as (..., 3, H, W)."""
    if not pyramid:
        raise ValueError("empty wavelet pyramid")
    last = pyramid[-1]
    ax = last["LL"].ndim - 2
    low = F.reshape(last["LL"], last["LL"].shape[:ax] + (1,) + last["LL"].shape[ax:])
    highs = [F.reshape(last[k], low.shape) for k in HF_ORDER]
    return low, F.concat(highs, axis=ax)


# -- loss ---------------------------------------------------------------------


@dataclass
class WaveletLossConfig:
    lambda_low: float = 0.05
    lambda_high: float = 0.01
    alphas: tuple = (0.6, 0.3, 0.1)
    levels: int = 2
    filter: str = "sym19"

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if len(self.alphas) != 3:
            raise ValueError("need one weight per scale (1, 1/2, 1/4)")
        if abs(sum(self.alphas) - 1.0) > 1e-9:
            raise ValueError(f"scale weights must sum to 1, got {sum(self.alphas)}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    def wavelet(self) -> WaveletFilter:
        return get_filter(self.filter)


SCALES = (1, 2, 4)


def _downscale(y: Tensor, factor: int) -> Tensor:
    """Bicubic reduction of the last two axes by an integer factor (differentiable)."""
    if factor == 1:
        return y
    h, w = y.shape[-2:]
    rh = Tensor(resize_matrix(h, h // factor).astype(y.dtype))
    rwt = Tensor(resize_matrix(w, w // factor).T.astype(y.dtype))
    return F.matmul(F.matmul(rh, y), rwt)


def multiscale_wavelet_loss(sr, hr, cfg: WaveletLossConfig | None = None,
                            filt: WaveletFilter | None = None) -> Tensor:
    """Weighted L1 between dual-group subbands of the luma at scales 1, 1/2, 1/4."""
    cfg = cfg or WaveletLossConfig()
    filt = filt or cfg.wavelet()
    sr, hr = as_tensor(sr), as_tensor(hr)
    if sr.shape != hr.shape:
        raise GeometryError(f"shape mismatch {sr.shape} vs {hr.shape}")
    h, w = sr.shape[-2:]
    need = 4 * (1 << cfg.levels)
    if h % need or w % need:
        raise GeometryError(f"{h}x{w} not divisible by {need} (4 * 2^levels)")
    ys, yh = rgb_to_y(sr, clamp=False), rgb_to_y(hr, clamp=False)
    total = None
    for alpha, factor in zip(cfg.alphas, SCALES):
        low_s, high_s = dual_group(swt2(_downscale(ys, factor), filt, cfg.levels))
        low_h, high_h = dual_group(swt2(_downscale(yh, factor), filt, cfg.levels))
        term = F.l1_loss(low_s, low_h) * (cfg.lambda_low * alpha) \
            + F.l1_loss(high_s, high_h) * (cfg.lambda_high * alpha)
        total = term if total is None else total + term
    return total


LOSS_MODES = ("rec", "rec_plus_wav")


def total_loss(sr, hr, cfg: WaveletLossConfig | None = None, mode: str = "rec",
               filt: WaveletFilter | None = None) -> Tensor:
    if mode not in LOSS_MODES:
        raise ValueError(f"loss mode must be one of {LOSS_MODES}")
    rec = F.l1_loss(sr, hr)
    if mode == "rec":
        return rec
    return rec + multiscale_wavelet_loss(sr, hr, cfg, filt)


def hf_subband_error(sr: np.ndarray, hr: np.ndarray, filt: WaveletFilter, levels: int) -> float:
    """Mean absolute difference of the final-level LH/HL/HH luma planes."""
    _, hs = dual_group(swt2(rgb_to_y(sr), filt, levels))
    _, hh = dual_group(swt2(rgb_to_y(hr), filt, levels))
    return float(np.mean(np.abs(hs.data - hh.data)))


# -- dumps --------------------------------------------------------------------


def dual_group_views(y, filt: WaveletFilter, levels: int) -> dict:
    """Named 2-D planes ``s<k>_L`` and ``s<k>_H_<band>`` for each loss scale 1/k."""
    y = as_tensor(y)
    planes = {}
    for factor in SCALES:
        low, high = dual_group(swt2(_downscale(y, factor), filt, levels))
        planes[f"s{factor}_L"] = low.data[0]
        for i, band in enumerate(HF_ORDER):
            planes[f"s{factor}_H_{band}"] = high.data[i]
    return planes


def dump_planes(planes: dict, out_dir) -> list[str]:
    """Write each plane as a 16-bit graymap after min/max normalization.

    Returns one line per plane, ``<file> offset=<lo> scale=<hi-lo>``, so that
    ``value = offset + scale * pixel / 65535``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, plane in planes.items():
        plane = np.asarray(plane, dtype=np.float64)
        lo, hi = float(plane.min()), float(plane.max())
        span = hi - lo
        norm = (plane - lo) / span if span > 0 else np.zeros_like(plane)
        path = out_dir / f"{name}.pgm"
        save_pgm(path, norm, bits=16)
        lines.append(f"{path.name} offset={lo!r} scale={span!r}")
    return lines
