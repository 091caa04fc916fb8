"""LR synthesis (bicubic and randomized composite degradation), patches, synthetic data and netpbm I/O.

Images are float arrays of shape 3 x H x W with values in [0, 1].
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .autograd import GeometryError, make_rng

CUBIC_A = -0.5


class ImageFormatError(ValueError):
    """Malformed or truncated netpbm file."""


class UnsupportedFormatError(ImageFormatError):
    """A well-formed netpbm variant this package does not read."""


# -- resampling ---------------------------------------------------------------


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def linear_kernel(x: np.ndarray) -> np.ndarray:
    return np.maximum(1.0 - np.abs(np.asarray(x, dtype=np.float64)), 0.0)


_KERNELS = {"bicubic": (cubic_kernel, 2.0), "bilinear": (linear_kernel, 1.0)}


def resize_matrix(n_in: int, n_out: int, method: str = "bicubic", antialias: bool = True) -> np.ndarray:
    """Row-stochastic ``n_out x n_in`` matrix realizing a 1-D resize.

    Output sample ``o`` sits at input coordinate ``(o + 0.5) / s - 0.5`` with
    ``s = n_out / n_in``. On downscale the kernel is stretched by ``1/s``.
    Source indices are clamped at the borders.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resize extents must be positive")
    s = n_out / n_in
    mat = np.zeros((n_out, n_in))
    if method == "nearest":
        idx = np.minimum(np.floor((np.arange(n_out) + 0.5) / s).astype(int), n_in - 1)
        mat[np.arange(n_out), idx] = 1.0
        return mat
    try:
        kernel, radius = _KERNELS[method]
    except KeyError:
        raise ValueError(f"unknown interpolation {method!r}") from None
    stretch = s if (antialias and s < 1) else 1.0
    support = radius / stretch
    for o in range(n_out):
        centre = (o + 0.5) / s - 0.5
        taps = np.arange(math.floor(centre - support), math.ceil(centre + support) + 1)
        wts = kernel((taps - centre) * stretch)
        wts /= wts.sum()
        np.add.at(mat[o], np.clip(taps, 0, n_in - 1), wts)
    return mat


def resize(img: np.ndarray, out_h: int, out_w: int, method: str = "bicubic") -> np.ndarray:
    """Separable resize of the last two axes."""
    h, w = img.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    rh = resize_matrix(h, out_h, method)
    rw = resize_matrix(w, out_w, method)
    return rh @ img @ rw.T


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return resize(img, out_h, out_w, "bicubic")


# -- blur, noise, compression -------------------------------------------------


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(img, k, axis=-1, mode="nearest")
    return ndimage.correlate1d(out, k, axis=-2, mode="nearest")


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Rasterize a centred segment with bilinear deposition; sums to 1.

    Samples are spaced one pixel apart (``ceil(length)`` of them spanning
    ``length - 1``), so length 3 at angle 0 gives three equal horizontal taps.
    Angles are counter-clockwise from the +x axis with rows pointing down.
    """
    if length < 1:
        raise ValueError("motion blur length must be >= 1")
    n = max(int(math.ceil(length)), 1)
    half = (length - 1.0) / 2.0
    ts = np.linspace(-half, half, n) if n > 1 else np.zeros(1)
    xs, ys = ts * math.cos(angle), -ts * math.sin(angle)
    rad = int(math.ceil(half)) + 1
    size = 2 * rad + 1
    kern = np.zeros((size, size))
    for x, y in zip(xs + rad, ys + rad):
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if wy * wx > 0:
                    kern[y0 + dy, x0 + dx] += wy * wx
    kern /= kern.sum()
    rows = np.nonzero(kern.any(axis=1))[0]
    cols = np.nonzero(kern.any(axis=0))[0]
    r = max(rad - rows[0], rows[-1] - rad, rad - cols[0], cols[-1] - rad)
    return kern[rad - r:rad + r + 1, rad - r:rad + r + 1]


def motion_blur(img: np.ndarray, length: float, angle: float) -> np.ndarray:
    kern = motion_kernel(length, angle)
    return np.stack([ndimage.correlate(ch, kern, mode="nearest") for ch in img])


def add_gaussian_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def quant_table(base: np.ndarray, quality: int) -> np.ndarray:
    """libjpeg quality scaling, integer arithmetic, entries clamped to [1, 255]."""
    quality = int(min(max(quality, 1), 100))
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((base.astype(np.int64) * scale + 50) // 100, 1, 255).astype(np.float64)


def jpeg_proxy(img: np.ndarray, quality: int) -> np.ndarray:
    """8x8 block-DCT quantization round trip in YCbCr (no subsampling, no entropy coding).

    The decoded image is rounded to 8-bit levels like a real decoder's output.
    """
    _, h, w = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    mode = "reflect" if min(h, w) > 1 else "edge"
    x = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode) if (ph or pw) else img
    ycc = np.einsum("ij,jhw->ihw", _RGB2YCC, x * 255.0)
    ycc[0] -= 128.0
    H, W = ycc.shape[1:]
    blocks = ycc.reshape(3, H // 8, 8, W // 8, 8).transpose(0, 1, 3, 2, 4)
    coeffs = sfft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    tables = np.stack([quant_table(LUMA_TABLE, quality)] + [quant_table(CHROMA_TABLE, quality)] * 2)
    tables = tables[:, None, None]
    coeffs = np.round(coeffs / tables) * tables
    blocks = sfft.idctn(coeffs, type=2, norm="ortho", axes=(-2, -1))
    ycc = blocks.transpose(0, 1, 3, 2, 4).reshape(3, H, W)
    ycc[0] += 128.0
    rgb = np.einsum("ij,jhw->ihw", _YCC2RGB, ycc) / 255.0
    return np.round(np.clip(rgb[:, :h, :w], 0.0, 1.0) * 255.0) / 255.0


# -- composite pipeline -------------------------------------------------------


@dataclass
class DegradationConfig:
    """How LR inputs are synthesized from HR images. Ranges are inclusive [lo, hi]."""

    mode: str = "bicubic"
    scale: int = 2
    seed: int = 0
    gaussian_sigma: tuple = (0.2, 3.0)
    motion_length: tuple = (3.0, 15.0)
    motion_angle: tuple = (0.0, math.pi)
    mid_scale: tuple = (0.5, 1.2)
    mid_interp: tuple = ("nearest", "bilinear", "bicubic")
    noise_sigma: tuple = (1.0 / 255.0, 25.0 / 255.0)
    jpeg_quality: tuple = (30, 95)

    def __post_init__(self):
        if self.mode not in ("bicubic", "cdm"):
            raise ValueError(f"degradation mode must be bicubic or cdm, got {self.mode!r}")
        if self.scale not in (2, 3, 4):
            raise ValueError("scale must be 2, 3 or 4")
        for name in ("gaussian_sigma", "motion_length", "motion_angle", "mid_scale",
                     "noise_sigma", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
        if not self.mid_interp:
            raise ValueError("mid_interp needs at least one method")

    def to_dict(self) -> dict:
        return asdict(self)


CDM_STEPS = ("gaussian_blur", "motion_blur", "rescale", "noise")


def cdm_pipeline(hr: np.ndarray, cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    """Randomly ordered blur/motion/rescale/noise, then bicubic to LR size, then JPEG."""
    _, h, w = hr.shape
    r = cfg.scale
    if h % r or w % r:
        raise GeometryError(f"HR size {h}x{w} not divisible by scale {r}")
    order = rng.permutation(len(CDM_STEPS))
    sigma = rng.uniform(*cfg.gaussian_sigma)
    length = rng.uniform(*cfg.motion_length)
    angle = rng.uniform(*cfg.motion_angle)
    mid = rng.uniform(*cfg.mid_scale)
    interp = cfg.mid_interp[int(rng.integers(len(cfg.mid_interp)))]
    noise = rng.uniform(*cfg.noise_sigma)
    quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))

    img = hr
    for step in (CDM_STEPS[i] for i in order):
        if step == "gaussian_blur":
            img = gaussian_blur(img, sigma)
        elif step == "motion_blur":
            img = motion_blur(img, length, angle)
        elif step == "rescale":
            ch, cw = img.shape[1:]
            img = resize(img, max(1, round(ch * mid)), max(1, round(cw * mid)), interp)
        else:
            img = add_gaussian_noise(img, noise, rng)
        img = np.clip(img, 0.0, 1.0)
    img = np.clip(bicubic_resize(img, h // r, w // r), 0.0, 1.0)
    return jpeg_proxy(img, quality)


def degrade(hr: np.ndarray, cfg: DegradationConfig, index: int = 0) -> np.ndarray:
    """LR image for ``hr``; a pure function of ``(cfg.seed, index, hr)``."""
    _, h, w = hr.shape
    r = cfg.scale
    if h % r or w % r:
        raise GeometryError(f"HR size {h}x{w} not divisible by scale {r}")
    if cfg.mode == "bicubic":
        return np.clip(bicubic_resize(hr, h // r, w // r), 0.0, 1.0)
    return cdm_pipeline(hr, cfg, make_rng(cfg.seed, index))


# -- patches and synthetic images ---------------------------------------------


def crop_to_multiple(img: np.ndarray, r: int) -> np.ndarray:
    """Trim bottom/right so both sides are divisible by ``r``."""
    h, w = img.shape[-2:]
    return img[..., :h - h % r, :w - w % r]


@dataclass
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray
    provenance: dict = field(default_factory=dict)


def sample_patch(hr: np.ndarray, lr: np.ndarray, patch: int, r: int, rng: np.random.Generator,
                 source: str = "") -> ImagePair:
    """Aligned random crop: LR patch x patch and HR (r*patch)^2 at r times the offset."""
    _, lh, lw = lr.shape
    if lh < patch or lw < patch:
        raise GeometryError(f"LR image {lh}x{lw} smaller than patch {patch}")
    if hr.shape[1] != r * lh or hr.shape[2] != r * lw:
        raise GeometryError(f"HR {hr.shape[1:]} is not {r}x LR {lr.shape[1:]}")
    i = int(rng.integers(0, lh - patch + 1))
    j = int(rng.integers(0, lw - patch + 1))
    return ImagePair(
        hr=hr[:, r * i:r * (i + patch), r * j:r * (j + patch)],
        lr=lr[:, i:i + patch, j:j + patch],
        provenance={"source": source, "lr_offset": (i, j)},
    )


SYNTH_KINDS = ("ramp", "checker", "blobs", "lines")


def synth_image(kind: str, size: int, rng: np.random.Generator, period: int = 8) -> np.ndarray:
    """Procedural RGB test image in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    if kind == "ramp":
        start, end = rng.uniform(0.0, 1.0, size=(2, 3, 1, 1))
        wx = rng.uniform(0.0, 1.0)
        t = wx * xx + (1.0 - wx) * yy
        return start + (end - start) * t
    if kind == "checker":
        iy, ix = np.mgrid[0:size, 0:size]
        mask = ((iy // period + ix // period) % 2).astype(bool)
        c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
        return np.where(mask[None], c1[:, None, None], c0[:, None, None])
    if kind == "blobs":
        img = np.zeros((3, size, size))
        for _ in range(6):
            cy, cx = rng.uniform(0, 1, size=2)
            rad = rng.uniform(0.08, 0.3)
            colour = rng.uniform(-1.0, 1.0, size=3)
            g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad * rad))
            img += colour[:, None, None] * g
        lo, hi = img.min(), img.max()
        return (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    if kind == "lines":
        img = np.tile(rng.uniform(0.1, 0.4, size=(3, 1, 1)), (1, size, size))
        for _ in range(5):
            theta = rng.uniform(0, math.pi)
            offset = rng.uniform(-0.3, 0.3)
            width = rng.uniform(0.01, 0.04)
            d = (xx - 0.5) * math.cos(theta) + (yy - 0.5) * math.sin(theta) - offset
            alpha = np.exp(-0.5 * (d / width) ** 2)
            colour = rng.uniform(0.5, 1.0, size=3)
            img = img * (1 - alpha) + colour[:, None, None] * alpha
        return np.clip(img, 0.0, 1.0)
    raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")


# -- netpbm I/O ---------------------------------------------------------------


def _read_header(buf: bytes, n_fields: int):
    """Parse magic plus ``n_fields`` integers; return (magic, fields, payload offset)."""
    tokens, pos = [], 0
    while len(tokens) < n_fields + 1:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ImageFormatError("truncated header")
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header")
    magic = tokens[0].decode("ascii", "replace")
    try:
        values = [int(t) for t in tokens[1:]]
    except ValueError:
        raise ImageFormatError(f"non-integer header field in {tokens[1:]}") from None
    return magic, values, pos + 1


def load_ppm(path) -> np.ndarray:
    """Binary P6 with maxval 255 -> 3 x H x W float64 in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, (w, h, maxval), off = _read_header(buf, 3)
    if magic != "P6":
        raise ImageFormatError(f"{path}: expected P6, got {magic!r}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported (only 255)")
    if w < 1 or h < 1:
        raise ImageFormatError(f"{path}: bad size {w}x{h}")
    need = w * h * 3
    if len(buf) - off < need:
        raise ImageFormatError(f"{path}: truncated payload ({len(buf) - off} of {need} bytes)")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_ppm(path, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"save_ppm expects 3 x H x W, got {img.shape}")
    _, h, w = img.shape
    payload = to_bytes(img).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload)


def save_pgm(path, plane: np.ndarray, bits: int = 8) -> None:
    """Single plane in [0, 1] -> P5 (8-bit) or big-endian 16-bit graymap."""
    if plane.ndim != 2:
        raise ValueError("save_pgm expects an H x W plane")
    h, w = plane.shape
    if bits == 8:
        maxval, data = 255, np.round(np.clip(plane, 0, 1) * 255).astype(np.uint8).tobytes()
    elif bits == 16:
        maxval, data = 65535, np.round(np.clip(plane, 0, 1) * 65535).astype(">u2").tobytes()
    else:
        raise ValueError("bits must be 8 or 16")
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + data)


def load_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, (w, h, maxval), off = _read_header(buf, 3)
    if magic != "P5":
        raise ImageFormatError(f"{path}: expected P5, got {magic!r}")
    if maxval == 255:
        dtype, nbytes = np.uint8, 1
    elif maxval == 65535:
        dtype, nbytes = np.dtype(">u2"), 2
    else:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported")
    need = w * h * nbytes
    if len(buf) - off < need:
        raise ImageFormatError(f"{path}: truncated payload")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=off)
    return data.reshape(h, w).astype(np.float64) / maxval


# -- datasets -----------------------------------------------------------------

MANIFEST = "manifest.txt"


def read_manifest(directory) -> list[str]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    entries = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    return entries


def load_dataset(directory) -> list[tuple[str, np.ndarray]]:
    return [(rel, load_ppm(Path(directory) / rel)) for rel in read_manifest(directory)]


def write_synthetic_dataset(directory, n: int, size: int, seed: int) -> list[str]:
    """Write ``n`` procedural HR images and a manifest; returns relative paths."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for i in range(n):
        kind = SYNTH_KINDS[i % len(SYNTH_KINDS)]
        name = f"{i:03d}_{kind}.ppm"
        save_ppm(Path(directory) / name, synth_image(kind, size, make_rng(seed, i)))
        names.append(name)
    (Path(directory) / MANIFEST).write_text("# synthetic HR images\n" + "\n".join(names) + "\n")
    return names
