"""PSNR and SSIM on the full-range luma channel, plus per-image reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import GeometryError

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def luma(img: np.ndarray) -> np.ndarray:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if img.ndim != 3 or img.shape[0] != 3:
        raise GeometryError(f"expected 3 x H x W image, got {img.shape}")
    return np.tensordot(LUMA, img, axes=(0, 0))


def _crop_pair(a, b, border: int):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch {a.shape} vs {b.shape}")
    ya, yb = luma(a), luma(b)
    if border < 0 or 2 * border >= min(ya.shape):
        raise GeometryError(f"border {border} too large for {ya.shape}")
    if border:
        ya, yb = ya[border:-border, border:-border], yb[border:-border, border:-border]
    return ya, yb


def psnr_y(a, b, border: int = 0) -> float:
    """10 log10(1 / MSE) on luma; ``inf`` for identical inputs."""
    ya, yb = _crop_pair(a, b, border)
    mse = float(np.mean((ya - yb) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_mean(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(x, win.shape), win)


def ssim_y(a, b, border: int = 0) -> float:
    """Single-scale SSIM, Gaussian 11x11 window, averaged over valid positions."""
    ya, yb = _crop_pair(a, b, border)
    if min(ya.shape) < SSIM_WINDOW:
        raise GeometryError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after crop, got {ya.shape}")
    win = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _window_mean(ya, win), _window_mean(yb, win)
    var_a = _window_mean(ya * ya, win) - mu_a ** 2
    var_b = _window_mean(yb * yb, win) - mu_b ** 2
    cov = _window_mean(ya * yb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    border_crop: int
    rows: list = field(default_factory=list)

    def add(self, path: str, sr: np.ndarray, hr: np.ndarray) -> tuple[float, float]:
        p, s = psnr_y(sr, hr, self.border_crop), ssim_y(sr, hr, self.border_crop)
        self.rows.append((path, p, s))
        return p, s

    @property
    def n_images(self) -> int:
        return len(self.rows)

    @property
    def psnr_db(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def table(self) -> str:
        width = max([len("path"), len("mean")] + [len(r[0]) for r in self.rows])
        lines = [f"{'path':<{width}}  {'psnr_db':>9}  {'ssim':>7}"]
        for path, p, s in self.rows + [("mean", self.psnr_db, self.ssim)]:
            lines.append(f"{path:<{width}}  {p:>9.4f}  {s:>7.4f}")
        lines.append(f"images={self.n_images} border_crop={self.border_crop}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "psnr_db", "ssim"])
        for path, p, s in self.rows:
            writer.writerow([path, repr(p), repr(s)])
        return buf.getvalue()
