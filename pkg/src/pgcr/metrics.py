"""PSNR and SSIM on 8-bit RGB images.

Both metrics are evaluated per channel and then averaged over channels.
SSIM uses an 11x11 Gaussian window (sigma 1.5) at every position where the
window fits entirely inside the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError

MAX_PIXEL = 255.0
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = (K1 * MAX_PIXEL) ** 2
C2 = (K2 * MAX_PIXEL) ** 2
C3 = C2 / 2


def _as_hwc(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected an H x W x C image, got shape {arr.shape}")
    return arr.astype(np.float64)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_hwc(x), _as_hwc(y)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def image_mse(x, y) -> float:
    """Mean squared error per channel over H x W, averaged across channels."""
    a, b = _pair(x, y)
    per_channel = ((a - b) ** 2).mean(axis=(0, 1))
    return float(per_channel.mean())


def psnr(x, y) -> float:
    """``10 log10(255^2 / MSE)``; identical images give ``inf``."""
    mse = image_mse(x, y)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(MAX_PIXEL ** 2 / mse)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = w.size
    rows = sliding_window_view(img, n, axis=0) @ w
    return sliding_window_view(rows, n, axis=1) @ w


def ssim_map(x, y) -> np.ndarray:
    """Per-window SSIM of shape ``[H - 10, W - 10, C]``."""
    a, b = _pair(x, y)
    h, wd = a.shape[:2]
    if min(h, wd) < WINDOW_SIZE:
        raise ShapeError(f"image {h}x{wd} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} SSIM window")
    w = gaussian_window()
    mu_x, mu_y = _filter_valid(a, w), _filter_valid(b, w)
    var_x = np.maximum(_filter_valid(a * a, w) - mu_x ** 2, 0.0)
    var_y = np.maximum(_filter_valid(b * b, w) - mu_y ** 2, 0.0)
    cov = _filter_valid(a * b, w) - mu_x * mu_y
    sd_x, sd_y = np.sqrt(var_x), np.sqrt(var_y)
    luminance = (2 * mu_x * mu_y + C1) / (mu_x ** 2 + mu_y ** 2 + C1)
    contrast = (2 * sd_x * sd_y + C2) / (var_x + var_y + C2)
    structure = (cov + C3) / (sd_x * sd_y + C3)
    return luminance * contrast * structure


def ssim(x, y) -> float:
    return float(ssim_map(x, y).mean())


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, name: str, x, y) -> None:
        self.names.append(name)
        self.psnr.append(psnr(x, y))
        self.ssim.append(ssim(x, y))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def inf_psnr_count(self) -> int:
        return sum(1 for v in self.psnr if math.isinf(v))

    @property
    def mean_psnr(self) -> float:
        finite = [v for v in self.psnr if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def rows(self) -> list[dict]:
        return [{"filename": n, "psnr": p, "ssim": s} for n, p, s in zip(self.names, self.psnr, self.ssim)]

    def summary(self) -> dict:
        return {
            "count": len(self),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "inf_psnr_count": self.inf_psnr_count,
        }
