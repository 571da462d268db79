"""Image metrics: PSNR, SSIM, the perceptual proxy, and their geometric-mean "average" error."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from ..numerics.tensor import Tensor, no_grad
from ..training.losses import PerceptualExtractor

PSNR_CAP = 99.0


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    psnr: float          # dB, peak 1.0, capped at 99
    ssim: float
    lpips: float         # perceptual proxy x 1e3
    average: float       # (mse * sqrt(1 - ssim) * lpips) ** (1/3) x 1e3
    mse: float

    def as_dict(self):
        return asdict(self)


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse))) + 0.0  # no negative zero


def ssim(pred: np.ndarray, target: np.ndarray, sigma: float = 1.5, win: int = 11,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over channels with an 11x11 Gaussian window (population statistics),
    averaged over positions whose window fits inside the image."""
    x = np.asarray(pred, np.float64)
    y = np.asarray(target, np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    r = (win - 1) // 2
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for ch in range(x.shape[-1]):
        a, b = x[..., ch], y[..., ch]

        def blur(z):
            return gaussian_filter(z, sigma, mode="reflect", truncate=r / sigma)

        mu_a, mu_b = blur(a), blur(b)
        saa = blur(a * a) - mu_a ** 2
        sbb = blur(b * b) - mu_b ** 2
        sab = blur(a * b) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
        vals.append(s[r:s.shape[0] - r, r:s.shape[1] - r].mean())
    return float(np.mean(vals))


_EXTRACTOR: Optional[PerceptualExtractor] = None


def lpips_proxy(pred: np.ndarray, target: np.ndarray, extractor: Optional[PerceptualExtractor] = None) -> float:
    """Perceptual proxy distance (unscaled) using the training loss extractor."""
    global _EXTRACTOR
    if extractor is None:
        if _EXTRACTOR is None:
            _EXTRACTOR = PerceptualExtractor().to(np.float64)
        extractor = _EXTRACTOR

    def t(im):
        return Tensor(np.transpose(np.asarray(im, np.float64), (2, 0, 1))[None].copy())

    with no_grad():
        d = extractor.to(np.float64)(t(pred), t(target)).item()
    return max(0.0, float(d))


def average_error(psnr_db: float, ssim_val: float, lpips_val: float) -> float:
    """Geometric mean of MSE, DSSIM = sqrt(1 - SSIM) and LPIPS, times 1e3. ``lpips_val`` is unscaled."""
    mse = 10.0 ** (-psnr_db / 10.0)
    dssim = np.sqrt(max(0.0, 1.0 - ssim_val))
    return float(np.cbrt(mse * dssim * lpips_val) * 1e3)


def compute_metrics(pred: np.ndarray, target: np.ndarray,
                    extractor: Optional[PerceptualExtractor] = None) -> MetricsReport:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise MetricsError(f"image sizes differ: {pred.shape} vs {target.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise MetricsError(f"expected H x W x 3 images, got {pred.shape}")
    p = psnr(pred, target)
    s = 1.0 if np.array_equal(pred, target) else min(1.0, ssim(pred, target))
    lp = 0.0 if np.array_equal(pred, target) else lpips_proxy(pred, target, extractor)
    mse = float(np.mean((pred.astype(np.float64) - target) ** 2))
    return MetricsReport(p, s, lp * 1e3, average_error(p, s, lp), mse)
