"""Reference PSNR/SSIM implementations and the perceptual-scorer plugin hook.

PSNR is computed over all channels and capped at 100 dB; SSIM follows the
original single-scale formulation (11x11 Gaussian window, sigma 1.5,
C1=(0.01 L)^2, C2=(0.03 L)^2) evaluated on luma over valid window positions.
A learned perceptual metric is never bundled: callers may register any
two-image-to-scalar callable and reports pick it up as `lpips`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import convolve2d

from .errors import DataError
from .moire_prior import luma

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

PerceptualScorer = Callable[[np.ndarray, np.ndarray], float]

_perceptual_scorer: Optional[PerceptualScorer] = None


@dataclass
class MetricResult:
    psnr_db: float
    ssim: float
    lpips: float | None = None


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical images."""
    _check_shapes(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_value ** 2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """Mean local structural similarity on luma, valid window positions only."""
    _check_shapes(a, b)
    x = luma(a) if a.ndim == 3 else np.asarray(a, dtype=np.float64)
    y = luma(b) if b.ndim == 3 else np.asarray(b, dtype=np.float64)
    if min(x.shape) < SSIM_WINDOW:
        raise DataError(
            f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} "
            f"similarity window"
        )
    window = _gaussian_window()
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2

    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    sigma_x = convolve2d(x * x, window, mode="valid") - mu_x ** 2
    sigma_y = convolve2d(y * y, window, mode="valid") - mu_y ** 2
    sigma_xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2)
    return float(np.mean(num / den))


def register_perceptual_scorer(scorer: PerceptualScorer | None) -> None:
    """Install (or, with None, remove) the perceptual metric plugin."""
    global _perceptual_scorer
    _perceptual_scorer = scorer


def perceptual_scorer_registered() -> bool:
    return _perceptual_scorer is not None


def compute_metrics(a: np.ndarray, b: np.ndarray) -> MetricResult:
    """PSNR + SSIM, plus the plugin metric when one is registered.

    A failing plugin logs a warning and leaves lpips unset; the built-in
    metrics are unaffected.
    """
    result = MetricResult(psnr_db=psnr(a, b), ssim=ssim(a, b))
    if _perceptual_scorer is not None:
        try:
            result.lpips = float(_perceptual_scorer(a, b))
        except Exception as exc:  # plugin isolation: never poison a report
            logger.warning("perceptual scorer failed, recording lpips as missing: %s", exc)
            result.lpips = None
    return result
