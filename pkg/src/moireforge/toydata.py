"""Procedural toy corpus for desk-scale smoke runs.

Clean images are smooth random gradients with a few soft shapes; striped
images superimpose a handful of sinusoidal gratings with per-channel phase
offsets (so fringes are colored) under a slowly varying envelope. Training
moire and clean sets are generated from disjoint content draws so they are
genuinely unpaired; the test split is paired by construction.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

DEFAULT_SIZE = (256, 512)  # (height, width); >= 192 per side, cells=8 friendly


def _smooth_content(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    img = np.zeros((height, width, 3))
    for c in range(3):
        field = rng.uniform(0.25, 0.75) * np.ones((height, width))
        field += rng.uniform(-0.3, 0.3) * xx + rng.uniform(-0.3, 0.3) * yy
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            field += rng.uniform(0.05, 0.15) * np.sin(
                2 * np.pi * (fx * xx + fy * yy) + phase
            )
        img[..., c] = field
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.1, 0.9, size=3)
        cy, cx = rng.uniform(0.1, 0.9) * height, rng.uniform(0.1, 0.9) * width
        ry, rx = rng.uniform(0.05, 0.25) * height, rng.uniform(0.05, 0.25) * width
        mask = ((yy * height - cy) / ry) ** 2 + ((xx * width - cx) / rx) ** 2 <= 1.0
        img[mask] = 0.6 * img[mask] + 0.4 * color
    img = gaussian_filter(img, sigma=(1.5, 1.5, 0))
    return np.clip(img, 0.0, 1.0)


def _stripe_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    stripes = np.zeros((height, width, 3))
    for _ in range(rng.integers(1, 4)):
        angle = rng.uniform(0, np.pi)
        period = rng.uniform(4.0, 16.0)
        fx = np.cos(angle) / period
        fy = np.sin(angle) / period
        amplitude = rng.uniform(0.10, 0.20)
        base_phase = rng.uniform(0, 2 * np.pi)
        for c in range(3):
            phase = base_phase + rng.uniform(-0.8, 0.8)
            stripes[..., c] += amplitude * np.sin(
                2 * np.pi * (fx * xx + fy * yy) + phase
            )
    # slow positive envelope so stripe strength varies across the frame
    env = np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * xx / width
                 + 2 * np.pi * rng.uniform(0.5, 1.5) * yy / height
                 + rng.uniform(0, 2 * np.pi))
    envelope = 0.65 + 0.35 * env
    return stripes * envelope[..., None]


def make_striped(clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = clean.shape[:2]
    return np.clip(clean + _stripe_field(rng, h, w), 0.0, 1.0)


def _save(pixels: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def make_toy_corpus(
    root: Path | str,
    seed: int = 0,
    n_moire: int = 10,
    n_free: int = 10,
    n_test: int = 6,
    size: tuple[int, int] = DEFAULT_SIZE,
) -> dict[str, Path]:
    """Generate train_moire/, train_clean/, test_moire/, test_clean/ under root."""
    height, width = size
    base = Path(root)
    dirs = {
        "train_moire": base / "train_moire",
        "train_clean": base / "train_clean",
        "test_moire": base / "test_moire",
        "test_clean": base / "test_clean",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    for i in range(n_moire):
        rng = np.random.default_rng([seed, 1, i])
        _save(make_striped(_smooth_content(rng, height, width), rng),
              dirs["train_moire"] / f"moire_{i:03d}.png")
    for i in range(n_free):
        rng = np.random.default_rng([seed, 2, i])
        _save(_smooth_content(rng, height, width),
              dirs["train_clean"] / f"clean_{i:03d}.png")
    for i in range(n_test):
        rng = np.random.default_rng([seed, 3, i])
        clean = _smooth_content(rng, height, width)
        _save(clean, dirs["test_clean"] / f"test_{i:03d}.png")
        _save(make_striped(clean, rng), dirs["test_moire"] / f"test_{i:03d}.png")
    return dirs
