"""Demoireing model training and evaluation on pseudo pairs.

Models plug in through a registry: anything callable on a (B, 3, H, W)
tensor that returns the same shape in [0, 1] and exposes parameters() can
train and evaluate here. A small skip-connected encoder-decoder baseline is
built in; production demoireing networks are expected to be registered by
their own adapters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .data_pipeline import Patch
from .errors import DataError, TrainingError
from .metrics import MetricResult, compute_metrics, perceptual_scorer_registered
from .networks import init_weights
from .pair_factory import PseudoPair
from .synthesis import to_pixels, to_tensor


class BaselineRestorer(nn.Module):
    """Encoder-decoder with skip connections predicting a residual correction.

    Three stride-2 downsampling stages and three mirrored upsampling stages;
    the output is input + correction clamped to [0, 1], so it can never leave
    range regardless of parameters. Input sides must be divisible by 8.
    """

    name = "baseline"

    def __init__(self, base: int = 16):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, base, 3, padding=1), nn.ReLU(inplace=True)
        )
        self.down1 = self._down(base, base * 2)
        self.down2 = self._down(base * 2, base * 4)
        self.down3 = self._down(base * 4, base * 4)
        self.up3 = nn.ConvTranspose2d(base * 4, base * 4, 3, stride=2,
                                      padding=1, output_padding=1)
        self.fuse3 = self._fuse(base * 8, base * 4)
        self.up2 = nn.ConvTranspose2d(base * 4, base * 2, 3, stride=2,
                                      padding=1, output_padding=1)
        self.fuse2 = self._fuse(base * 4, base * 2)
        self.up1 = nn.ConvTranspose2d(base * 2, base, 3, stride=2,
                                      padding=1, output_padding=1)
        self.fuse1 = self._fuse(base * 2, base)
        self.head = nn.Conv2d(base, 3, 3, padding=1)

    @staticmethod
    def _down(cin: int, cout: int) -> nn.Sequential:
        return nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    @staticmethod
    def _fuse(cin: int, cout: int) -> nn.Sequential:
        return nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(
                f"input sides must be divisible by 8, got {tuple(x.shape[-2:])}"
            )
        s = self.stem(x)
        d1 = self.down1(s)
        d2 = self.down2(d1)
        d3 = self.down3(d2)
        u3 = self.fuse3(torch.cat([self.up3(d3), d2], dim=1))
        u2 = self.fuse2(torch.cat([self.up2(u3), d1], dim=1))
        u1 = self.fuse1(torch.cat([self.up1(u2), s], dim=1))
        return (x + self.head(u1)).clamp(0.0, 1.0)


class IdentityRestorer(nn.Module):
    """Passes the input through unchanged; the do-nothing reference point."""

    name = "identity"

    def forward(self, x: Tensor) -> Tensor:
        return x.clamp(0.0, 1.0)


def build_baseline_model(generator: torch.Generator) -> BaselineRestorer:
    model = BaselineRestorer()
    init_weights(model, generator)
    return model


MODEL_REGISTRY: dict[str, Callable[[torch.Generator], nn.Module]] = {
    "baseline": build_baseline_model,
    "identity": lambda generator: IdentityRestorer(),
}


def register_model(name: str, factory: Callable[[torch.Generator], nn.Module]) -> None:
    MODEL_REGISTRY[name] = factory


def build_model(name: str, generator: torch.Generator) -> nn.Module:
    if name not in MODEL_REGISTRY:
        raise DataError(
            f"unknown demoireing model {name!r}; registered: {sorted(MODEL_REGISTRY)}"
        )
    return MODEL_REGISTRY[name](generator)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

PairSource = Sequence[PseudoPair] | Callable[[np.random.Generator], PseudoPair]


def _draw_pair(source: PairSource, rng: np.random.Generator) -> PseudoPair:
    if callable(source):
        return source(rng)
    return source[int(rng.integers(0, len(source)))]


def train_demoire(
    model: nn.Module,
    pair_source: PairSource,
    steps: int,
    rng: np.random.Generator,
    batch_size: int = 4,
    lr: float = 2e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    checkpoint_path: Path | str | None = None,
    checkpoint_every: int = 200,
    log_fn: Callable[[int, float], None] | None = None,
) -> nn.Module:
    """Minimize mean L1 between model(pseudo moire) and the clean patch.

    `pair_source` is either a materialized pair store or a callable that
    draws one fresh pair per call (online generation).
    """
    if not callable(pair_source) and len(pair_source) == 0:
        raise DataError("cannot train a demoireing model on zero pairs")
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=betas)
    model.train()
    for step in range(1, steps + 1):
        pairs = [_draw_pair(pair_source, rng) for _ in range(batch_size)]
        inputs = torch.cat([to_tensor(p.pseudo_moire.pixels) for p in pairs])
        targets = torch.cat([to_tensor(p.moire_free.pixels) for p in pairs])
        loss = (model(inputs) - targets).abs().mean()
        if not math.isfinite(loss.item()):
            raise TrainingError(f"non-finite demoireing loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if log_fn is not None:
            log_fn(step, loss.item())
        if checkpoint_path is not None and (
            step % checkpoint_every == 0 or step == steps
        ):
            save_model(model, checkpoint_path, step)
    model.eval()
    return model


def save_model(model: nn.Module, path: Path | str, step: int) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"name": getattr(model, "name", type(model).__name__),
         "state": model.state_dict(), "step": step},
        p,
    )


def load_model(path: Path | str, generator: torch.Generator | None = None) -> nn.Module:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"demoireing checkpoint not found: {p}")
    state = torch.load(p, weights_only=False)
    gen = generator or torch.Generator().manual_seed(0)
    model = build_model(state["name"], gen)
    model.load_state_dict(state["state"])
    return model.eval()


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalRow:
    name: str
    metrics: MetricResult


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mean_psnr_db: float
    mean_ssim: float
    mean_lpips: float | None

    def write_csv(self, path: Path | str) -> None:
        """One row per image plus a trailing summary row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "psnr_db", "ssim", "lpips"])
            for row in self.rows:
                writer.writerow(
                    [row.name, f"{row.metrics.psnr_db:.6f}",
                     f"{row.metrics.ssim:.6f}",
                     "" if row.metrics.lpips is None else f"{row.metrics.lpips:.6f}"]
                )
            writer.writerow(
                ["mean", f"{self.mean_psnr_db:.6f}", f"{self.mean_ssim:.6f}",
                 "" if self.mean_lpips is None else f"{self.mean_lpips:.6f}"]
            )


def restore(model: nn.Module, pixels: np.ndarray) -> np.ndarray:
    """Run one image through a demoireing model (numpy in, numpy out)."""
    with torch.no_grad():
        out = model(to_tensor(pixels))
    if out.shape[-2:] != (pixels.shape[0], pixels.shape[1]):
        raise DataError(
            f"model changed the image shape: {pixels.shape[:2]} -> "
            f"{tuple(out.shape[-2:])}"
        )
    return to_pixels(out)


def evaluate(
    model: nn.Module,
    test_pairs: Sequence[tuple[np.ndarray, np.ndarray]] | Sequence[tuple[Patch, Patch]],
    names: Sequence[str] | None = None,
) -> EvalReport:
    """Mean PSNR/SSIM (and plugin metric, if registered) over aligned pairs."""
    rows = []
    for i, (moire, clean) in enumerate(test_pairs):
        name = names[i] if names is not None else f"pair_{i:04d}"
        moire_px = moire.pixels if isinstance(moire, Patch) else moire
        clean_px = clean.pixels if isinstance(clean, Patch) else clean
        if moire_px.shape != clean_px.shape:
            raise DataError(
                f"test pair {name} has mismatched shapes: "
                f"{moire_px.shape} vs {clean_px.shape}"
            )
        restored = restore(model, moire_px)
        rows.append(EvalRow(name=name, metrics=compute_metrics(restored, clean_px)))
    if not rows:
        raise DataError("cannot evaluate on an empty test set")
    lpips_values = [r.metrics.lpips for r in rows if r.metrics.lpips is not None]
    mean_lpips = None
    if perceptual_scorer_registered() and lpips_values:
        mean_lpips = float(np.mean(lpips_values))
    return EvalReport(
        rows=rows,
        mean_psnr_db=float(np.mean([r.metrics.psnr_db for r in rows])),
        mean_ssim=float(np.mean([r.metrics.ssim for r in rows])),
        mean_lpips=mean_lpips,
    )
