"""Complexity scoring of moire patches and partition into K=4 groups.

Each patch gets a frequency score (mean absolute response of a 3x3 Laplacian
on luma) and a colorfulness score (opponent-color mean/std combination).
Group 1 holds the quarter with the smallest frequency*colorfulness product;
the rest are ordered by frequency/colorfulness and split into three quarters,
so group 2 is colorful/low-frequency and group 4 is high-frequency/drab.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_pipeline import Patch
from .errors import DataError

K_GROUPS = 4

LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=np.float64
)

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class ComplexityScore:
    """Per-patch frequency and colorfulness values."""

    frequency: float
    colorfulness: float
    patch_ref: str

    @property
    def product(self) -> float:
        return self.frequency * self.colorfulness

    @property
    def ratio(self) -> float:
        # zero-colorfulness patches are definitionally "less color": rank last
        if self.colorfulness == 0.0:
            return math.inf
        return self.frequency / self.colorfulness


@dataclass
class GroupAssignment:
    group_id: int
    patch_ref: str


def luma(pixels: np.ndarray) -> np.ndarray:
    """Convert an H x W x 3 array to single-channel luma (float64)."""
    return np.asarray(pixels, dtype=np.float64) @ _LUMA_WEIGHTS


def laplacian_response(channel: np.ndarray) -> np.ndarray:
    """3x3 Laplacian convolution of a single-channel image, replicate padding."""
    p = np.pad(np.asarray(channel, dtype=np.float64), 1, mode="edge")
    return (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
        - 4.0 * p[1:-1, 1:-1]
    )


def laplacian_frequency(patch: Patch) -> float:
    """Mean absolute Laplacian response of the patch luma."""
    return float(np.mean(np.abs(laplacian_response(luma(patch.pixels)))))


def colorfulness(patch: Patch) -> float:
    """Opponent-color colorfulness: sqrt of variances plus 0.3 * sqrt of means.

    rg = R - G and yb = 0.5 (R + G) - B are computed per pixel; the score is
    sqrt(var(rg) + var(yb)) + 0.3 sqrt(mean(rg)^2 + mean(yb)^2) with
    population variance.
    """
    pixels = np.asarray(patch.pixels, dtype=np.float64)
    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    std_term = math.sqrt(np.var(rg) + np.var(yb))
    mean_term = math.sqrt(np.mean(rg) ** 2 + np.mean(yb) ** 2)
    return std_term + 0.3 * mean_term


def score_patch(patch: Patch, patch_ref: str) -> ComplexityScore:
    return ComplexityScore(
        frequency=laplacian_frequency(patch),
        colorfulness=colorfulness(patch),
        patch_ref=patch_ref,
    )


def group_patches(scores: Sequence[ComplexityScore]) -> list[GroupAssignment]:
    """Partition scored patches into 4 groups of floor(N/4), remainder to group 4.

    Group 1 takes the floor(N/4) smallest frequency*colorfulness products.
    The remainder is sorted ascending by frequency/colorfulness; group 2 is
    the first quarter, group 3 the second, group 4 everything after (the
    largest ratios). Ties break on patch_ref for determinism.
    """
    n = len(scores)
    if n < K_GROUPS:
        raise DataError(f"need at least {K_GROUPS} scored patches, got {n}")
    quarter = n // K_GROUPS
    by_product = sorted(scores, key=lambda s: (s.product, s.patch_ref))
    group1, rest = by_product[:quarter], by_product[quarter:]
    by_ratio = sorted(rest, key=lambda s: (s.ratio, s.patch_ref))
    groups = {
        1: group1,
        2: by_ratio[:quarter],
        3: by_ratio[quarter:2 * quarter],
        4: by_ratio[2 * quarter:],
    }
    assignments = []
    for gid in range(1, K_GROUPS + 1):
        assignments.extend(
            GroupAssignment(group_id=gid, patch_ref=s.patch_ref) for s in groups[gid]
        )
    return assignments


# --------------------------------------------------------------------------
# Grouping manifest
# --------------------------------------------------------------------------

def write_grouping_manifest(
    scores: Sequence[ComplexityScore],
    assignments: Sequence[GroupAssignment],
    path: Path | str,
) -> None:
    """One record per patch: scores, derived metrics, and group id."""
    group_of = {a.patch_ref: a.group_id for a in assignments}
    records = []
    for s in sorted(scores, key=lambda s: s.patch_ref):
        ratio = s.ratio
        records.append(
            {
                "patch": s.patch_ref,
                "frequency": s.frequency,
                "colorfulness": s.colorfulness,
                "product": s.product,
                "ratio": None if math.isinf(ratio) else ratio,
                "group_id": group_of[s.patch_ref],
            }
        )
    Path(path).write_text(json.dumps(records, indent=1, sort_keys=True) + "\n")


def read_grouping_manifest(path: Path | str) -> dict[str, int]:
    """Map patch_ref -> group_id from a grouping manifest."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"grouping manifest not found: {p}")
    return {rec["patch"]: rec["group_id"] for rec in json.loads(p.read_text())}
