"""Edge-difference filtering of pseudo pairs.

A synthesis that destroys the clean patch's structure shows a large summed
absolute difference between the Laplacian edge maps of the pair. Thresholds
are calibrated per (group, crop size) as a percentile of scores over a large
sample of fresh syntheses; pairs at or below the threshold are kept.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_pipeline import Patch, random_crop, sample_unpaired
from .errors import DataError
from .moire_prior import laplacian_response, luma
from .synthesis import SynthesisBundle, synthesize

DEFAULT_CALIBRATION_SAMPLES = 6400
MIN_CALIBRATION_SAMPLES = 100
DEFAULT_GAMMAS = {1: 50, 2: 40, 3: 30, 4: 20}


@dataclass
class StructureScore:
    """Summed absolute edge difference of one pseudo pair."""

    value: float
    pair_ref: str
    group_id: int
    crop_size: int


@dataclass
class ThresholdEntry:
    gamma_percent: int
    threshold_value: float
    sample_count: int


class ThresholdTable:
    """Per-(group, crop size) absolute score thresholds."""

    def __init__(self, config_hash: str = ""):
        self.entries: dict[tuple[int, int], ThresholdEntry] = {}
        self.config_hash = config_hash

    def set(self, group_id: int, crop_size: int, entry: ThresholdEntry) -> None:
        self.entries[(group_id, crop_size)] = entry

    def get(self, group_id: int, crop_size: int) -> ThresholdEntry:
        key = (group_id, crop_size)
        if key not in self.entries:
            raise DataError(
                f"no denoise threshold calibrated for group {group_id} "
                f"at crop size {crop_size}"
            )
        return self.entries[key]

    def save(self, path: Path | str) -> None:
        records = [
            {
                "group_id": gid,
                "crop_size": crop,
                "gamma_percent": e.gamma_percent,
                "threshold_value": e.threshold_value,
                "sample_count": e.sample_count,
            }
            for (gid, crop), e in sorted(self.entries.items())
        ]
        payload = {"config_hash": self.config_hash, "entries": records}
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "ThresholdTable":
        p = Path(path)
        if not p.is_file():
            raise DataError(f"threshold table not found: {p}")
        payload = json.loads(p.read_text())
        table = cls(config_hash=payload.get("config_hash", ""))
        for rec in payload["entries"]:
            table.set(
                rec["group_id"],
                rec["crop_size"],
                ThresholdEntry(
                    gamma_percent=rec["gamma_percent"],
                    threshold_value=rec["threshold_value"],
                    sample_count=rec["sample_count"],
                ),
            )
        return table


def edge_map(patch: Patch) -> np.ndarray:
    """Laplacian edge map of the patch luma (replicate padding, 3x3 kernel)."""
    return laplacian_response(luma(patch.pixels))


def structure_score(p_tilde: Patch, p_f: Patch) -> float:
    """Sum of absolute edge-map differences between a pseudo pair."""
    if p_tilde.pixels.shape != p_f.pixels.shape:
        raise DataError(
            f"pair shapes differ: {p_tilde.pixels.shape} vs {p_f.pixels.shape}"
        )
    return float(np.sum(np.abs(edge_map(p_tilde) - edge_map(p_f))))


def percentile_threshold(scores: Sequence[float], gamma_percent: float) -> float:
    """Nearest-rank percentile: value at 1-based index ceil(gamma/100 * n)."""
    if not scores:
        raise ValueError("cannot take a percentile of zero scores")
    if not 0 < gamma_percent <= 100:
        raise ValueError(f"gamma_percent must be in (0, 100], got {gamma_percent}")
    ordered = sorted(scores)
    rank = math.ceil(gamma_percent / 100.0 * len(ordered))
    return float(ordered[rank - 1])


def calibrate_threshold(
    bundle: SynthesisBundle,
    moire_group: Sequence[Patch],
    free_set: Sequence[Patch],
    gamma_percent: int,
    rng: np.random.Generator,
    n_samples: int = DEFAULT_CALIBRATION_SAMPLES,
) -> ThresholdEntry:
    """Score n_samples fresh syntheses and take the gamma-th percentile.

    Calibration pairs are drawn with replacement from the group's patches.
    """
    if n_samples < MIN_CALIBRATION_SAMPLES:
        raise DataError(
            f"calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, "
            f"got {n_samples}"
        )
    scores = []
    for _ in range(n_samples):
        p_m, p_f = sample_unpaired(moire_group, free_set, rng)
        p_m = random_crop(p_m, bundle.crop_size, rng)
        p_f = random_crop(p_f, bundle.crop_size, rng)
        scores.append(structure_score(synthesize(bundle, p_m, p_f), p_f))
    return ThresholdEntry(
        gamma_percent=gamma_percent,
        threshold_value=percentile_threshold(scores, gamma_percent),
        sample_count=n_samples,
    )


def accept_pair(score: StructureScore, table: ThresholdTable) -> bool:
    """Keep a pair iff its score is at or below the calibrated threshold."""
    entry = table.get(score.group_id, score.crop_size)
    return score.value <= entry.threshold_value
