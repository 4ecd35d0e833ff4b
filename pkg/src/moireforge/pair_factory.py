"""Pseudo-pair generation: pick a group, synthesize, score, filter, emit.

Works online (one pair at a time, feeding a training loop directly) or
offline (materializing a pair store on disk). A retry cap guards against
livelock when a threshold rejects nearly everything; if every attempt is
rejected the best-scoring attempt is emitted and flagged as a fallback.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .data_pipeline import Patch, random_crop, sample_unpaired
from .denoise import StructureScore, ThresholdTable, accept_pair, structure_score
from .errors import DataError
from .synthesis import SynthesisBundle, synthesize

DEFAULT_RETRY_CAP = 16


@dataclass
class PseudoPair:
    """A synthesized moire patch over a clean patch, with its filter verdict.

    `fallback` marks pairs admitted by the retry guard despite a score above
    the threshold; otherwise accepted means score <= threshold.
    """

    pseudo_moire: Patch
    moire_free: Patch
    group_id: int
    score: float
    accepted: bool
    fallback: bool = False
    moire_source: str = ""


def generate_pair(
    bundles: Mapping[int, SynthesisBundle],
    groups: Mapping[int, Sequence[Patch]],
    free_set: Sequence[Patch],
    table: ThresholdTable,
    rng: np.random.Generator,
    retry_cap: int = DEFAULT_RETRY_CAP,
) -> PseudoPair:
    """Synthesize one accepted pseudo pair (uniformly random group)."""
    if retry_cap < 1:
        raise ValueError(f"retry_cap must be >= 1, got {retry_cap}")
    group_ids = sorted(bundles)
    if sorted(groups) != group_ids:
        raise DataError(
            f"bundle groups {group_ids} do not match patch groups {sorted(groups)}"
        )
    group_id = group_ids[int(rng.integers(0, len(group_ids)))]
    bundle = bundles[group_id]
    table.get(group_id, bundle.crop_size)  # fail fast if uncalibrated

    best: PseudoPair | None = None
    for _ in range(retry_cap):
        p_m, p_f = sample_unpaired(groups[group_id], free_set, rng)
        p_m = random_crop(p_m, bundle.crop_size, rng)
        p_f = random_crop(p_f, bundle.crop_size, rng)
        p_tilde = synthesize(bundle, p_m, p_f)
        value = structure_score(p_tilde, p_f)
        score = StructureScore(
            value=value,
            pair_ref=f"{p_m.source_id}+{p_f.source_id}",
            group_id=group_id,
            crop_size=bundle.crop_size,
        )
        pair = PseudoPair(
            pseudo_moire=p_tilde,
            moire_free=p_f,
            group_id=group_id,
            score=value,
            accepted=accept_pair(score, table),
            moire_source=p_m.source_id,
        )
        if pair.accepted:
            return pair
        if best is None or pair.score < best.score:
            best = pair
    assert best is not None
    best.accepted = True
    best.fallback = True
    return best


def _save_png(pixels: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def generate_dataset(
    count: int,
    output_path: Path | str,
    bundles: Mapping[int, SynthesisBundle],
    groups: Mapping[int, Sequence[Patch]],
    free_set: Sequence[Patch],
    table: ThresholdTable,
    rng: np.random.Generator,
    retry_cap: int = DEFAULT_RETRY_CAP,
    config_hash: str = "",
) -> Path:
    """Write `count` accepted pairs plus a manifest; returns the manifest path.

    Pairs are staged in a temporary sibling directory and moved into place
    only when complete, so a failed run leaves no partial store behind.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = Path(output_path)
    staging = out.parent / (out.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    records = []
    try:
        for i in range(count):
            pair = generate_pair(bundles, groups, free_set, table, rng, retry_cap)
            pseudo_file = f"pair_{i:06d}_pseudo.png"
            clean_file = f"pair_{i:06d}_clean.png"
            _save_png(pair.pseudo_moire.pixels, staging / pseudo_file)
            _save_png(pair.moire_free.pixels, staging / clean_file)
            records.append(
                {
                    "index": i,
                    "pseudo_file": pseudo_file,
                    "clean_file": clean_file,
                    "group_id": pair.group_id,
                    "score": pair.score,
                    "fallback": pair.fallback,
                    "moire_source": pair.moire_source,
                    "clean_source": pair.moire_free.source_id,
                }
            )
        manifest = {"config_hash": config_hash, "count": count, "pairs": records}
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True) + "\n"
        )
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    return out / "manifest.json"


def read_pair_store(store_dir: Path | str) -> list[PseudoPair]:
    """Load a pair store back into memory."""
    store = Path(store_dir)
    manifest_path = store / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"pair store manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    pairs = []
    for rec in manifest["pairs"]:
        pairs.append(
            PseudoPair(
                pseudo_moire=_load_patch(store / rec["pseudo_file"], "moire",
                                         rec["clean_source"]),
                moire_free=_load_patch(store / rec["clean_file"], "moire_free",
                                       rec["clean_source"]),
                group_id=rec["group_id"],
                score=rec["score"],
                accepted=True,
                fallback=rec["fallback"],
                moire_source=rec["moire_source"],
            )
        )
    return pairs


def _load_patch(path: Path, role: str, source_id: str) -> Patch:
    if not path.is_file():
        raise DataError(f"pair file listed in manifest is missing: {path}")
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return Patch(pixels=pixels, source_id=source_id, grid_index=0, role=role)
