"""Image ingestion, patch splitting, random crops, and unpaired sampling.

Images are loaded as float arrays in [0, 1] (RGB), split into a fixed
non-overlapping grid of patches, and materialized to a patch store on disk
(lossless PNG + JSON manifest) so grouping and training are replayable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

MIN_IMAGE_SIDE = 192  # smallest standard crop size the pipeline supports

# cells -> (rows, cols); keeps patches near-square on 16:9-ish frames
GRID_LAYOUTS = {8: (2, 4), 6: (2, 3)}

ROLES = ("moire", "moire_free")


@dataclass
class ImageRecord:
    """A loaded source image: H x W x 3 float32 pixels in [0, 1]."""

    id: str
    pixels: np.ndarray
    role: str


@dataclass
class Patch:
    """A rectangular region of a source image, with provenance."""

    pixels: np.ndarray
    source_id: str
    grid_index: int
    role: str

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def load_image(path: Path, role: str, min_side: int = MIN_IMAGE_SIDE) -> ImageRecord:
    """Decode one image file into an ImageRecord, normalized to [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image file: {path}") from exc
    h, w = pixels.shape[:2]
    if h < min_side or w < min_side:
        raise DataError(
            f"image {path} is {w}x{h}; both sides must be >= {min_side}"
        )
    return ImageRecord(id=path.stem, pixels=pixels, role=role)


def load_image_set(
    directory_path: Path | str, role: str, min_side: int = MIN_IMAGE_SIDE
) -> list[ImageRecord]:
    """Load every PNG/JPEG in a directory, in lexicographic filename order."""
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    directory = Path(directory_path)
    if not directory.is_dir():
        raise DataError(f"input directory does not exist: {directory}")
    files = sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not files:
        raise DataError(f"no PNG/JPEG files found in {directory}")
    return [load_image(p, role, min_side=min_side) for p in files]


def split_into_patches(
    image: ImageRecord, cells: int, min_patch_side: int = 1
) -> list[Patch]:
    """Split an image into a non-overlapping grid of patches, row-major.

    Dimensions that do not divide evenly are truncated at the right/bottom.
    `min_patch_side` lets callers reject grids too small for their crop size.
    """
    if cells not in GRID_LAYOUTS:
        raise ValueError(f"cells must be one of {sorted(GRID_LAYOUTS)}, got {cells}")
    rows, cols = GRID_LAYOUTS[cells]
    h, w = image.pixels.shape[:2]
    ph, pw = h // rows, w // cols
    if ph < min_patch_side or pw < min_patch_side:
        raise DataError(
            f"image {image.id} ({w}x{h}) yields {pw}x{ph} cells for a "
            f"{cols}x{rows} grid; minimum cell side is {min_patch_side}"
        )
    patches = []
    for r in range(rows):
        for c in range(cols):
            region = image.pixels[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw]
            patches.append(
                Patch(
                    pixels=np.ascontiguousarray(region),
                    source_id=image.id,
                    grid_index=r * cols + c,
                    role=image.role,
                )
            )
    return patches


def random_crop(patch: Patch, size: int, rng: np.random.Generator) -> Patch:
    """Return a size x size sub-region at a uniformly random valid offset."""
    h, w = patch.pixels.shape[:2]
    if size < 1:
        raise ValueError(f"crop size must be positive, got {size}")
    if h < size or w < size:
        raise DataError(
            f"patch {patch.source_id}#{patch.grid_index} is {w}x{h}; "
            f"cannot crop {size}x{size}"
        )
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return Patch(
        pixels=np.ascontiguousarray(patch.pixels[top:top + size, left:left + size]),
        source_id=patch.source_id,
        grid_index=patch.grid_index,
        role=patch.role,
    )


def sample_unpaired(
    moire_group: Sequence[Patch],
    free_set: Sequence[Patch],
    rng: np.random.Generator,
) -> tuple[Patch, Patch]:
    """Draw an (unpaired) moire patch and clean patch from distinct sources."""
    if not moire_group or not free_set:
        raise DataError("cannot sample: empty moire group or clean set")
    free_sources = {p.source_id for p in free_set}
    valid = [
        p for p in moire_group
        if free_sources - {p.source_id}
    ]
    if not valid:
        raise DataError(
            "unpaired sampling impossible: every candidate pair shares a source image"
        )
    p_m = valid[int(rng.integers(0, len(valid)))]
    candidates = [p for p in free_set if p.source_id != p_m.source_id]
    p_f = candidates[int(rng.integers(0, len(candidates)))]
    return p_m, p_f


# --------------------------------------------------------------------------
# Patch store (directory of lossless PNGs + manifest)
# --------------------------------------------------------------------------

def _to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def patch_filename(patch: Patch) -> str:
    return f"{patch.role}/{patch.source_id}_{patch.grid_index:03d}.png"


def write_patch_store(patches: Sequence[Patch], store_dir: Path | str) -> Path:
    """Write patches as PNGs plus a manifest; returns the manifest path."""
    store = Path(store_dir)
    records = []
    for patch in patches:
        rel = patch_filename(patch)
        out = store / rel
        out.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(_to_uint8(patch.pixels)).save(out, format="PNG")
        records.append(
            {
                "file": rel,
                "source_id": patch.source_id,
                "grid_index": patch.grid_index,
                "role": patch.role,
            }
        )
    records.sort(key=lambda r: r["file"])
    manifest = store / "manifest.json"
    manifest.write_text(json.dumps(records, indent=1, sort_keys=True) + "\n")
    return manifest


def read_patch_store(store_dir: Path | str, role: str | None = None) -> list[Patch]:
    """Load patches back from a store, optionally filtered by role."""
    store = Path(store_dir)
    manifest = store / "manifest.json"
    if not manifest.is_file():
        raise DataError(f"patch store manifest not found: {manifest}")
    records = json.loads(manifest.read_text())
    patches = []
    for rec in records:
        if role is not None and rec["role"] != role:
            continue
        path = store / rec["file"]
        if not path.is_file():
            raise DataError(f"patch file listed in manifest is missing: {path}")
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        patches.append(
            Patch(
                pixels=pixels,
                source_id=rec["source_id"],
                grid_index=rec["grid_index"],
                role=rec["role"],
            )
        )
    return patches
