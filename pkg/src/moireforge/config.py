"""Run configuration with inlined defaults, YAML loading, and hashing.

Every knob has a default matching the published training recipe; a YAML
config file overrides defaults, and CLI flags override the file. The hash
of the resolved config is stamped into every artifact so dependent stages
can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import DataError


@dataclass
class RunConfig:
    # dataset paths
    moire_dir: str = ""
    moire_free_dir: str = ""
    test_moire_dir: str = ""
    test_clean_dir: str = ""
    out_root: str = "runs/default"

    # preprocessing
    cells: int = 8
    crop_size: int = 192
    group_count: int = 4

    # adaptive denoise
    gammas: dict[int, int] = field(default_factory=lambda: {1: 50, 2: 40, 3: 30, 4: 20})
    n_calibration: int = 6400

    # synthesis optimizer
    synth_epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999

    # pair generation / demoireing
    pairs_count: int = 1000
    retry_cap: int = 16
    demoire_epochs: int = 150
    demoire_steps: int | None = None
    demoire_model: str = "baseline"

    seed: int = 0

    def __post_init__(self):
        self.gammas = {int(k): int(v) for k, v in self.gammas.items()}
        if self.group_count != 4:
            raise DataError("the grouping prior is defined for exactly 4 groups")
        if sorted(self.gammas) != [1, 2, 3, 4]:
            raise DataError(f"gammas must cover groups 1..4, got {sorted(self.gammas)}")

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)

    def config_hash(self) -> str:
        payload = asdict(self)
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- artifact layout under out_root ------------------------------------

    def path(self, *parts: str) -> Path:
        return Path(self.out_root).joinpath(*parts)

    @property
    def patch_store_dir(self) -> Path:
        return self.path("patches")

    @property
    def grouping_manifest_path(self) -> Path:
        return self.path("grouping.json")

    def synth_checkpoint_dir(self, group_id: int) -> Path:
        return self.path("synth", f"group{group_id}_crop{self.crop_size}")

    @property
    def threshold_table_path(self) -> Path:
        return self.path(f"thresholds_crop{self.crop_size}.json")

    @property
    def pair_store_dir(self) -> Path:
        return self.path("pairs")

    @property
    def demoire_checkpoint_path(self) -> Path:
        return self.path("demoire", "model.pt")

    @property
    def eval_dir(self) -> Path:
        return self.path("eval")


def load_config(path: Path | str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve a config: defaults <- YAML file <- explicit overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise DataError(f"config file {p} must contain a mapping")
        unknown = set(loaded) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown config keys in {p}: {sorted(unknown)}")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def write_stage_meta(directory: Path, config: RunConfig, stage: str) -> None:
    """Record the producing stage and config hash inside an artifact dir."""
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"stage": stage, "config_hash": config.config_hash(),
            "config": asdict(config)}
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n"
    )


def check_stage_meta(directory: Path, config: RunConfig, stage: str) -> None:
    """Refuse to consume an artifact produced under a different config."""
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise DataError(
            f"missing artifact metadata for stage {stage!r}: {meta_path} "
            f"(run the producing stage first)"
        )
    meta = json.loads(meta_path.read_text())
    if meta["config_hash"] != config.config_hash():
        raise DataError(
            f"artifact in {directory} was produced with config hash "
            f"{meta['config_hash']}, current config hashes to "
            f"{config.config_hash()}; refusing to mix stages"
        )
