"""Adversarial training of the per-group moire synthesis networks.

Each complexity group trains its own bundle of four networks from scratch:
the generator learns to stamp moire structure onto clean patches, judged by
a least-squares discriminator, with feature- and content-matching terms
keeping the synthesis anchored to its two inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import chain
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor

from .data_pipeline import Patch, random_crop
from .errors import DataError, TrainingError
from .networks import (
    GENERATOR_DOWNSAMPLE,
    ChannelConfig,
    FeatureEncoder,
    PatchDiscriminator,
    PseudoMoireGenerator,
    init_weights,
)

DEFAULT_EPOCHS = 100
DEFAULT_LR = 2e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_BATCH = 4


@dataclass
class SynthesisBundle:
    """The four networks of one complexity group, plus training metadata."""

    group_id: int
    crop_size: int
    moire_encoder: FeatureEncoder
    generator: PseudoMoireGenerator
    discriminator: PatchDiscriminator
    content_encoder: FeatureEncoder
    channels: ChannelConfig
    seed: int
    epoch: int = 0

    def generator_side_parameters(self):
        return chain(
            self.moire_encoder.parameters(),
            self.generator.parameters(),
            self.content_encoder.parameters(),
        )

    def modules(self):
        return (
            self.moire_encoder,
            self.generator,
            self.discriminator,
            self.content_encoder,
        )

    def eval(self) -> "SynthesisBundle":
        for m in self.modules():
            m.eval()
        return self


@dataclass
class LossBreakdown:
    """Per-term losses of one training step; total is always their sum."""

    dis_g: float
    dis_d: float
    fea: float
    con: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.dis_g + self.dis_d + self.fea + self.con


def build_bundle(
    group_id: int,
    crop_size: int,
    generator: torch.Generator,
    channels: ChannelConfig | None = None,
    seed: int = 0,
) -> SynthesisBundle:
    """Construct the four untrained networks with Gaussian(0, 0.02) weights."""
    if crop_size % GENERATOR_DOWNSAMPLE != 0:
        raise DataError(
            f"crop size {crop_size} is not divisible by the generator "
            f"downsampling factor {GENERATOR_DOWNSAMPLE}"
        )
    cfg = channels or ChannelConfig()
    moire_encoder = FeatureEncoder(cfg.encoder_channels)
    gen = PseudoMoireGenerator(cfg.encoder_channels, cfg.generator_channels)
    disc = PatchDiscriminator(cfg.discriminator_channels)
    content_encoder = FeatureEncoder(cfg.encoder_channels)
    for m in (moire_encoder, gen, disc, content_encoder):
        init_weights(m, generator)
    return SynthesisBundle(
        group_id=group_id,
        crop_size=crop_size,
        moire_encoder=moire_encoder,
        generator=gen,
        discriminator=disc,
        content_encoder=content_encoder,
        channels=cfg,
        seed=seed,
    )


# --------------------------------------------------------------------------
# Loss terms (least-squares adversarial + L1 feature/content matching)
# --------------------------------------------------------------------------

def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """Mean squared distance of discriminator outputs on syntheses to 1."""
    return ((d_fake - 1.0) ** 2).mean()


def discriminator_adversarial_loss(d_fake: Tensor, d_real: Tensor) -> Tensor:
    """Push syntheses to 0 and real moire patches to 1."""
    return (d_fake ** 2).mean() + ((d_real - 1.0) ** 2).mean()


def feature_match_loss(fake_features: Tensor, target_features: Tensor) -> Tensor:
    """Mean absolute difference; no gradient flows into the target branch."""
    if fake_features.shape != target_features.shape:
        raise ValueError(
            f"feature shapes differ: {tuple(fake_features.shape)} vs "
            f"{tuple(target_features.shape)}"
        )
    return (fake_features - target_features.detach()).abs().mean()


content_match_loss = feature_match_loss


# --------------------------------------------------------------------------
# Patch <-> tensor conversion and inference helpers
# --------------------------------------------------------------------------

def to_tensor(pixels: np.ndarray) -> Tensor:
    """H x W x 3 float array -> 1 x 3 x H x W float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)


def to_pixels(batch: Tensor) -> np.ndarray:
    """1 x 3 x H x W tensor -> H x W x 3 float32 array, clipped to [0, 1]."""
    arr = batch.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).detach().cpu().numpy()
    return np.ascontiguousarray(arr, dtype=np.float32)


def _check_patch_shape(bundle: SynthesisBundle, patch: Patch, name: str) -> None:
    h, w = patch.pixels.shape[:2]
    if h != bundle.crop_size or w != bundle.crop_size:
        raise DataError(
            f"{name} patch is {w}x{h}; bundle for group {bundle.group_id} "
            f"expects {bundle.crop_size}x{bundle.crop_size}"
        )


def encode_moire(bundle: SynthesisBundle, p_m: Patch) -> np.ndarray:
    """Extract the moire feature map of a real moire patch (H x W x C)."""
    _check_patch_shape(bundle, p_m, "moire")
    with torch.no_grad():
        features = bundle.moire_encoder(to_tensor(p_m.pixels))
    return features.squeeze(0).permute(1, 2, 0).numpy()


def generate(bundle: SynthesisBundle, features: np.ndarray, p_f: Patch) -> Patch:
    """Synthesize a pseudo moire patch from a feature map and a clean patch."""
    if features.shape[:2] != p_f.pixels.shape[:2]:
        raise DataError(
            f"feature map {features.shape[:2]} and clean patch "
            f"{p_f.pixels.shape[:2]} are not spatially aligned"
        )
    f = torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32))
    f = f.permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        fake = bundle.generator(f, to_tensor(p_f.pixels))
    return Patch(
        pixels=to_pixels(fake),
        source_id=p_f.source_id,
        grid_index=p_f.grid_index,
        role="moire",
    )


def synthesize(bundle: SynthesisBundle, p_m: Patch, p_f: Patch) -> Patch:
    """Full inference path: encode the moire patch, generate over the clean one."""
    _check_patch_shape(bundle, p_m, "moire")
    _check_patch_shape(bundle, p_f, "clean")
    return generate(bundle, encode_moire(bundle, p_m), p_f)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def learning_rate_at_epoch(
    epoch: int, total_epochs: int = DEFAULT_EPOCHS, initial_lr: float = DEFAULT_LR
) -> float:
    """Constant for the first half, then linear decay to 0 at the last epoch."""
    if epoch < 1 or epoch > total_epochs:
        raise ValueError(f"epoch {epoch} outside schedule 1..{total_epochs}")
    half = total_epochs // 2
    if epoch <= half:
        return initial_lr
    return initial_lr * (total_epochs - epoch) / (total_epochs - half)


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(
    bundle: SynthesisBundle,
    p_m: Tensor,
    p_f: Tensor,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
) -> LossBreakdown:
    """One alternating update; returns per-term losses measured pre-update.

    The discriminator step sees the synthesis as a constant; the generator
    step sees the discriminator frozen. Both gradients are taken at the
    pre-update parameters so the reported losses match what was optimized.
    """
    f_m = bundle.moire_encoder(p_m)
    p_tilde = bundle.generator(f_m, p_f)

    loss_d = discriminator_adversarial_loss(
        bundle.discriminator(p_tilde.detach()), bundle.discriminator(p_m)
    )

    _set_requires_grad(bundle.discriminator, False)
    loss_g_adv = generator_adversarial_loss(bundle.discriminator(p_tilde))
    loss_fea = feature_match_loss(bundle.moire_encoder(p_tilde), f_m)
    loss_con = content_match_loss(
        bundle.content_encoder(p_tilde), bundle.content_encoder(p_f)
    )
    loss_g = loss_g_adv + loss_fea + loss_con

    breakdown = LossBreakdown(
        dis_g=loss_g_adv.item(),
        dis_d=loss_d.item(),
        fea=loss_fea.item(),
        con=loss_con.item(),
    )
    for term, value in (("dis_g", breakdown.dis_g), ("dis_d", breakdown.dis_d),
                        ("fea", breakdown.fea), ("con", breakdown.con)):
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss term {term}: {value}")

    opt_g.zero_grad()
    loss_g.backward()
    _set_requires_grad(bundle.discriminator, True)
    opt_d.zero_grad()
    loss_d.backward()
    opt_d.step()
    opt_g.step()
    return breakdown


class SynthesisTrainer:
    """Full training loop for one complexity group.

    One epoch is a shuffled pass over the group's moire patches (partial
    trailing batch dropped); each moire patch is paired with a clean patch
    from a different source image and both are random-cropped. All stochastic
    choices come from a private numpy generator so checkpoint/resume replays
    the identical stream.
    """

    def __init__(
        self,
        group_id: int,
        group: Sequence[Patch],
        free_set: Sequence[Patch],
        crop_size: int,
        seed: int,
        epochs: int = DEFAULT_EPOCHS,
        batch_size: int = DEFAULT_BATCH,
        initial_lr: float = DEFAULT_LR,
        betas: tuple[float, float] = DEFAULT_BETAS,
        channels: ChannelConfig | None = None,
        checkpoint_dir: Path | str | None = None,
        log_fn: Callable[[int, int, LossBreakdown], None] | None = None,
    ):
        if len(group) < batch_size:
            raise DataError(
                f"group {group_id} has {len(group)} patches; "
                f"need at least the batch size ({batch_size})"
            )
        self.group_id = group_id
        self.group = list(group)
        self.free_set = list(free_set)
        self.crop_size = crop_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.initial_lr = initial_lr
        self.betas = betas
        self.seed = seed
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.log_fn = log_fn

        init_gen = torch.Generator().manual_seed(_derive_seed(seed, group_id, 0))
        self.bundle = build_bundle(group_id, crop_size, init_gen, channels, seed=seed)
        self.data_rng = np.random.default_rng([seed, group_id, 1])
        self.opt_g = torch.optim.Adam(
            self.bundle.generator_side_parameters(), lr=initial_lr, betas=betas
        )
        self.opt_d = torch.optim.Adam(
            self.bundle.discriminator.parameters(), lr=initial_lr, betas=betas
        )

    # -- data ---------------------------------------------------------------

    def _draw_free(self, p_m: Patch) -> Patch:
        candidates = [p for p in self.free_set if p.source_id != p_m.source_id]
        if not candidates:
            raise DataError(
                f"no clean patch from a different source than {p_m.source_id}"
            )
        return candidates[int(self.data_rng.integers(0, len(candidates)))]

    def _epoch_batches(self):
        order = self.data_rng.permutation(len(self.group))
        n_full = len(order) // self.batch_size
        for b in range(n_full):
            idx = order[b * self.batch_size:(b + 1) * self.batch_size]
            moire, clean = [], []
            for i in idx:
                p_m = random_crop(self.group[i], self.crop_size, self.data_rng)
                p_f = random_crop(
                    self._draw_free(self.group[i]), self.crop_size, self.data_rng
                )
                moire.append(to_tensor(p_m.pixels))
                clean.append(to_tensor(p_f.pixels))
            yield torch.cat(moire), torch.cat(clean)

    # -- schedule / checkpointing --------------------------------------------

    def _set_lr(self, epoch: int) -> None:
        lr = learning_rate_at_epoch(epoch, self.epochs, self.initial_lr)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def checkpoint_path(self, epoch: int) -> Path:
        assert self.checkpoint_dir is not None
        return self.checkpoint_dir / f"epoch_{epoch:04d}.pt"

    def save_checkpoint(self) -> Path:
        path = self.checkpoint_path(self.bundle.epoch)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "group_id": self.group_id,
                "crop_size": self.crop_size,
                "epoch": self.bundle.epoch,
                "seed": self.seed,
                "channels": asdict(self.bundle.channels),
                "moire_encoder": self.bundle.moire_encoder.state_dict(),
                "generator": self.bundle.generator.state_dict(),
                "discriminator": self.bundle.discriminator.state_dict(),
                "content_encoder": self.bundle.content_encoder.state_dict(),
                "opt_g": self.opt_g.state_dict(),
                "opt_d": self.opt_d.state_dict(),
                "data_rng": self.data_rng.bit_generator.state,
            },
            path,
        )
        return path

    def load_checkpoint(self, path: Path | str) -> None:
        state = torch.load(path, weights_only=False)
        if state["group_id"] != self.group_id or state["crop_size"] != self.crop_size:
            raise DataError(
                f"checkpoint {path} is for group {state['group_id']} at crop "
                f"{state['crop_size']}; trainer wants group {self.group_id} "
                f"at crop {self.crop_size}"
            )
        self.bundle.moire_encoder.load_state_dict(state["moire_encoder"])
        self.bundle.generator.load_state_dict(state["generator"])
        self.bundle.discriminator.load_state_dict(state["discriminator"])
        self.bundle.content_encoder.load_state_dict(state["content_encoder"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.data_rng.bit_generator.state = state["data_rng"]
        self.bundle.epoch = state["epoch"]

    def latest_checkpoint(self) -> Path | None:
        if self.checkpoint_dir is None or not self.checkpoint_dir.is_dir():
            return None
        found = sorted(self.checkpoint_dir.glob("epoch_*.pt"))
        return found[-1] if found else None

    # -- main loop ------------------------------------------------------------

    def train_epoch(self) -> list[LossBreakdown]:
        epoch = self.bundle.epoch + 1
        self._set_lr(epoch)
        history = []
        for step, (p_m, p_f) in enumerate(self._epoch_batches()):
            breakdown = train_step(self.bundle, p_m, p_f, self.opt_g, self.opt_d)
            history.append(breakdown)
            if self.log_fn is not None:
                self.log_fn(epoch, step, breakdown)
        self.bundle.epoch = epoch
        return history

    def run(self, resume: bool = True) -> SynthesisBundle:
        """Train to the configured epoch count, checkpointing each epoch."""
        if resume:
            latest = self.latest_checkpoint()
            if latest is not None:
                self.load_checkpoint(latest)
        while self.bundle.epoch < self.epochs:
            self.train_epoch()
            if self.checkpoint_dir is not None:
                self.save_checkpoint()
        return self.bundle


def _derive_seed(seed: int, group_id: int, stream: int) -> int:
    ss = np.random.SeedSequence([seed, group_id, stream])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def load_bundle(path: Path | str) -> SynthesisBundle:
    """Load a trained bundle from a checkpoint file, in eval mode."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"bundle checkpoint not found: {p}")
    state = torch.load(p, weights_only=False)
    cfg = ChannelConfig(**state["channels"])
    bundle = SynthesisBundle(
        group_id=state["group_id"],
        crop_size=state["crop_size"],
        moire_encoder=FeatureEncoder(cfg.encoder_channels),
        generator=PseudoMoireGenerator(cfg.encoder_channels, cfg.generator_channels),
        discriminator=PatchDiscriminator(cfg.discriminator_channels),
        content_encoder=FeatureEncoder(cfg.encoder_channels),
        channels=cfg,
        seed=state["seed"],
        epoch=state["epoch"],
    )
    bundle.moire_encoder.load_state_dict(state["moire_encoder"])
    bundle.generator.load_state_dict(state["generator"])
    bundle.discriminator.load_state_dict(state["discriminator"])
    bundle.content_encoder.load_state_dict(state["content_encoder"])
    return bundle.eval()


def append_loss_log(path: Path, epoch: int, step: int, breakdown: LossBreakdown) -> None:
    """Append one JSON line per training step to a loss log."""
    record = {"epoch": epoch, "step": step, **asdict(breakdown)}
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
