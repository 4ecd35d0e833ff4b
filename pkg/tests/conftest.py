import numpy as np
import pytest
import torch

from moireforge.data_pipeline import Patch
from moireforge.networks import ChannelConfig
from moireforge.synthesis import build_bundle


def make_patch(pixels, source_id="src", grid_index=0, role="moire"):
    return Patch(
        pixels=np.asarray(pixels, dtype=np.float32),
        source_id=source_id,
        grid_index=grid_index,
        role=role,
    )


def random_patch(rng, h=64, w=64, source_id="src", role="moire"):
    return make_patch(rng.random((h, w, 3)), source_id=source_id, role=role)


def striped_patch(rng, h=64, w=64, source_id="src", amplitude=0.25):
    """Smooth gradient plus a sinusoidal grating: a stand-in moire patch."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.3 + 0.4 * xx / w + 0.1 * yy / h
    period = rng.uniform(4, 12)
    angle = rng.uniform(0, np.pi)
    grating = amplitude * np.sin(
        2 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period
    )
    img = np.clip(base[..., None] + grating[..., None] * rng.uniform(0.5, 1.0, 3),
                  0, 1)
    return make_patch(img, source_id=source_id, role="moire")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CHANNELS = ChannelConfig(
    encoder_channels=4, generator_channels=16, discriminator_channels=8
)


def tiny_bundle(group_id=1, crop_size=32, seed=0, channels=TINY_CHANNELS):
    gen = torch.Generator().manual_seed(seed)
    return build_bundle(group_id, crop_size, gen, channels, seed=seed)


@pytest.fixture
def small_sets(rng):
    """A toy moire group and clean set from several distinct sources."""
    group = [striped_patch(rng, source_id=f"m{i}") for i in range(6)]
    free = [random_patch(rng, source_id=f"f{i}", role="moire_free") for i in range(6)]
    return group, free
