"""Network definitions for the moire synthesis stage.

Four networks per complexity group: a moire feature encoder, a content
encoder (same recipe), a residual generator, and a patch discriminator
pooled to a per-sample scalar. All are stride-aware so the generator's
total downsampling factor is 4.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

GENERATOR_DOWNSAMPLE = 4


@dataclass
class ChannelConfig:
    encoder_channels: int = 16
    generator_channels: int = 128  # residual-bottleneck width
    discriminator_channels: int = 64


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions, each followed by instance norm and ReLU."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return x + self.body(x)


class FeatureEncoder(nn.Module):
    """One convolution plus two residual blocks; spatially size-preserving.

    Used both for moire features (applied to moire patches) and for content
    features (applied to clean patches and syntheses).
    """

    def __init__(self, channels: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            ResidualBlock(channels),
            ResidualBlock(channels),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class PseudoMoireGenerator(nn.Module):
    """Residual generator: 3 convolutions (stem + two stride-2 downsamplers),
    9 residual blocks at the bottleneck, 2 transposed convolutions back to
    full resolution, and a final convolution squashed to [0, 1].

    Input is the channel-concatenation of a feature map and a 3-channel patch.
    """

    def __init__(self, feature_channels: int = 16, bottleneck_channels: int = 128,
                 n_blocks: int = 9):
        super().__init__()
        base = bottleneck_channels // 4
        layers: list[nn.Module] = [
            nn.Conv2d(feature_channels + 3, base, 3, stride=1, padding=1),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
            nn.Conv2d(base, base * 2, 3, stride=2, padding=1),
            nn.InstanceNorm2d(base * 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(base * 2, bottleneck_channels, 3, stride=2, padding=1),
            nn.InstanceNorm2d(bottleneck_channels),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(bottleneck_channels) for _ in range(n_blocks)]
        layers += [
            nn.ConvTranspose2d(bottleneck_channels, base * 2, 3, stride=2,
                               padding=1, output_padding=1),
            nn.InstanceNorm2d(base * 2),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(base * 2, base, 3, stride=2,
                               padding=1, output_padding=1),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
            nn.Conv2d(base, 3, 3, stride=1, padding=1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, features: Tensor, clean: Tensor) -> Tensor:
        if features.shape[-2:] != clean.shape[-2:]:
            raise ValueError(
                f"feature map {tuple(features.shape[-2:])} and clean patch "
                f"{tuple(clean.shape[-2:])} are not spatially aligned"
            )
        x = torch.cat([features, clean], dim=1)
        return (torch.tanh(self.net(x)) + 1.0) / 2.0


class PatchDiscriminator(nn.Module):
    """Patch-response discriminator reduced to one scalar per sample.

    Three stride-2 convolutions, two stride-1 convolutions, then global
    average pooling over the response map. Norm-free: feature maps shrink
    to 1x1 on small inputs, where per-instance statistics are undefined.
    Stride-1 layers use 3x3 kernels so inputs as small as 8x8 stay legal.
    """

    def __init__(self, width: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, width * 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 2, width * 4, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 4, width * 4, 3, stride=1, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 4, 1, 3, stride=1, padding=1),
        )

    def forward(self, x: Tensor) -> Tensor:
        response = self.net(x)
        return response.mean(dim=(1, 2, 3))


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Gaussian(0, 0.02) initialization for all convolution weights."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(
                    torch.normal(0.0, 0.02, size=m.weight.shape, generator=generator)
                )
                if m.bias is not None:
                    m.bias.zero_()
