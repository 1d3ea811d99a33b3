"""Conditional discriminators: pixel-level map judge and image-level scalar judge.

Both consume the channel concatenation of the RGB image and a mask or
probability map. The pixel discriminator is a stride-1 stack of three 3x3
convolutions + leaky ReLU and a 1x1 conv + sigmoid, so its output map is
spatially aligned with the input. The image discriminator is ten 3x3
conv+BN+ReLU blocks with a pool after every second block (four max, one
final average) and a linear head to a single probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError

DISCRIMINATOR_KINDS = ("pixel", "image")
LEAKY_SLOPE = 0.2
MIN_IMAGE_INPUT = 16  # four 2x2 max-pool stages


@dataclass(frozen=True)
class DiscriminatorSpec:
    kind: str = "pixel"
    base_width: int = 32
    in_channels: int = 4

    def __post_init__(self):
        if self.kind not in DISCRIMINATOR_KINDS:
            raise ConfigError(f"discriminator kind {self.kind!r} not in {DISCRIMINATOR_KINDS}")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")


def build_pixel_network(in_channels: int, base_width: int = 32) -> nn.Sequential:
    """Shared topology of the pixel discriminator and the auxiliary network."""
    w = (base_width, base_width * 2, base_width * 4)
    layers = []
    c_in = in_channels
    for width in w:
        layers += [nn.Conv2d(c_in, width, 3, padding=1), nn.LeakyReLU(LEAKY_SLOPE)]
        c_in = width
    layers += [nn.Conv2d(c_in, 1, 1), nn.Sigmoid()]
    return nn.Sequential(*layers)


class PixelDiscriminator(nn.Module):
    """Fully convolutional judge: B x 4 x H x W -> B x 1 x H x W in (0, 1)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.net = build_pixel_network(spec.in_channels, spec.base_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        return self.net(x)


class ImageDiscriminator(nn.Module):
    """Whole-image judge: B x 4 x H x W -> B x 1 in (0, 1)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        widths = [min(spec.base_width * 2**i, 512) for i in range(5)]
        blocks = []
        c_in = spec.in_channels
        for i, width in enumerate(widths):
            for _ in range(2):
                blocks += [nn.Conv2d(c_in, width, 3, padding=1), nn.BatchNorm2d(width), nn.ReLU()]
                c_in = width
            blocks.append(nn.MaxPool2d(2) if i < 4 else nn.AdaptiveAvgPool2d(1))
        self.features = nn.Sequential(*blocks)
        self.flatten = nn.Flatten()
        self.head = nn.Linear(widths[-1], 1)
        self.sigmoid = nn.Sigmoid()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        if x.shape[2] < MIN_IMAGE_INPUT or x.shape[3] < MIN_IMAGE_INPUT:
            raise ValueError(
                f"input {x.shape[2]}x{x.shape[3]} too small for the pooling chain "
                f"(needs >= {MIN_IMAGE_INPUT})"
            )
        return self.sigmoid(self.head(self.flatten(self.features(x))))


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> nn.Module:
    """Construct the configured discriminator with deterministic initialization."""
    torch.manual_seed(seed)
    if spec.kind == "pixel":
        return PixelDiscriminator(spec)
    return ImageDiscriminator(spec)
