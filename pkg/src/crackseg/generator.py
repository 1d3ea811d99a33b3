"""Encoder-decoder generator with attention skips and deep supervision.

A four-level UNet whose skip connections pass through an attention module
before concatenation. Four side heads tap the decoder stages (coarse to
fine); each side map is a full-resolution probability map, and the fused
output refines their concatenation with one convolution + sigmoid. The
23 core convolutions are the classic UNet body: ten encoder convs, four
upsampling convs, eight decoder convs, and the final 1x1 conv whose
sigmoid output doubles as the finest side map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .attention import AttentionConfig, build_attention
from .errors import ConfigError

DOWNSAMPLE_FACTOR = 16  # four 2x2 pooling steps


@dataclass(frozen=True)
class GeneratorSpec:
    base_width: int = 32
    depth: int = 4
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    in_channels: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.depth != 4:
            raise ConfigError("generator depth is fixed at 4 down/up levels")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")


@dataclass(frozen=True)
class GeneratorOutput:
    fused: torch.Tensor
    sides: tuple  # four maps, coarsest decoder stage first, all input-sized


def _tag(module: nn.Module, tag: str) -> nn.Module:
    module.manifest_tag = tag
    return module


class ConvBlock(nn.Module):
    """3x3 conv + batch norm + ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = _tag(nn.Conv2d(in_ch, out_ch, 3, padding=1), "core")
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class UpBlock(nn.Module):
    """Nearest-neighbor 2x resize followed by 3x3 conv + BN + ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = _tag(nn.Conv2d(in_ch, out_ch, 3, padding=1), "core")
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU()

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.relu(self.bn(self.conv(x)))


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = [spec.base_width * 2**i for i in range(5)]

        self.encoder = nn.ModuleList()
        in_ch = spec.in_channels
        for width in w:
            self.encoder.append(nn.Sequential(ConvBlock(in_ch, width), ConvBlock(width, width)))
            in_ch = width
        self.pool = nn.MaxPool2d(2)

        self.skip_attention = nn.ModuleList(
            [build_attention(w[i], spec.attention) for i in range(4)]
        )

        self.up = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for level in range(3, -1, -1):  # decoder stages, deepest skip first
            self.up.append(UpBlock(w[level + 1], w[level]))
            self.decoder.append(
                nn.Sequential(ConvBlock(2 * w[level], w[level]), ConvBlock(w[level], w[level]))
            )

        # Side heads for the three coarse decoder stages; the finest side map
        # comes from the final core 1x1 conv below.
        self.side_heads = nn.ModuleList(
            [_tag(nn.Conv2d(w[level], spec.out_channels, 1), "side") for level in (3, 2, 1)]
        )
        self.final_conv = _tag(nn.Conv2d(w[0], spec.out_channels, 1), "core")
        self.fuse_conv = _tag(nn.Conv2d(4 * spec.out_channels, spec.out_channels, 1), "fuse")
        self.sigmoid = nn.Sigmoid()

    def forward(self, x: torch.Tensor) -> GeneratorOutput:
        _, _, h, w = x.shape
        for axis, size in (("height", h), ("width", w)):
            if size % DOWNSAMPLE_FACTOR:
                raise ValueError(f"input {axis} {size} not divisible by {DOWNSAMPLE_FACTOR}")

        skips = []
        feat = x
        for level, block in enumerate(self.encoder):
            feat = block(feat if level == 0 else self.pool(feat))
            if level < 4:
                skips.append(feat)

        sides = []
        for stage, (up, dec) in enumerate(zip(self.up, self.decoder)):
            level = 3 - stage
            feat = up(feat)
            gated = self.skip_attention[level](skips[level])
            feat = dec(torch.cat([gated, feat], dim=1))
            if stage < 3:
                side = self.sigmoid(self.side_heads[stage](feat))
                side = F.interpolate(side, size=(h, w), mode="bilinear", align_corners=False)
                sides.append(side)
        sides.append(self.sigmoid(self.final_conv(feat)))

        fused = self.sigmoid(self.fuse_conv(torch.cat(sides, dim=1)))
        return GeneratorOutput(fused=fused, sides=tuple(sides))


def build_generator(spec: GeneratorSpec, seed: int = 0) -> Generator:
    """Construct a generator with seed-deterministic initialization."""
    torch.manual_seed(seed)
    return Generator(spec)
