"""Skip-connection attention mechanisms for the generator.

Three interchangeable kinds: CBAM (sequential channel-then-spatial masks),
a learned-to-ignore CBAM variant whose applied mask is the complement
1 - M of the learned ignoring mask, and windowed local self-attention
computed independently inside non-overlapping pixel windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .introspect import LayerEntry

ATTENTION_KINDS = ("cbam", "cbam_ignore", "lsa", "none")


@dataclass(frozen=True)
class AttentionConfig:
    kind: str = "cbam"
    lsa_window: int = 8
    channel_reduction: int = 8

    def __post_init__(self):
        if self.kind not in ATTENTION_KINDS:
            raise ConfigError(f"attention kind {self.kind!r} not in {ATTENTION_KINDS}")
        if self.lsa_window < 1:
            raise ConfigError("lsa_window must be >= 1")
        if self.channel_reduction < 1:
            raise ConfigError("channel_reduction must be >= 1")


class ChannelGate(nn.Module):
    """Channel mask from global average + max pooling through a shared bottleneck."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.avg_pool = nn.AdaptiveAvgPool2d(1)
        self.max_pool = nn.AdaptiveMaxPool2d(1)
        self.bottleneck = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=True),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=True),
        )
        self.sigmoid = nn.Sigmoid()

    def mask(self, x: torch.Tensor) -> torch.Tensor:
        """B x C x 1 x 1 mask, entries strictly in (0, 1)."""
        return self.sigmoid(self.bottleneck(self.avg_pool(x)) + self.bottleneck(self.max_pool(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mask(x)


class SpatialGate(nn.Module):
    """Spatial mask from channel-wise average and max maps through one conv."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)
        self.sigmoid = nn.Sigmoid()

    def mask(self, x: torch.Tensor) -> torch.Tensor:
        """B x 1 x H x W mask, entries strictly in (0, 1)."""
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return self.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mask(x)


class CBAM(nn.Module):
    """Channel-then-spatial multiplicative attention.

    With `ignore=True` the learned masks mark irrelevant regions and the
    applied mask is the complement 1 - M at both stages.
    """

    def __init__(self, channels: int, reduction: int = 8, ignore: bool = False):
        super().__init__()
        self.channel = ChannelGate(channels, reduction)
        self.spatial = SpatialGate()
        self.ignore = ignore

    def applied_channel_mask(self, x: torch.Tensor) -> torch.Tensor:
        m = self.channel.mask(x)
        return 1.0 - m if self.ignore else m

    def applied_spatial_mask(self, x: torch.Tensor) -> torch.Tensor:
        m = self.spatial.mask(x)
        return 1.0 - m if self.ignore else m

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite attention input")
        x = x * self.applied_channel_mask(x)
        return x * self.applied_spatial_mask(x)


class LocalAttentionLayer(nn.Module):
    """Single-head self-attention over the tokens of one window.

    Input is (num_windows, tokens, channels); Q, K, V come from one learned
    linear map and the attention output softmax(Q K^T / sqrt(C)) V is added
    back onto the tokens (residual, as in the transformer layers the module
    derives from). No positional encoding is used, so whole-window
    permutations commute with the layer.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.qkv = nn.Linear(channels, 3 * channels, bias=True)
        self.scale = 1.0 / math.sqrt(channels)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        return tokens + attn @ v

    def attention_map(self, tokens: torch.Tensor) -> torch.Tensor:
        q, k, _ = self.qkv(tokens).chunk(3, dim=-1)
        return torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)

    def manifest_entries(self, name: str, in_shape: tuple, out_shape: tuple) -> list:
        n, t, c = in_shape
        qkv_params = sum(p.numel() for p in self.qkv.parameters())
        tag = getattr(self, "manifest_tag", "")
        return [
            LayerEntry(f"{name}.qkv", "linear", (n, t, 3 * c), qkv_params, 2 * c * 3 * c * t * n, tag),
            LayerEntry(f"{name}.attn_qk", "matmul", (n, t, t), 0, 2 * t * t * c * n, tag),
            LayerEntry(f"{name}.attn_softmax", "softmax", (n, t, t), 0, t * t * n, tag),
            LayerEntry(f"{name}.attn_av", "matmul", (n, t, c), 0, 2 * t * t * c * n, tag),
        ]


def _partition_windows(x: torch.Tensor, window: int) -> torch.Tensor:
    """B x C x H x W -> (B * nH * nW) x window^2 x C token blocks."""
    b, c, h, w = x.shape
    x = x.reshape(b, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(-1, window * window, c)


def _merge_windows(tokens: torch.Tensor, window: int, b: int, c: int, h: int, w: int) -> torch.Tensor:
    x = tokens.reshape(b, h // window, w // window, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, h, w)


class LocalSelfAttention(nn.Module):
    """Two stacked windowed self-attention layers with pad-then-crop handling."""

    def __init__(self, channels: int, window: int = 8):
        super().__init__()
        self.window = window
        self.layer1 = LocalAttentionLayer(channels)
        self.layer2 = LocalAttentionLayer(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if self.window > min(h, w):
            raise ConfigError(f"lsa window {self.window} exceeds feature map side {min(h, w)}")
        pad_h = (-h) % self.window
        pad_w = (-w) % self.window
        if pad_h or pad_w:
            # Symmetric zero padding, cropped away after attention.
            top, left = pad_h // 2, pad_w // 2
            x = F.pad(x, (left, pad_w - left, top, pad_h - top))
        hp, wp = x.shape[2], x.shape[3]
        tokens = _partition_windows(x, self.window)
        tokens = self.layer2(self.layer1(tokens))
        out = _merge_windows(tokens, self.window, b, c, hp, wp)
        if pad_h or pad_w:
            out = out[:, :, top : top + h, left : left + w]
        return out


def build_attention(channels: int, config: AttentionConfig) -> nn.Module:
    """Instantiate the configured attention kind for a skip connection."""
    if config.kind == "cbam":
        module = CBAM(channels, config.channel_reduction, ignore=False)
    elif config.kind == "cbam_ignore":
        module = CBAM(channels, config.channel_reduction, ignore=True)
    elif config.kind == "lsa":
        module = LocalSelfAttention(channels, config.lsa_window)
    else:
        module = nn.Identity()
    for sub in module.modules():
        sub.manifest_tag = "attention"
    return module
