"""Stage-II refinement network and its two entropy losses.

The auxiliary network shares the pixel discriminator's topology with a
single input channel. It maps a mask (or probability map) to a same-sized
feature map in (0, 1); the perceptual loss compares its responses to the
ground truth and the generated map elementwise, and the reconstruction
loss penalizes their absolute difference through a binary cross-entropy
against an all-zero target.
"""

from __future__ import annotations

import torch
from torch import nn

from .discriminators import build_pixel_network

KL_FORMS = ("as_printed", "bernoulli")


class AuxiliaryNetwork(nn.Module):
    """B x 1 x H x W -> B x 1 x H x W in (0, 1)."""

    def __init__(self, base_width: int = 32):
        super().__init__()
        self.net = build_pixel_network(in_channels=1, base_width=base_width)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[1] != 1:
            raise ValueError(f"expected single-channel input, got {y.shape[1]} channels")
        return self.net(y)


def build_auxiliary(base_width: int = 32, seed: int = 0) -> AuxiliaryNetwork:
    torch.manual_seed(seed)
    return AuxiliaryNetwork(base_width)


def kl_perceptual_loss(phi_y, phi_yhat, eps: float = 1e-7, form: str = "as_printed"):
    """Elementwise p*log((p+eps)/(q+eps)) summed over pixels, mean over batch.

    `form="as_printed"` applies the expression to the raw sigmoid outputs;
    it is not a true divergence and may be negative. `form="bernoulli"`
    adds the complement term (1-p)*log((1-p+eps)/(1-q+eps)), making each
    pixel a proper Bernoulli KL.
    """
    if phi_y.shape != phi_yhat.shape:
        raise ValueError(f"shape mismatch: {tuple(phi_y.shape)} vs {tuple(phi_yhat.shape)}")
    if form not in KL_FORMS:
        raise ValueError(f"kl form {form!r} not in {KL_FORMS}")
    p, q = phi_y, phi_yhat
    # log(p+eps) - log(q+eps) rather than log of the ratio: identical value,
    # but the gradient cancels bitwise at p == q, so an exact optimum is a
    # true fixed point of the optimizer.
    total = p * (torch.log(p + eps) - torch.log(q + eps))
    if form == "bernoulli":
        total = total + (1 - p) * (torch.log(1 - p + eps) - torch.log(1 - q + eps))
    return total.sum() / phi_y.shape[0]


def reconstruction_loss(phi_y, phi_yhat, eps: float = 1e-7):
    """Mean of -log(1 - |p - q|), the difference clamped below 1 by eps."""
    if phi_y.shape != phi_yhat.shape:
        raise ValueError(f"shape mismatch: {tuple(phi_y.shape)} vs {tuple(phi_yhat.shape)}")
    diff = (phi_y - phi_yhat).abs().clamp(max=1.0 - eps)
    return -torch.log1p(-diff).mean()
