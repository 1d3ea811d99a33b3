"""Adversarial, deep-supervision, and Tversky losses with a weighted total.

All functions are pure, dtype-preserving, and differentiable; reductions
and epsilon placements are fixed here so training and tests share one
definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError

LOSS_TERMS = ("cgan", "kl", "ce", "side", "tversky")
GENERATOR_OBJECTIVES = ("non_saturating", "saturating")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.3  # Tversky false-positive weight
    beta: float = 0.7  # Tversky false-negative weight
    gamma: float = 0.25  # adversarial weight in the total generator loss
    beta_p: float = 1.0  # positive-class weight in the side BCE
    eps: float = 1e-7
    enabled: frozenset = field(default_factory=lambda: frozenset(LOSS_TERMS))
    kl_form: str = "as_printed"
    generator_objective: str = "non_saturating"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("loss weights alpha, beta, gamma must be >= 0")
        if self.eps <= 0:
            raise ConfigError("loss eps must be > 0")
        unknown = set(self.enabled) - set(LOSS_TERMS)
        if unknown:
            raise ConfigError(f"unknown loss terms {sorted(unknown)}; valid: {LOSS_TERMS}")
        if self.generator_objective not in GENERATOR_OBJECTIVES:
            raise ConfigError(
                f"generator objective {self.generator_objective!r} not in {GENERATOR_OBJECTIVES}"
            )


def _check_unit_range(t: torch.Tensor, name: str) -> None:
    if t.min() < 0 or t.max() > 1:
        raise FloatingPointError(f"{name} outside [0, 1]")


def generator_adversarial_loss(d_fake, eps: float = 1e-7,
                               generator_objective: str = "non_saturating"):
    """Generator-side adversarial loss from the (0,1) decisions on fakes.

    Defaults to the non-saturating -mean(log d_fake); the saturating
    mean(log(1 - d_fake)) min-max form is selectable.
    """
    _check_unit_range(d_fake, "d_fake")
    if generator_objective == "non_saturating":
        return -torch.log(d_fake.clamp(min=eps)).mean()
    if generator_objective == "saturating":
        return torch.log((1 - d_fake).clamp(min=eps)).mean()
    raise ConfigError(f"generator objective {generator_objective!r} not in {GENERATOR_OBJECTIVES}")


def cgan_losses(d_real, d_fake, eps: float = 1e-7, generator_objective: str = "non_saturating"):
    """Discriminator and generator adversarial losses from (0,1) decisions.

    Pixel-level decision maps and image-level scalars are both reduced by
    mean, treating every decision as an independent judgment. The
    discriminator loss is -mean(log d_real) - mean(log(1 - d_fake)).
    """
    _check_unit_range(d_real, "d_real")
    _check_unit_range(d_fake, "d_fake")
    loss_d = -torch.log(d_real.clamp(min=eps)).mean() - torch.log((1 - d_fake).clamp(min=eps)).mean()
    return loss_d, generator_adversarial_loss(d_fake, eps, generator_objective)


def side_bce(pred, gt, beta_p: float = 1.0, eps: float = 1e-7):
    """Class-weighted binary cross-entropy, mean over all elements.

    -(1/N) * sum(beta_p * y * log p + (1 - y) * log(1 - p)) with p clamped
    into [eps, 1 - eps].
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    p = pred.clamp(min=eps, max=1.0 - eps)
    y = gt.to(pred.dtype)
    return -(beta_p * y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def side_network_loss(sides, fused, gt, beta_p: float = 1.0, eps: float = 1e-7):
    """Sum of the four side-map BCE losses plus the fused-map BCE loss."""
    if len(sides) != 4:
        raise ValueError(f"expected 4 side maps, got {len(sides)}")
    total = side_bce(fused, gt, beta_p, eps)
    for side in sides:
        total = total + side_bce(side, gt, beta_p, eps)
    return total


def tversky_loss(p, g, alpha: float = 0.3, beta: float = 0.7, eps: float = 1e-7):
    """1 - Tversky index with asymmetric false-positive/negative weights.

    TI = (sum p*g + eps) / (sum p*g + alpha * sum p*(1-g) + beta *
    sum (1-p)*g + eps), summed over every element of the batch.
    """
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    g = g.to(p.dtype)
    tp = (p * g).sum()
    fp = (p * (1 - g)).sum()
    fn = ((1 - p) * g).sum()
    ti = (tp + eps) / (tp + alpha * fp + beta * fn + eps)
    return 1.0 - ti


def total_generator_loss(parts: dict, config: LossConfig):
    """gamma * L_cgan + L_kl + L_ce + L_side + L_tversky over enabled terms.

    `parts` maps term names to computed scalars; a disabled term
    contributes 0 and its entry may be omitted, but enabling a term whose
    value was not supplied is an error.
    """
    unknown = set(parts) - set(LOSS_TERMS)
    if unknown:
        raise ValueError(f"unknown loss parts {sorted(unknown)}")
    total = 0.0
    for term in LOSS_TERMS:
        if term not in config.enabled:
            continue
        if term not in parts:
            raise ValueError(f"loss term {term!r} enabled but not supplied")
        weight = config.gamma if term == "cgan" else 1.0
        total = weight * parts[term] + total
    return total
