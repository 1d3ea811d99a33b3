"""Two-stage adversarial training with Otsu-based model selection.

Stage I alternates one discriminator update against one generator update
on the adversarial + side + Tversky objective. Stage II first trains the
auxiliary network on the perceptual loss with the generator fixed, then
refines the generator on the reconstruction loss with the auxiliary
network fixed. Every `eval_every` iterations the fused validation outputs
are Otsu-binarized and scored by the mean of dice, accuracy, sensitivity
and specificity; the best-scoring checkpoint wins, ties to the earlier
iteration.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .auxiliary import AuxiliaryNetwork, build_auxiliary, kl_perceptual_loss, reconstruction_loss
from .checkpoint import save_checkpoint
from .data_pipeline import TilePair
from .discriminators import DiscriminatorSpec, build_discriminator
from .errors import ConfigError, DivergenceError
from .evaluation import binarize, otsu_threshold, segmentation_scores
from .generator import GeneratorSpec, build_generator
from .losses import (
    LossConfig,
    cgan_losses,
    generator_adversarial_loss,
    side_network_loss,
    total_generator_loss,
    tversky_loss,
)

STAGE1_TERMS = frozenset({"cgan", "side", "tversky"})
STAGE2_MODES = ("reconstruction", "full")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    momentum_term: float = 0.2  # first-moment coefficient of Adam
    iterations: int = 50000
    batch_size: int = 8
    eval_every: int = 2000
    seed: int = 0
    stage_ratio: int = 1  # Stage-I steps per Stage-II step; 0 disables Stage II
    stage2_losses: str = "reconstruction"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every > self.iterations:
            raise ConfigError("eval_every must be <= iterations")
        if self.stage_ratio < 0:
            raise ConfigError("stage_ratio must be >= 0")
        if self.stage2_losses not in STAGE2_MODES:
            raise ConfigError(f"stage2_losses {self.stage2_losses!r} not in {STAGE2_MODES}")


@dataclass(frozen=True)
class SelectionRecord:
    iteration: int
    score: float
    checkpoint_path: str


def tiles_to_tensors(tiles) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack tile pairs into (B x 3 x H x W images, B x 1 x H x W masks)."""
    images = np.stack([t.image for t in tiles]).transpose(0, 3, 1, 2)
    masks = np.stack([t.mask for t in tiles]).astype(np.float32)[:, None]
    return torch.from_numpy(np.ascontiguousarray(images)), torch.from_numpy(masks)


def make_optimizer(params, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.lr, betas=(config.momentum_term, 0.999))


def _require_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} diverged to {value}")


class Trainer:
    """Owns the networks and optimizers; one instance per training run."""

    def __init__(self, generator, discriminator, auxiliary, train_config: TrainConfig,
                 loss_config: LossConfig):
        self.generator = generator
        self.discriminator = discriminator
        self.auxiliary = auxiliary
        self.train_config = train_config
        self.loss_config = loss_config
        self.opt_g = make_optimizer(generator.parameters(), train_config)
        self.opt_d = make_optimizer(discriminator.parameters(), train_config)
        self.opt_phi = make_optimizer(auxiliary.parameters(), train_config) if auxiliary else None

    def _pair(self, x, y):
        return torch.cat([x, y], dim=1)

    def stage1_step(self, x, y) -> tuple[float, float]:
        """One discriminator update, then one generator update."""
        cfg = self.loss_config
        # Discriminator: real pair up, generated pair down. The generator
        # output is detached so no gradient reaches it.
        with torch.no_grad():
            fake = self.generator(x).fused
        d_real = self.discriminator(self._pair(x, y))
        d_fake = self.discriminator(self._pair(x, fake))
        loss_d, _ = cgan_losses(d_real, d_fake, cfg.eps, cfg.generator_objective)
        _require_finite(loss_d.item(), "discriminator loss")
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        # Generator: adversarial + side + Tversky on the fused map. The
        # discriminator is judged but not stepped.
        out = self.generator(x)
        parts = {}
        if "cgan" in cfg.enabled:
            d_fake = self.discriminator(self._pair(x, out.fused))
            parts["cgan"] = generator_adversarial_loss(d_fake, cfg.eps, cfg.generator_objective)
        if "side" in cfg.enabled:
            parts["side"] = side_network_loss(out.sides, out.fused, y, cfg.beta_p, cfg.eps)
        if "tversky" in cfg.enabled:
            parts["tversky"] = tversky_loss(out.fused, y, cfg.alpha, cfg.beta, cfg.eps)
        stage1_cfg = replace(cfg, enabled=cfg.enabled & STAGE1_TERMS)
        loss_g = total_generator_loss(parts, stage1_cfg)
        if isinstance(loss_g, torch.Tensor):
            _require_finite(loss_g.item(), "generator loss")
            self.opt_g.zero_grad()
            self.opt_d.zero_grad()
            loss_g.backward()
            self.opt_g.step()
            loss_g = loss_g.item()
        return loss_d.item(), float(loss_g)

    def stage2_step(self, x, y) -> tuple[float, float]:
        """Auxiliary update on the perceptual loss, then generator refinement."""
        if self.auxiliary is None:
            raise ConfigError("stage2_step requires an auxiliary network")
        cfg = self.loss_config
        # Half-step 1: train the auxiliary network, generator fixed.
        self.generator.eval()
        with torch.no_grad():
            fake = self.generator(x).fused
        self.generator.train()
        loss_phi = 0.0
        if "kl" in cfg.enabled:
            phi_loss = kl_perceptual_loss(self.auxiliary(y), self.auxiliary(fake), cfg.eps, cfg.kl_form)
            _require_finite(phi_loss.item(), "auxiliary loss")
            self.opt_phi.zero_grad()
            phi_loss.backward()
            self.opt_phi.step()
            loss_phi = phi_loss.item()

        # Half-step 2: refine the generator, auxiliary fixed.
        loss_g2 = 0.0
        if "ce" in cfg.enabled:
            out = self.generator(x)
            with torch.no_grad():
                phi_y = self.auxiliary(y)
            refine = reconstruction_loss(phi_y, self.auxiliary(out.fused), cfg.eps)
            if self.train_config.stage2_losses == "full":
                if "side" in cfg.enabled:
                    refine = refine + side_network_loss(out.sides, out.fused, y, cfg.beta_p, cfg.eps)
                if "tversky" in cfg.enabled:
                    refine = refine + tversky_loss(out.fused, y, cfg.alpha, cfg.beta, cfg.eps)
            _require_finite(refine.item(), "stage-II generator loss")
            self.opt_g.zero_grad()
            self.opt_phi.zero_grad()
            refine.backward()
            self.opt_g.step()
            loss_g2 = refine.item()
        return loss_phi, loss_g2


def validation_score(generator, tiles) -> float:
    """Mean over tiles of mean(dice, accuracy, sensitivity, specificity)."""
    if not tiles:
        raise ConfigError("validation split is empty")
    was_training = generator.training
    generator.eval()
    scores = []
    with torch.no_grad():
        for tile in tiles:
            x, y = tiles_to_tensors([tile])
            prob = generator(x).fused[0, 0].numpy()
            mask = binarize(prob, otsu_threshold(prob))
            s = segmentation_scores(mask, y[0, 0].numpy())
            scores.append((s.dice + s.accuracy + s.sensitivity + s.specificity) / 4.0)
    if was_training:
        generator.train()
    return float(np.mean(scores))


def train(train_tiles, val_tiles, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec,
          train_config: TrainConfig, loss_config: LossConfig, out_dir) -> SelectionRecord:
    """Run the full schedule and return the best validation checkpoint."""
    if not train_tiles or not val_tiles:
        raise ConfigError("train and validation splits must both be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seed = train_config.seed
    generator = build_generator(gen_spec, seed=seed)
    discriminator = build_discriminator(disc_spec, seed=seed + 1)
    auxiliary = build_auxiliary(seed=seed + 2) if train_config.stage_ratio > 0 else None
    trainer = Trainer(generator, discriminator, auxiliary, train_config, loss_config)

    rng = np.random.default_rng(seed)
    tile_hw = train_tiles[0].mask.shape
    best: SelectionRecord | None = None
    log_path = out / "log.csv"
    with open(log_path, "w", newline="") as log:
        writer = csv.writer(log)
        writer.writerow(["iteration", "loss_d", "loss_g", "loss_phi", "val_score"])
        for iteration in range(1, train_config.iterations + 1):
            idx = rng.integers(0, len(train_tiles), size=train_config.batch_size)
            x, y = tiles_to_tensors([train_tiles[i] for i in idx])
            try:
                loss_d, loss_g = trainer.stage1_step(x, y)
                loss_phi = ""
                if train_config.stage_ratio and iteration % train_config.stage_ratio == 0:
                    loss_phi, _ = trainer.stage2_step(x, y)
            except DivergenceError:
                save_checkpoint(out / "diagnostic.pt", generator, iteration, tuple(x.shape[1:]))
                raise
            val = ""
            if iteration % train_config.eval_every == 0:
                score = validation_score(generator, val_tiles)
                path = out / f"checkpoint_{iteration:07d}.pt"
                save_checkpoint(path, generator, iteration, (gen_spec.in_channels,) + tile_hw)
                if best is None or score > best.score:
                    best = SelectionRecord(iteration, score, str(path))
                val = repr(score)
            writer.writerow([iteration, repr(loss_d), repr(loss_g),
                             loss_phi if loss_phi == "" else repr(loss_phi), val])

    if best is None:  # iterations < eval_every cannot happen (config invariant)
        raise ConfigError("no validation pass ran; check train.eval_every")
    with open(out / "best.json", "w") as fh:
        json.dump(
            {"iteration": best.iteration, "score": best.score,
             "checkpoint_path": best.checkpoint_path},
            fh,
        )
        fh.write("\n")
    return best


def dice_after_otsu(generator, tile: TilePair) -> float:
    """Dice of the Otsu-binarized fused output against the tile mask."""
    was_training = generator.training
    generator.eval()
    x, y = tiles_to_tensors([tile])
    with torch.no_grad():
        prob = generator(x).fused[0, 0].numpy()
    if was_training:
        generator.train()
    mask = binarize(prob, otsu_threshold(prob))
    return segmentation_scores(mask, y[0, 0].numpy()).dice


def overfit_smoke(generator, discriminator, tile: TilePair, steps: int,
                  loss_config: LossConfig | None = None,
                  train_config: TrainConfig | None = None,
                  eval_every: int = 25, stop_at: float | None = None) -> float:
    """Stage-I alternation on a single tile; returns the best dice seen.

    Dice is measured on the Otsu-binarized fused output every `eval_every`
    steps (and at step 0), tracking the running maximum. `stop_at` ends
    the run early once the best dice reaches it.
    """
    loss_config = loss_config or LossConfig()
    train_config = train_config or TrainConfig(iterations=max(steps, 1), eval_every=1, batch_size=1)
    trainer = Trainer(generator, discriminator, None, train_config, loss_config)
    x, y = tiles_to_tensors([tile])
    best = dice_after_otsu(generator, tile)
    for step in range(1, steps + 1):
        trainer.stage1_step(x, y)
        if step % eval_every == 0 or step == steps:
            best = max(best, dice_after_otsu(generator, tile))
            if stop_at is not None and best >= stop_at:
                break
    return best
