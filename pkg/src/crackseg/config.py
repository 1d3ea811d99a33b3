"""Plain-text key=value run configuration with a strict key registry.

Config files hold one `section.key = value` pair per line; `#` starts a
comment. Unknown keys are a hard error so typos never pass silently.
Overrides use the same `key=value` syntax, and the effective
(post-override) config can be written back out and reused to reproduce a
run exactly.
"""

from __future__ import annotations

from pathlib import Path

from .attention import AttentionConfig
from .data_pipeline import DatasetSpec
from .discriminators import DiscriminatorSpec
from .errors import ConfigError
from .generator import GeneratorSpec
from .losses import LOSS_TERMS, LossConfig
from .training import TrainConfig


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
REGISTRY: dict = {
    "data.tile_h": (int, 64),
    "data.tile_w": (int, 64),
    "data.overlap_w": (float, 0.1),
    "data.overlap_h": (float, 0.1),
    "data.min_crack_pixels": (int, 1000),
    "data.test_fraction": (float, 0.1),
    "data.val_fraction": (float, 0.1),
    "data.augment_rotations": (_parse_bool, True),
    "data.seed": (int, 0),
    "generator.base_width": (int, 32),
    "generator.attention": (str, "cbam"),
    "generator.lsa_window": (int, 8),
    "generator.channel_reduction": (int, 8),
    "discriminator.kind": (str, "pixel"),
    "discriminator.base_width": (int, 32),
    "auxiliary.base_width": (int, 32),
    "loss.alpha": (float, 0.3),
    "loss.beta": (float, 0.7),
    "loss.gamma": (float, 0.25),
    "loss.beta_p": (float, 1.0),
    "loss.eps": (float, 1e-7),
    "loss.enabled": (str, ",".join(LOSS_TERMS)),
    "loss.kl_form": (str, "as_printed"),
    "loss.generator_objective": (str, "non_saturating"),
    "train.lr": (float, 1e-4),
    "train.momentum_term": (float, 0.2),
    "train.iterations": (int, 50000),
    "train.batch_size": (int, 8),
    "train.eval_every": (int, 2000),
    "train.seed": (int, 0),
    "train.stage_ratio": (int, 1),
    "train.stage2_losses": (str, "reconstruction"),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in REGISTRY.items()}


def _set(cfg: dict, key: str, raw: str, where: str) -> None:
    key = key.strip()
    if key not in REGISTRY:
        raise ConfigError(f"unknown config key {key!r} in {where}")
    parser, _ = REGISTRY[key]
    try:
        cfg[key] = parser(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r} in {where}: {exc}") from exc


def load_config(path=None) -> dict:
    """Defaults, updated from a config file when one is given."""
    cfg = default_config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value at {path}:{lineno}")
        key, raw = line.split("=", 1)
        _set(cfg, key, raw, f"{path}:{lineno}")
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set(cfg, key, raw, "command-line override")
    return cfg


def effective_text(cfg: dict) -> str:
    lines = [f"{key} = {cfg[key]}" for key in REGISTRY]
    return "\n".join(lines) + "\n"


def write_effective(cfg: dict, out_dir) -> Path:
    path = Path(out_dir) / "config.effective.txt"
    path.write_text(effective_text(cfg))
    return path


# ---------------------------------------------------------------------------
# Builders for the typed sub-configurations


def dataset_spec(cfg: dict, name: str = "dataset") -> DatasetSpec:
    return DatasetSpec(
        name=name,
        tile_size=(cfg["data.tile_h"], cfg["data.tile_w"]),
        overlap_w=cfg["data.overlap_w"],
        overlap_h=cfg["data.overlap_h"],
        min_crack_pixels=cfg["data.min_crack_pixels"],
        test_fraction=cfg["data.test_fraction"],
        seed=cfg["data.seed"],
        augment_rotations=cfg["data.augment_rotations"],
    )


def attention_config(cfg: dict) -> AttentionConfig:
    return AttentionConfig(
        kind=cfg["generator.attention"],
        lsa_window=cfg["generator.lsa_window"],
        channel_reduction=cfg["generator.channel_reduction"],
    )


def generator_spec(cfg: dict) -> GeneratorSpec:
    return GeneratorSpec(
        base_width=cfg["generator.base_width"],
        attention=attention_config(cfg),
    )


def discriminator_spec(cfg: dict) -> DiscriminatorSpec:
    return DiscriminatorSpec(
        kind=cfg["discriminator.kind"],
        base_width=cfg["discriminator.base_width"],
    )


def loss_config(cfg: dict) -> LossConfig:
    names = [t for t in cfg["loss.enabled"].split(",") if t.strip()]
    return LossConfig(
        alpha=cfg["loss.alpha"],
        beta=cfg["loss.beta"],
        gamma=cfg["loss.gamma"],
        beta_p=cfg["loss.beta_p"],
        eps=cfg["loss.eps"],
        enabled=frozenset(t.strip() for t in names),
        kl_form=cfg["loss.kl_form"],
        generator_objective=cfg["loss.generator_objective"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=cfg["train.lr"],
        momentum_term=cfg["train.momentum_term"],
        iterations=cfg["train.iterations"],
        batch_size=cfg["train.batch_size"],
        eval_every=cfg["train.eval_every"],
        seed=cfg["train.seed"],
        stage_ratio=cfg["train.stage_ratio"],
        stage2_losses=cfg["train.stage2_losses"],
    )
