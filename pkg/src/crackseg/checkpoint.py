"""Versioned checkpoint container for the three networks.

Each checkpoint holds the network spec, the named parameter blobs, and the
training-iteration counter, so a network can be rebuilt and reloaded
exactly. An optional text manifest beside the checkpoint lists every layer
with shapes and parameter counts for the complexity reporter.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .attention import AttentionConfig
from .auxiliary import AuxiliaryNetwork
from .discriminators import DiscriminatorSpec, ImageDiscriminator, PixelDiscriminator
from .generator import Generator, GeneratorSpec

FORMAT_VERSION = 1


def _describe(net) -> tuple[str, dict]:
    if isinstance(net, Generator):
        spec = asdict(net.spec)
        spec["attention"] = asdict(net.spec.attention)
        return "generator", spec
    if isinstance(net, (PixelDiscriminator, ImageDiscriminator)):
        return "discriminator", asdict(net.spec)
    if isinstance(net, AuxiliaryNetwork):
        return "auxiliary", {"base_width": net.net[0].out_channels}
    raise TypeError(f"cannot checkpoint a {type(net).__name__}")


def save_checkpoint(path, net, iteration: int = 0, input_size=None) -> Path:
    """Write the checkpoint; with `input_size` also write `<path>.manifest.txt`."""
    path = Path(path)
    kind, spec = _describe(net)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "spec": spec,
        "state_dict": net.state_dict(),
        "iteration": iteration,
    }
    torch.save(payload, path)
    if input_size is not None:
        from .introspect import format_manifest, layer_manifest

        manifest = layer_manifest(net, input_size)
        Path(f"{path}.manifest.txt").write_text(format_manifest(manifest) + "\n")
    return path


def load_checkpoint(path):
    """Rebuild the network from its spec and restore parameters.

    Returns (net, payload); payload keeps kind, spec, and iteration.
    """
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r} in {path}")
    kind = payload["kind"]
    spec = payload["spec"]
    if kind == "generator":
        gen_spec = GeneratorSpec(**{**spec, "attention": AttentionConfig(**spec["attention"])})
        net = Generator(gen_spec)
    elif kind == "discriminator":
        disc_spec = DiscriminatorSpec(**spec)
        net = PixelDiscriminator(disc_spec) if disc_spec.kind == "pixel" else ImageDiscriminator(disc_spec)
    elif kind == "auxiliary":
        net = AuxiliaryNetwork(**spec)
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r} in {path}")
    net.load_state_dict(payload["state_dict"])
    return net, payload
