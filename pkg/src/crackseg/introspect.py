"""Layer-by-layer network manifests: shapes, parameter counts, FLOP estimates.

FLOPs convention (fixed and documented here, applied everywhere):
  - convolution: 2 * Kh * Kw * C_in/groups * C_out * H_out * W_out
    (multiply-add counted as 2; bias adds excluded)
  - linear: 2 * fan_in * fan_out per output row
  - attention matmul: 2 * m * n * k
  - pooling: 1 op per input element; normalization and activations: 1 op
    per output element
Counts are for a single image (batch size 1). A module executed more than
once per forward contributes FLOPs per execution but its parameters only
once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn


@dataclass(frozen=True)
class LayerEntry:
    name: str
    kind: str
    out_shape: tuple
    params: int
    flops: int
    tag: str = ""


_ELEMENTWISE = (
    nn.BatchNorm2d,
    nn.ReLU,
    nn.LeakyReLU,
    nn.Sigmoid,
    nn.Softmax,
    nn.Identity,
)
_POOLS = (nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d, nn.AdaptiveMaxPool2d)


def _numel(shape) -> int:
    n = 1
    for d in shape[1:]:  # skip batch dim
        n *= d
    return n


def _entry_for(module: nn.Module, name: str, in_shape: tuple, out_shape: tuple) -> LayerEntry | None:
    params = sum(p.numel() for p in module.parameters(recurse=False))
    tag = getattr(module, "manifest_tag", "")
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        c_out, h_out, w_out = out_shape[1:]
        flops = 2 * kh * kw * (module.in_channels // module.groups) * c_out * h_out * w_out
        return LayerEntry(name, "conv", out_shape, params, flops, tag)
    if isinstance(module, nn.Linear):
        flops = 2 * module.in_features * _numel(out_shape)
        return LayerEntry(name, "linear", out_shape, params, flops, tag)
    if isinstance(module, _POOLS):
        kind = "maxpool" if isinstance(module, (nn.MaxPool2d, nn.AdaptiveMaxPool2d)) else "avgpool"
        return LayerEntry(name, kind, out_shape, params, _numel(in_shape), tag)
    if isinstance(module, _ELEMENTWISE):
        kind = type(module).__name__.lower()
        return LayerEntry(name, kind, out_shape, params, _numel(out_shape), tag)
    if params > 0:
        # Parameterized leaf without a FLOPs rule: record params, no ops.
        return LayerEntry(name, type(module).__name__.lower(), out_shape, params, 0, tag)
    return None


def layer_manifest(net: nn.Module, input_size) -> list[LayerEntry]:
    """Trace one forward pass and list every executed layer in order.

    `input_size` is the per-image shape (C, H, W). Modules exposing a
    `manifest_entries(name, in_shape, out_shape)` method report themselves
    as a composite; their children are not traced individually.
    """
    entries: list[LayerEntry] = []
    handles = []
    composite_roots: set[str] = set()

    for name, module in net.named_modules():
        if any(name.startswith(root + ".") for root in composite_roots):
            continue
        if hasattr(module, "manifest_entries"):
            composite_roots.add(name)

            def composite_hook(mod, args, output, _name=name):
                entries.extend(mod.manifest_entries(_name, tuple(args[0].shape), tuple(output.shape)))

            handles.append(module.register_forward_hook(composite_hook))
        elif len(list(module.children())) == 0:

            def leaf_hook(mod, args, output, _name=name):
                entry = _entry_for(mod, _name, tuple(args[0].shape), tuple(output.shape))
                if entry is not None:
                    entries.append(entry)

            handles.append(module.register_forward_hook(leaf_hook))

    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            net(torch.zeros((1,) + tuple(input_size)))
    finally:
        for h in handles:
            h.remove()
        if was_training:
            net.train()

    seen: set[str] = set()
    deduped = []
    for e in entries:
        if any(e.name.startswith(root + ".") for root in composite_roots):
            continue
        if e.name in seen and e.params > 0:
            e = replace(e, params=0)
        seen.add(e.name)
        deduped.append(e)
    return deduped


def manifest_params(manifest) -> int:
    return sum(e.params for e in manifest)


def manifest_flops(manifest) -> int:
    return sum(e.flops for e in manifest)


def count_kind(manifest, kind: str, tag: str | None = None) -> int:
    """Number of distinct layers of a kind (re-executions not double-counted)."""
    return len({e.name for e in manifest if e.kind == kind and (tag is None or e.tag == tag)})


def format_manifest(manifest) -> str:
    """Human-readable table: one line per layer, plus totals."""
    lines = [f"{'layer':<44} {'kind':<10} {'tag':<10} {'out_shape':<22} {'params':>10} {'flops':>14}"]
    for e in manifest:
        shape = "x".join(str(d) for d in e.out_shape)
        lines.append(f"{e.name:<44} {e.kind:<10} {e.tag:<10} {shape:<22} {e.params:>10} {e.flops:>14}")
    lines.append(
        f"{'total':<44} {'':<10} {'':<10} {'':<22} "
        f"{manifest_params(manifest):>10} {manifest_flops(manifest):>14}"
    )
    return "\n".join(lines)
