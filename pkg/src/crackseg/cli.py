"""Command-line interface tying the pipeline together.

Subcommands: prepare-data, train, predict, evaluate, plot-pr, complexity.
Exit codes: 0 success, 1 configuration error, 2 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data_pipeline import (
    load_mask,
    load_probability_png,
    prepare_dataset,
    save_probability_png,
    split_dataset,
    write_tiles,
)
from .errors import ConfigError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--override", action="append", default=[], metavar="K=V",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="sets data.seed and train.seed")
    parser.add_argument("--device", default="cpu", help="torch device (default cpu)")
    parser.add_argument("--out", required=True, help="output directory")


def _load_config(args) -> dict:
    cfg = config_mod.load_config(args.config)
    config_mod.apply_overrides(cfg, args.override)
    if getattr(args, "seed", None) is not None:
        cfg["data.seed"] = args.seed
        cfg["train.seed"] = args.seed
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_prepare_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    config_mod.write_effective(cfg, out)
    spec = config_mod.dataset_spec(cfg)
    train_val, test = prepare_dataset(args.input, spec)
    manifest = write_tiles(out, train_val, test)
    print(f"wrote {len(train_val)} trainval + {len(test)} test tiles; manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    from .data_pipeline import load_tiles
    from .training import train

    cfg = _load_config(args)
    out = _out_dir(args)
    config_mod.write_effective(cfg, out)
    tiles = load_tiles(args.data, "trainval")
    if not tiles:
        raise ConfigError(f"no trainval tiles in {args.data}")
    train_tiles, val_tiles = split_dataset(tiles, cfg["data.val_fraction"], cfg["data.seed"])
    if not val_tiles:
        raise ConfigError("validation split is empty; raise data.val_fraction")
    best = train(
        train_tiles,
        val_tiles,
        config_mod.generator_spec(cfg),
        config_mod.discriminator_spec(cfg),
        config_mod.train_config(cfg),
        config_mod.loss_config(cfg),
        out,
    )
    print(f"best checkpoint: {best.checkpoint_path} (iteration {best.iteration}, "
          f"score {best.score:.4f})")
    return 0


def _pad_to_multiple(x, multiple: int):
    import torch.nn.functional as F

    h, w = x.shape[2], x.shape[3]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return x, (0, 0)
    return F.pad(x, (0, pad_w, 0, pad_h), mode="reflect"), (pad_h, pad_w)


def cmd_predict(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .data_pipeline import load_image
    from .generator import DOWNSAMPLE_FACTOR

    out = _out_dir(args)
    net, payload = load_checkpoint(args.checkpoint)
    if payload["kind"] != "generator":
        raise ConfigError(f"checkpoint {args.checkpoint} is a {payload['kind']}, not a generator")
    net.to(args.device).eval()
    image_dir = Path(args.images)
    paths = [p for p in sorted(image_dir.iterdir())
             if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
    if not paths:
        raise ConfigError(f"no images found in {image_dir}")
    with torch.no_grad():
        for path in paths:
            image = load_image(path)
            x = torch.from_numpy(image.transpose(2, 0, 1)[None]).to(args.device)
            x, (pad_h, pad_w) = _pad_to_multiple(x, DOWNSAMPLE_FACTOR)
            prob = net(x).fused[0, 0].cpu().numpy()
            if pad_h or pad_w:
                prob = prob[: prob.shape[0] - pad_h, : prob.shape[1] - pad_w]
            save_probability_png(out / f"{path.stem}.png", prob)
    print(f"wrote {len(paths)} probability maps to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_dataset, pr_curve

    out = _out_dir(args)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds, gts, ids = [], [], []
    for pred_path in sorted(pred_dir.glob("*.png")):
        gt_path = gt_dir / pred_path.name
        if not gt_path.is_file():
            raise ConfigError(f"no ground truth for prediction {pred_path.name} in {gt_dir}")
        preds.append(load_probability_png(pred_path))
        gts.append(load_mask(gt_path))
        ids.append(pred_path.stem)
    if not preds:
        raise ConfigError(f"no prediction PNGs found in {pred_dir}")
    report = evaluate_dataset(preds, gts, ids)
    report.write_json(out / "metrics.json")
    pr_curve(preds, gts).write_csv(out / "pr_curve.csv")
    print(f"ods {report.ods:.4f}  ois {report.ois:.4f}  ap {report.ap:.4f}  "
          f"accuracy {report.global_accuracy:.4f}  mean_iou {report.mean_iou:.4f}")
    return 0


def cmd_plot_pr(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .evaluation import PRCurve

    fig, ax = plt.subplots(figsize=(6, 5))
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.curves):
        raise ConfigError(f"{len(labels)} labels for {len(args.curves)} curve files")
    for i, path in enumerate(args.curves):
        if not Path(path).is_file():
            raise ConfigError(f"curve file not found: {path}")
        curve = PRCurve.read_csv(path)
        label = labels[i] if labels else Path(path).stem
        ax.plot(curve.recall, curve.precision, label=label)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(args.out_file, dpi=150)
    print(f"wrote {args.out_file}")
    return 0


def complexity_summary(gen_spec, disc_spec, input_size: int, timing_runs: int) -> dict:
    """Generator + discriminator FLOPs/params; timing covers the generator only."""
    from .discriminators import build_discriminator
    from .evaluation import complexity_report
    from .generator import build_generator

    gen = build_generator(gen_spec)
    disc = build_discriminator(disc_spec)
    gen_report = complexity_report(gen, (3, input_size, input_size), timing_runs=timing_runs)
    disc_report = complexity_report(disc, (4, input_size, input_size), timing_runs=0)
    return {
        "input_size": [input_size, input_size],
        "flops": gen_report.flops + disc_report.flops,
        "params": gen_report.params + disc_report.params,
        "seconds_per_image": gen_report.seconds_per_image,
        "generator": gen_report.to_dict(),
        "discriminator": disc_report.to_dict(),
    }


def cmd_complexity(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    config_mod.write_effective(cfg, out)
    summary = complexity_summary(
        config_mod.generator_spec(cfg),
        config_mod.discriminator_spec(cfg),
        input_size=args.input_size,
        timing_runs=args.timing_runs,
    )
    path = out / "complexity.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"flops {summary['flops'] / 1e9:.2f}G  params {summary['params'] / 1e6:.2f}M  "
          f"-> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crackseg",
                                     description="Two-stage conditional-GAN crack segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="tile, filter, augment and split a raw dataset")
    p.add_argument("--input", required=True, help="root with images/ and masks/")
    _add_common(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run the two-stage training schedule")
    p.add_argument("--data", required=True, help="prepared tile directory (from prepare-data)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write probability maps for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--device", default="cpu")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground-truth masks")
    p.add_argument("--pred", required=True, help="directory of probability PNGs")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-pr", help="overlay one or more PR curves in a figure")
    p.add_argument("curves", nargs="+", help="pr_curve.csv files")
    p.add_argument("--labels", help="comma-separated legend labels")
    p.add_argument("--out", dest="out_file", required=True, help="output figure file")
    p.set_defaults(func=cmd_plot_pr)

    p = sub.add_parser("complexity", help="FLOPs/params/timing report for the configured networks")
    p.add_argument("--input-size", type=int, default=512, help="square input side (default 512)")
    p.add_argument("--timing-runs", type=int, default=100,
                   help="forward passes to time; 0 skips timing")
    _add_common(p)
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
