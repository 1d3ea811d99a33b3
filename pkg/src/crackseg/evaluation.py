"""Benchmark scoring for crack segmentation probability maps.

Implements Otsu binarization, dataset-wide threshold sweeps, ODS/OIS/AP,
pixel-accuracy scores, and the network complexity reporter. All metric
functions are pure and operate on numpy arrays; predictions are per-pixel
probabilities in [0, 1], ground truths binary {0, 1}.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np


def default_thresholds() -> np.ndarray:
    """Threshold grid k/255 for k = 1..254 (both endpoints excluded)."""
    return np.arange(1, 255, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# Otsu thresholding


def otsu_threshold_from_histogram(hist) -> int:
    """Index k of the best cut on a histogram: class 0 is bins <= k.

    Maximizes the between-class variance w0*w1*(mu0-mu1)^2 over all cuts
    k = 0..nbins-2; ties resolve to the lowest k.
    """
    hist = np.asarray(hist, dtype=np.float64)
    if hist.ndim != 1 or len(hist) < 2:
        raise ValueError("histogram must be 1-D with at least 2 bins")
    total = hist.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    levels = np.arange(len(hist), dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]
    w1 = total - w0
    sum0 = np.cumsum(levels * hist)[:-1]
    sum_total = (levels * hist).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (sum_total - sum0) / w1
        var_between = w0 * w1 * (mu0 - mu1) ** 2
    var_between[~np.isfinite(var_between)] = 0.0
    return int(np.argmax(var_between))


def otsu_threshold(prob_map) -> float:
    """Otsu threshold of a probability map quantized to 256 bins.

    Returns the bin boundary (k + 0.5)/255 of the variance-maximizing cut.
    A constant map returns its own value so that `prob > t` is all zeros.
    """
    prob = np.asarray(prob_map, dtype=np.float64)
    if prob.size == 0:
        raise ValueError("empty probability map")
    if prob.min() == prob.max():
        return float(prob.flat[0])
    q = np.clip(np.round(prob * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    k = otsu_threshold_from_histogram(hist)
    return (k + 0.5) / 255.0


def binarize(prob_map, threshold: float) -> np.ndarray:
    """Strict threshold: pixel is crack iff probability > threshold."""
    return np.asarray(prob_map) > threshold


# ---------------------------------------------------------------------------
# Confusion counts and per-mask scores


def _check_binary(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (values in {{0, 1}})")
    return arr.astype(bool)


def confusion(pred_mask, gt) -> tuple[int, int, int, int]:
    """Exact (tp, fp, tn, fn) pixel counts for aligned binary masks."""
    pred = _check_binary(pred_mask, "pred_mask")
    truth = _check_binary(gt, "gt")
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return tp, fp, tn, fn


def _safe_ratio(num: int, den: int, absent_in_both: bool) -> float:
    # Zero denominator: 1 when the class is absent on both sides, else 0.
    if den > 0:
        return num / den
    return 1.0 if absent_in_both else 0.0


@dataclass(frozen=True)
class SegmentationScores:
    dice: float
    accuracy: float
    sensitivity: float
    specificity: float
    iou_crack: float
    iou_bg: float


def segmentation_scores(pred_mask, gt) -> SegmentationScores:
    """Dice, accuracy, sensitivity, specificity and per-class IoU."""
    tp, fp, tn, fn = confusion(pred_mask, gt)
    return _scores_from_counts(tp, fp, tn, fn)


def _scores_from_counts(tp: int, fp: int, tn: int, fn: int) -> SegmentationScores:
    crack_absent = (tp + fp + fn) == 0
    bg_absent = (tn + fp + fn) == 0
    return SegmentationScores(
        dice=_safe_ratio(2 * tp, 2 * tp + fp + fn, crack_absent),
        accuracy=(tp + tn) / (tp + fp + tn + fn),
        sensitivity=_safe_ratio(tp, tp + fn, crack_absent),
        specificity=_safe_ratio(tn, tn + fp, bg_absent),
        iou_crack=_safe_ratio(tp, tp + fp + fn, crack_absent),
        iou_bg=_safe_ratio(tn, tn + fp + fn, bg_absent),
    )


# ---------------------------------------------------------------------------
# Threshold sweep, PR curve, ODS / OIS / AP


def _sweep_counts(pred, gt, thresholds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(tp, fp, fn) per threshold for a single image, strict `>` binarization."""
    t = np.asarray(thresholds, dtype=np.float64)
    prob = np.asarray(pred, dtype=np.float64).ravel()
    pos = _check_binary(gt, "gt").ravel()
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    # Pixel with index j = searchsorted(t, p) is predicted positive at all
    # thresholds k < j, since t[k] < p exactly there.
    idx = np.searchsorted(t, prob, side="left")
    k = len(t)
    pos_hist = np.bincount(idx[pos], minlength=k + 1)
    neg_hist = np.bincount(idx[~pos], minlength=k + 1)
    tp = n_pos - np.cumsum(pos_hist)[:k]
    fp = n_neg - np.cumsum(neg_hist)[:k]
    fn = n_pos - tp
    return tp, fp, fn


@dataclass(frozen=True)
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def __post_init__(self):
        if not (len(self.thresholds) == len(self.precision) == len(self.recall)):
            raise ValueError("threshold/precision/recall lengths differ")

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("threshold,precision,recall\n")
            for t, p, r in zip(self.thresholds, self.precision, self.recall):
                fh.write(f"{float(t)!r},{float(p)!r},{float(r)!r}\n")

    @classmethod
    def read_csv(cls, path) -> "PRCurve":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 0], rows[:, 1], rows[:, 2])


def _precision_recall(tp, fp, fn) -> tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=np.float64)
    pred_pos = tp + fp
    actual_pos = tp + fn
    precision = np.where(pred_pos > 0, tp / np.maximum(pred_pos, 1), 1.0)
    recall = np.where(actual_pos > 0, tp / np.maximum(actual_pos, 1), 1.0)
    return precision, recall


def pr_curve(preds, gts, thresholds=None) -> PRCurve:
    """Dataset-aggregated precision/recall over the threshold grid.

    Counts are pooled over all images before computing ratios; precision
    and recall default to 1 where their denominator is zero.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts length mismatch")
    if len(preds) == 0:
        raise ValueError("empty dataset")
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    tp = np.zeros(len(t), dtype=np.int64)
    fp = np.zeros(len(t), dtype=np.int64)
    fn = np.zeros(len(t), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        tpi, fpi, fni = _sweep_counts(pred, gt, t)
        tp += tpi
        fp += fpi
        fn += fni
    precision, recall = _precision_recall(tp, fp, fn)
    return PRCurve(t, precision, recall)


def f_measure(precision, recall):
    """F = 2PR/(P+R), defined as 0 where P+R = 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    denom = p + r
    return np.where(denom > 0, 2.0 * p * r / np.maximum(denom, 1e-300), 0.0)


def ods(curve: PRCurve) -> tuple[float, float]:
    """Best dataset-scale F-measure and its threshold (ties: lowest t)."""
    f = f_measure(curve.precision, curve.recall)
    best = int(np.argmax(f))
    return float(f[best]), float(curve.thresholds[best])


def ois(preds, gts, thresholds=None) -> float:
    """Mean over images of each image's best-threshold F-measure."""
    score, _ = _ois_detail(preds, gts, thresholds)
    return score


def _ois_detail(preds, gts, thresholds=None) -> tuple[float, list[tuple[float, float]]]:
    if len(preds) != len(gts):
        raise ValueError("preds and gts length mismatch")
    if len(preds) == 0:
        raise ValueError("empty dataset")
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    per_image = []
    for pred, gt in zip(preds, gts):
        tp, fp, fn = _sweep_counts(pred, gt, t)
        precision, recall = _precision_recall(tp, fp, fn)
        f = f_measure(precision, recall)
        best = int(np.argmax(f))
        per_image.append((float(f[best]), float(t[best])))
    return float(np.mean([f for f, _ in per_image])), per_image


def average_precision(curve: PRCurve) -> float:
    """Rectangle-rule area under the PR staircase.

    AP = sum_k (R_k - R_{k+1}) * P_k over the threshold-ordered curve,
    taking recall past the last threshold as 0.
    """
    recall = np.append(curve.recall, 0.0)
    return float(np.sum((recall[:-1] - recall[1:]) * curve.precision))


# ---------------------------------------------------------------------------
# Dataset-level report


@dataclass(frozen=True)
class MetricsReport:
    ods: float
    ois: float
    ap: float
    global_accuracy: float
    mean_iou: float
    per_image: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ods": self.ods,
            "ois": self.ois,
            "ap": self.ap,
            "global_accuracy": self.global_accuracy,
            "mean_iou": self.mean_iou,
            "per_image": [
                {"id": i, "best_f": f, "best_t": t} for i, f, t in self.per_image
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            ods=d["ods"],
            ois=d["ois"],
            ap=d["ap"],
            global_accuracy=d["global_accuracy"],
            mean_iou=d["mean_iou"],
            per_image=[(r["id"], r["best_f"], r["best_t"]) for r in d["per_image"]],
        )

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "MetricsReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate_dataset(preds, gts, ids=None, thresholds=None) -> MetricsReport:
    """Full benchmark report for aligned prediction/ground-truth lists.

    ODS, OIS and AP come from the threshold sweep; global accuracy and mean
    IoU are computed from dataset-pooled counts after per-image Otsu
    binarization.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts length mismatch")
    if ids is None:
        ids = [str(i) for i in range(len(preds))]
    curve = pr_curve(preds, gts, thresholds)
    ods_score, _ = ods(curve)
    ois_score, per_image = _ois_detail(preds, gts, thresholds)
    ap = average_precision(curve)

    tp = fp = tn = fn = 0
    for pred, gt in zip(preds, gts):
        mask = binarize(pred, otsu_threshold(pred))
        tpi, fpi, tni, fni = confusion(mask, gt)
        tp, fp, tn, fn = tp + tpi, fp + fpi, tn + tni, fn + fni
    pooled = _scores_from_counts(tp, fp, tn, fn)
    mean_iou = (pooled.iou_crack + pooled.iou_bg) / 2.0

    records = [(i, f, t) for i, (f, t) in zip(ids, per_image)]
    return MetricsReport(
        ods=ods_score,
        ois=ois_score,
        ap=ap,
        global_accuracy=pooled.accuracy,
        mean_iou=mean_iou,
        per_image=records,
    )


# ---------------------------------------------------------------------------
# Complexity reporting


@dataclass(frozen=True)
class ComplexityReport:
    flops: int
    params: int
    seconds_per_image: float | None

    def to_dict(self) -> dict:
        return {
            "flops": self.flops,
            "params": self.params,
            "seconds_per_image": self.seconds_per_image,
        }


def complexity_report(net, input_size, timing_runs: int = 100, warmup: int = 10) -> ComplexityReport:
    """FLOPs, parameter count, and timed single-image inference for a network.

    `input_size` is (C, H, W). FLOPs follow the documented convention of
    `introspect` (multiply-add = 2 for conv/linear, 1 op per element for
    pooling, normalization and activations). Timing averages `timing_runs`
    forward passes after `warmup` discarded ones; pass timing_runs=0 to
    skip timing (seconds_per_image is then None).
    """
    import torch

    from .introspect import layer_manifest, manifest_flops, manifest_params

    manifest = layer_manifest(net, input_size)
    flops = manifest_flops(manifest)
    params = manifest_params(manifest)

    seconds = None
    if timing_runs > 0:
        was_training = net.training
        net.eval()
        x = torch.zeros((1,) + tuple(input_size))
        with torch.no_grad():
            for _ in range(warmup):
                net(x)
            start = time.perf_counter()
            for _ in range(timing_runs):
                net(x)
            seconds = (time.perf_counter() - start) / timing_runs
        if was_training:
            net.train()
    return ComplexityReport(flops=flops, params=params, seconds_per_image=seconds)
