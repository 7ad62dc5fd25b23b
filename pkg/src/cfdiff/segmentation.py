"""Difference-image tumour segmentation and overlap metrics.

Pipeline: absolute per-channel difference between the factual and the
counterfactual image, per-channel percentile contrast stretch, Otsu
binarisation, then a weighted vote across channels (tumour where the summed
weight reaches 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

EQUAL_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


@dataclass
class SegmentationResult:
    channel_masks: np.ndarray   # (C, H, W) bool
    score: np.ndarray           # (H, W) weighted vote S
    mask: np.ndarray            # (H, W) bool, S >= 0.5
    weights: tuple
    thresholds: tuple = ()


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape {np.shape(a)} != {np.shape(b)}")


def difference_image(factual, counterfactual) -> np.ndarray:
    _check_pair(factual, counterfactual)
    return np.abs(np.asarray(factual, np.float64) - np.asarray(counterfactual, np.float64))


def normalize_contrast(d, p_low: float = 1.0, p_high: float = 99.0) -> np.ndarray:
    """Affinely map each channel's [p_low, p_high] percentile band onto [0, 1], clamped.

    Constant channels become all-zero. When the percentile band collapses on a
    non-constant channel (a lesion covering under ``100 - p_high`` percent of
    the frame) the upper anchor falls back to the channel maximum.
    """
    if not 0.0 <= p_low < p_high <= 100.0:
        raise ContractError(f"need 0 <= p_low < p_high <= 100, got {p_low}, {p_high}")
    d = np.asarray(d, np.float64)
    squeeze = d.ndim == 2
    d = d[None] if squeeze else d
    out = np.zeros_like(d)
    for c, ch in enumerate(d):
        lo, hi = np.percentile(ch, [p_low, p_high])
        if hi <= lo:
            hi = ch.max()
        if hi > lo:
            out[c] = np.clip((ch - lo) / (hi - lo), 0.0, 1.0)
    return out[0] if squeeze else out


def histogram_bins(channel: np.ndarray, bins: int):
    """Bin index per value over equal-width bins on [min, max] and the bin edges.

    A value lying exactly on an edge goes to the lower bin, so bin ``< k`` is
    the same set as ``value <= edges[k]``.
    """
    lo, hi = float(channel.min()), float(channel.max())
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, channel, side="left") - 1, 0, bins - 1)
    return idx, edges


def otsu_threshold(channel, bins: int = 256):
    """Otsu threshold over bin boundaries; returns (threshold, mask = channel > threshold).

    Between-class variance is compared in exact integer arithmetic (bin
    indices stand in for intensities, which leaves the argmax unchanged for
    equal-width bins), so ties resolve to the smallest boundary.
    """
    channel = np.asarray(channel, np.float64)
    if not np.all(np.isfinite(channel)):
        raise ContractError("otsu_threshold needs finite values")
    lo, hi = float(channel.min()), float(channel.max())
    if lo == hi:
        return lo, np.zeros(channel.shape, bool)
    idx, edges = histogram_bins(channel, bins)
    k = otsu_from_histogram(np.bincount(idx.ravel(), minlength=bins))
    threshold = float(edges[k])
    return threshold, channel > threshold


def otsu_from_histogram(counts) -> int:
    """Boundary index ``k`` (class 0 = bins ``< k``) maximising between-class variance."""
    counts = [int(c) for c in counts]
    n = sum(counts)
    total = sum(i * c for i, c in enumerate(counts))
    best_k, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for k in range(1, len(counts)):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1, s1 = n - n0, total - s0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * n^2 = (n1*s0 - n0*s1)^2 / (n0*n1)
        num, den = (n1 * s0 - n0 * s1) ** 2, n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    if best_k is None:
        raise ContractError("histogram has a single occupied bin")
    return best_k


def fuse_modalities(masks, weights=EQUAL_WEIGHTS) -> SegmentationResult:
    masks = np.asarray(masks, bool)
    weights = tuple(float(w) for w in weights)
    if masks.ndim != 3 or len(weights) != masks.shape[0]:
        raise ShapeError(f"need one weight per mask, got {len(weights)} for {masks.shape}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ContractError(f"weights must sum to 1, got {sum(weights)}")
    score = np.zeros(masks.shape[1:])
    for w, m in zip(weights, masks):
        score += w * m
    return SegmentationResult(channel_masks=masks, score=score, mask=score >= 0.5, weights=weights)


def dice(a, b) -> float:
    _check_pair(a, b)
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    denom = int(a.sum()) + int(b.sum())
    return 1.0 if denom == 0 else 2.0 * int((a & b).sum()) / denom


def iou(a, b) -> float:
    _check_pair(a, b)
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    union = int((a | b).sum())
    return 1.0 if union == 0 else int((a & b).sum()) / union


def segment(factual, counterfactual, weights=EQUAL_WEIGHTS, p_low: float = 1.0,
            p_high: float = 99.0, bins: int = 256, min_contrast: float = 0.0) -> SegmentationResult:
    """Factual/counterfactual pair (C, H, W) to a fused binary tumour mask.

    ``min_contrast`` rejects a channel's Otsu split when the mean raw
    difference of the two classes differs by less than this amount, which
    keeps resampling noise in an unchanged region from being labelled.
    """
    diff = difference_image(factual, counterfactual)
    if diff.ndim != 3:
        raise ShapeError(f"expected (C, H, W) images, got {diff.shape}")
    norm = normalize_contrast(diff, p_low, p_high)
    masks, thresholds = [], []
    for raw, ch in zip(diff, norm):
        thr, m = otsu_threshold(ch, bins)
        if m.any() and min_contrast > 0 and raw[m].mean() - raw[~m].mean() < min_contrast:
            m = np.zeros_like(m)
        masks.append(m)
        thresholds.append(thr)
    result = fuse_modalities(np.stack(masks), weights)
    result.thresholds = tuple(thresholds)
    return result
