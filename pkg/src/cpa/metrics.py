"""Evaluation metrics: verification AUC, step-interval IoU and silhouette."""
from __future__ import annotations

import numpy as np


def verification_auc(distances, labels) -> float:
    """ROC-AUC of a distance where small values should mean "positive".

    Counts every positive/negative pair; a negative farther away than the
    positive scores 1, a tie scores 0.5.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if d.shape != y.shape:
        raise ValueError("distances and labels must have the same length")
    pos, neg = d[y], d[~y]
    if pos.size == 0 or neg.size == 0:
        raise ValueError(f"AUC undefined: {pos.size} positives, {neg.size} negatives")
    diff = neg[None, :] - pos[:, None]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size))


def _check_tiling(intervals, name):
    intervals = [(int(s), int(e)) for s, e in intervals]
    if not intervals:
        raise ValueError(f"{name} segmentation is empty")
    prev = 0
    for s, e in intervals:
        if s != prev or e <= s:
            raise ValueError(f"{name} segmentation does not tile from frame 0: {intervals}")
        prev = e
    return intervals


def merge_uniformly(intervals, n_steps: int):
    """Merge consecutive intervals into ``n_steps`` groups of near-equal count."""
    n = len(intervals)
    if n_steps > n:
        raise ValueError(f"cannot merge {n} intervals into {n_steps}")
    cuts = [g * n // n_steps for g in range(n_steps + 1)]
    return [(intervals[cuts[g]][0], intervals[cuts[g + 1] - 1][1]) for g in range(n_steps)]


def step_ious(pred, gt) -> list[float]:
    """Per-step IoU after bringing both segmentations to a common step count.

    The segmentation with more steps is merged uniformly down to the other's
    count, then steps are matched in temporal order.
    """
    pred = _check_tiling(pred, "predicted")
    gt = _check_tiling(gt, "ground-truth")
    if pred[-1][1] != gt[-1][1]:
        raise ValueError(f"segmentations cover different lengths: {pred[-1][1]} vs {gt[-1][1]}")
    if len(pred) > len(gt):
        pred = merge_uniformly(pred, len(gt))
    elif len(gt) > len(pred):
        gt = merge_uniformly(gt, len(pred))
    out = []
    for (ps, pe), (gs, ge) in zip(pred, gt):
        inter = max(0, min(pe, ge) - max(ps, gs))
        union = max(pe, ge) - min(ps, gs)
        out.append(inter / union)
    return out


def boundary_iou(pred, gt) -> float:
    return float(np.mean(step_ious(pred, gt)))


def aiou_summary(ious, thresholds=(0.5, 0.75)) -> dict:
    """Mean IoU plus the fraction of samples whose IoU reaches each threshold."""
    ious = np.asarray(ious, dtype=np.float64)
    out = {"mean_iou": float(ious.mean())}
    for thr in thresholds:
        out[f"aiou@{thr}"] = float((ious >= thr).mean())
    return out


def silhouette_score(features, labels) -> float:
    """Mean silhouette with Euclidean distances.

    Points in singleton clusters score 0, as do points with ``a == b == 0``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features must be an n x d grid with one label per row")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dist = np.sqrt(np.maximum(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1), 0.0))
    onehot = y[:, None] == classes[None, :]
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot
    own = np.argmax(onehot, axis=1)
    n = X.shape[0]
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    other = sums / sizes
    other[np.arange(n), own] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())
