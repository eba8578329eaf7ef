"""Classification metrics for 5-grade and 3-group evaluation.

Class labels passed to these functions are 1-based.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .numcore import InvalidArgument

# grade (1-based) -> group (1-based): benign {1,2}, unsure {3}, malignant {4,5}
GROUP_OF_GRADE = {1: 1, 2: 1, 3: 2, 4: 3, 5: 3}
GROUP_NAMES = ("benign", "unsure", "malignant")


def _labels(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgument(f"{name} must be a non-empty 1-D sequence")
    return x.astype(np.int64)


def accuracy(predictions, targets) -> float:
    pred = _labels(predictions, "predictions")
    tgt = _labels(targets, "targets")
    if pred.shape != tgt.shape:
        raise InvalidArgument(f"length mismatch: {pred.size} predictions, {tgt.size} targets")
    return float(np.mean(pred == tgt))


def confusion(predictions, targets, n_classes: int) -> np.ndarray:
    """Counts with rows = target class, columns = predicted class."""
    pred = _labels(predictions, "predictions")
    tgt = _labels(targets, "targets")
    if pred.shape != tgt.shape:
        raise InvalidArgument("length mismatch")
    for arr in (pred, tgt):
        if arr.min() < 1 or arr.max() > n_classes:
            raise InvalidArgument(f"class index outside [1, {n_classes}]")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (tgt - 1, pred - 1), 1)
    return m


def macro_f1(predictions, targets, n_classes: int) -> float:
    """Unweighted mean of per-class F1; a class with no support and no
    predictions scores 0 and still counts in the mean.

    The mean is formed exactly over rationals and rounded once, so the
    result does not depend on summation order.
    """
    m = confusion(predictions, targets, n_classes)
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1)  # 2tp + fp + fn
    total = sum((Fraction(2 * int(t), int(d)) for t, d in zip(tp, denom) if d > 0), Fraction(0))
    return float(total / n_classes)


def binary_auc(scores, positive) -> float:
    """ROC AUC via the Mann-Whitney rank statistic, ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgument("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_auc(probabilities, targets, n_classes: int, return_skipped: bool = False):
    """One-vs-rest AUC averaged over classes present in ``targets``.

    Classes with no positive (or no negative) sample are skipped; pass
    ``return_skipped=True`` to also receive their 1-based indices.
    """
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    tgt = _labels(targets, "targets")
    if p.shape != (tgt.size, n_classes):
        raise InvalidArgument(f"probabilities must have shape ({tgt.size}, {n_classes})")
    aucs, skipped = [], []
    for k in range(1, n_classes + 1):
        pos = tgt == k
        if pos.all() or not pos.any():
            skipped.append(k)
            continue
        aucs.append(binary_auc(p[:, k - 1], pos))
    value = float(np.mean(aucs)) if aucs else float("nan")
    return (value, skipped) if return_skipped else value


def map_3class(label5):
    """Grade 1..5 to group 1..3; accepts a scalar or an array."""
    arr = np.asarray(label5, dtype=np.int64)
    if np.any(arr < 1) or np.any(arr > 5):
        raise InvalidArgument("grades must lie in 1..5")
    out = np.where(arr <= 2, 1, np.where(arr == 3, 2, 3))
    return int(out) if out.ndim == 0 else out


def probs_3class(p5) -> np.ndarray:
    p5 = np.asarray(p5, dtype=np.float64)
    if p5.shape[-1] != 5:
        raise InvalidArgument("3-group probabilities need 5-grade input")
    return np.stack([p5[..., 0] + p5[..., 1], p5[..., 2], p5[..., 3] + p5[..., 4]], axis=-1)


def evaluate_predictions(probabilities, targets, n_classes: int = 5) -> dict:
    """All task metrics for one run. ``targets`` are 1-based grades."""
    p = np.asarray(probabilities, dtype=np.float64)
    tgt = _labels(targets, "targets")
    pred = np.argmax(p, axis=1) + 1
    auc, skipped = macro_auc(p, tgt, n_classes, return_skipped=True)
    tasks = {
        "5class": {
            "accuracy": accuracy(pred, tgt),
            "f1": macro_f1(pred, tgt, n_classes),
            "auc": auc,
            "confusion": confusion(pred, tgt, n_classes).tolist(),
            "auc_skipped_classes": skipped,
        }
    }
    if n_classes == 5:
        p3 = probs_3class(p)
        t3 = map_3class(tgt)
        pred3 = np.argmax(p3, axis=1) + 1
        auc3, skipped3 = macro_auc(p3, t3, 3, return_skipped=True)
        tasks["3class"] = {
            "accuracy": accuracy(pred3, t3),
            "f1": macro_f1(pred3, t3, 3),
            "auc": auc3,
            "confusion": confusion(pred3, t3, 3).tolist(),
            "auc_skipped_classes": skipped3,
            # how often the grouped 5-grade argmax disagrees with the argmax of grouped probabilities
            "argmax_group_mismatch": float(np.mean(map_3class(pred) != pred3)),
        }
    return tasks
