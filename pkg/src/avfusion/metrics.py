"""Frame-level accuracy, macro-F1 and confusion counts; frames with gold -1 are ignored."""

from __future__ import annotations

import numpy as np

N_CLASSES = 8


class NoValidFramesError(ValueError):
    pass


def _valid_pairs(pred, gold):
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: pred {pred.shape[0]} vs gold {gold.shape[0]}")
    keep = gold != -1
    if not keep.any():
        raise NoValidFramesError("no frame has a gold label")
    return pred[keep], gold[keep]


def confusion(pred, gold, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = gold class, columns = predicted class."""
    p, g = _valid_pairs(pred, gold)
    if p.min() < 0 or p.max() >= n_classes or g.min() < 0 or g.max() >= n_classes:
        raise ValueError("class id outside range")
    return np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def accuracy(pred, gold) -> float:
    p, g = _valid_pairs(pred, gold)
    return float((p == g).mean())


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(pred, gold, n_classes: int = N_CLASSES, exclude_absent: bool = True) -> float:
    """Unweighted mean of per-class F1.

    With ``exclude_absent`` (default) classes that never occur in gold and are
    never predicted are left out of the mean; otherwise they count as 0.
    """
    cm = confusion(pred, gold, n_classes)
    f1 = per_class_f1(cm)
    if exclude_absent:
        present = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
        return float(f1[present].mean())
    return float(f1.mean())


def report(pred, gold, n_classes: int = N_CLASSES) -> dict:
    cm = confusion(pred, gold, n_classes)
    return {
        "accuracy": accuracy(pred, gold),
        "macro_f1": macro_f1(pred, gold, n_classes),
        "per_class_f1": per_class_f1(cm).tolist(),
        "confusion": cm.tolist(),
        "valid_frames": int(cm.sum()),
    }
