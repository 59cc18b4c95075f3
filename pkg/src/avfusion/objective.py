"""Class-balanced focal loss over frame logits, ignoring frames labelled -1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

LOG_FLOOR = math.log(1e-12)


class AllInvalidError(ValueError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray
    beta: float
    counts: np.ndarray

    def tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.w, dtype=dtype)


def effective_number_weights(counts, beta: float = 0.999) -> ClassWeights:
    """Weights ``(1 - beta) / (1 - beta**n_c)`` rescaled to mean 1."""
    n = np.asarray(counts, dtype=np.int64)
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if np.any(n < 1):
        zero = np.nonzero(n < 1)[0].tolist()
        raise ValueError(
            f"classes {zero} have no training frames; drop them or smooth the counts before weighting"
        )
    raw = (1.0 - beta) / (1.0 - np.power(beta, n.astype(np.float64)))
    w = raw * len(n) / raw.sum()
    return ClassWeights(w, beta, n)


def uniform_weights(n_classes: int = 8) -> ClassWeights:
    return ClassWeights(np.ones(n_classes), 0.0, np.ones(n_classes, dtype=np.int64))


def frame_terms(logits: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0):
    """Per-frame ``(focal term, clamped log p_t)`` for labels already known valid."""
    logp = torch.log_softmax(logits, dim=-1).gather(-1, labels[:, None]).squeeze(-1)
    logp = logp.clamp(min=LOG_FLOOR)
    pt = logp.exp()
    return -((1.0 - pt) ** gamma) * logp, logp


def focal_loss(
    logits: torch.Tensor,
    labels,
    weights: ClassWeights | None = None,
    gamma: float = 2.0,
) -> torch.Tensor:
    """Weighted focal loss averaged over frames whose label is not -1.

    ``logits`` may carry leading batch axes; they are flattened against
    ``labels``. Raises :class:`AllInvalidError` when no frame is labelled.
    """
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    logits = logits.reshape(-1, logits.shape[-1])
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    valid = labels != -1
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise AllInvalidError("every frame is labelled -1")
    y = labels[valid]
    term, _ = frame_terms(logits[valid], y, gamma)
    if weights is not None:
        term = term * weights.tensor(logits.dtype)[y]
    return term.sum() / n_valid


def cross_entropy(logits: torch.Tensor, labels, weights: ClassWeights | None = None) -> torch.Tensor:
    """Masked, weighted cross-entropy with the same clamp and normalisation as :func:`focal_loss`."""
    return focal_loss(logits, labels, weights, gamma=0.0)
