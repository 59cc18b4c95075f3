"""Long-video prediction: window logits, soft voting, then temporal smoothing."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataio import FeatureSequence
from .windowing import collate, cut_window, make_windows


class CoverageError(RuntimeError):
    pass


def soft_vote(windows: Sequence[tuple[int, np.ndarray, int]], T: int) -> np.ndarray:
    """Average raw logits of every window covering each frame.

    ``windows`` holds ``(start, logits (W, C), pad_len)``; padded rows are skipped.
    """
    if not windows:
        raise CoverageError("no windows to vote over")
    C = windows[0][1].shape[1]
    total = np.zeros((T, C), dtype=np.float64)
    cover = np.zeros(T, dtype=np.int64)
    for start, z, pad in windows:
        n = z.shape[0] - pad
        end = min(start + n, T)
        total[start:end] += z[: end - start]
        cover[start:end] += 1
    if np.any(cover == 0):
        raise CoverageError(f"frame {int(np.argmin(cover))} is not covered by any window")
    return total / cover[:, None]


def median_filter(labels, k: int = 11) -> np.ndarray:
    """Running median over an odd window ``k`` with edge replication."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"median kernel must be odd and positive, got {k}")
    x = np.asarray(labels, dtype=np.int64)
    if k == 1 or x.size == 0:
        return x.copy()
    r = k // 2
    padded = np.pad(x, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, k)
    return np.sort(win, axis=1)[:, r]


def majority_filter(labels, k: int = 11, n_classes: int = 8) -> np.ndarray:
    """Most frequent label in each centred window (ties to the lowest id)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel must be odd and positive, got {k}")
    x = np.asarray(labels, dtype=np.int64)
    r = k // 2
    padded = np.pad(x, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, k)
    counts = np.stack([(win == c).sum(axis=1) for c in range(n_classes)], axis=1)
    return counts.argmax(axis=1)


def window_logits(model, seq: FeatureSequence, W: int, S: int, batch_size: int = 64):
    cfg = model.cfg
    if seq.visual.shape[1] != cfg.d_v or seq.audio.shape[1] != cfg.d_a:
        raise ValueError(
            f"{seq.video_id}: feature dims ({seq.visual.shape[1]}, {seq.audio.shape[1]}) "
            f"do not match model ({cfg.d_v}, {cfg.d_a})"
        )
    samples = [cut_window(seq, s, W) for s in make_windows(seq.T, W, S)]
    out = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            z = model.forward_batch(collate(chunk), train=False).double().numpy()
            out.extend((w.start, z[j], w.pad_len) for j, w in enumerate(chunk))
    return out


def predict_video(
    model, seq: FeatureSequence, W: int = 64, S: int = 8, k: int = 11, smoother: str = "median"
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed per-frame labels and the voted logits ``(T, C)`` for one video."""
    voted = soft_vote(window_logits(model, seq, W, S), seq.T)
    raw = np.argmax(voted, axis=1)
    if smoother == "median":
        labels = median_filter(raw, k)
    elif smoother == "majority":
        labels = majority_filter(raw, k, voted.shape[1])
    elif smoother == "none":
        labels = raw
    else:
        raise ValueError(f"unknown smoother {smoother!r}")
    return labels, voted


def write_predictions(path, labels, logits=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["frame", "label"]
        if logits is not None:
            head += [f"logit_{c}" for c in range(logits.shape[1])]
        w.writerow(head)
        for t, lab in enumerate(labels):
            row = [t, int(lab)]
            if logits is not None:
                row += [repr(float(v)) for v in logits[t]]
            w.writerow(row)


def read_predictions(path) -> np.ndarray:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["label"]) for r in rows], dtype=np.int64)
