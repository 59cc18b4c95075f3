"""Overlapping window slicing, the missing-label filter, and coverage counts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .dataio import FeatureSequence


@dataclass
class WindowSample:
    start: int
    v_in: np.ndarray  # (W, d_v)
    a_in: np.ndarray  # (W, d_a)
    labels: np.ndarray  # (W,), -1 on padding
    frame_valid: np.ndarray  # (W,) bool: labelled and not padding
    pad_len: int
    v_missing: bool = False
    video_id: str = ""

    @property
    def W(self) -> int:
        return len(self.labels)

    @property
    def unpadded(self) -> np.ndarray:
        m = np.ones(self.W, dtype=bool)
        if self.pad_len:
            m[-self.pad_len :] = False
        return m


def make_windows(T: int, W: int = 64, S: int = 8) -> list[int]:
    """Window start indices covering every frame of a length-``T`` sequence.

    Starts advance by ``S`` while the window fits; one extra start at ``T - W``
    picks up an uncovered tail. ``S`` may not exceed ``W``. A sequence shorter
    than ``W`` gets the single start 0 and is padded by the caller.
    """
    if T < 1:
        raise ValueError("cannot window an empty sequence")
    if W < 1 or S < 1:
        raise ValueError(f"window {W} and stride {S} must be >= 1")
    if S > W:
        raise ValueError(f"stride {S} exceeds window {W}; frames between windows would go uncovered")
    if T <= W:
        return [0]
    starts = list(range(0, T - W + 1, S))
    if starts[-1] + W < T:
        starts.append(T - W)
    return starts


def filter_window(labels: np.ndarray, frame_valid: np.ndarray, threshold: float = 0.25) -> bool:
    """True to keep. A window is dropped when its invalid share strictly exceeds ``threshold``."""
    labels = np.asarray(labels)
    invalid = (~np.asarray(frame_valid, dtype=bool)) | (labels == -1)
    return not (invalid.sum() / len(labels) > threshold)


def coverage_counts(T: int, starts: Iterable[int], W: int) -> np.ndarray:
    counts = np.zeros(T, dtype=np.int64)
    for s in starts:
        counts[s : min(s + W, T)] += 1
    return counts


def cut_window(seq: FeatureSequence, start: int, W: int) -> WindowSample:
    """Slice ``[start, start + W)`` from ``seq``, zero-padding past the end."""
    end = min(start + W, seq.T)
    n = end - start
    pad = W - n
    v = np.zeros((W, seq.visual.shape[1]), dtype=np.float32)
    a = np.zeros((W, seq.audio.shape[1]), dtype=np.float32)
    lab = np.full(W, -1, dtype=np.int64)
    v[:n] = seq.visual[start:end]
    a[:n] = seq.audio[start:end]
    lab[:n] = seq.labels[start:end]
    valid = lab != -1
    # a blacked-out visual stream is reported as a missing modality
    v_missing = bool(n > 0 and not np.any(v[:n]))
    return WindowSample(start, v, a, lab, valid, pad, v_missing, seq.video_id)


def sequence_windows(
    seq: FeatureSequence,
    W: int = 64,
    S: int = 8,
    threshold: float | None = 0.25,
) -> list[WindowSample]:
    """All windows of ``seq``; with ``threshold`` set, drop those failing :func:`filter_window`."""
    out = []
    for s in make_windows(seq.T, W, S):
        w = cut_window(seq, s, W)
        if threshold is None or filter_window(w.labels, w.frame_valid, threshold):
            out.append(w)
    return out


def dataset_windows(
    seqs: Sequence[FeatureSequence], W: int = 64, S: int = 8, threshold: float | None = 0.25
) -> list[WindowSample]:
    out = []
    for seq in seqs:
        out.extend(sequence_windows(seq, W, S, threshold))
    return out


def blackout(samples: Sequence[WindowSample], fraction: float, seed: int) -> list[WindowSample]:
    """Copy of ``samples`` with visual input zeroed on a seeded ``fraction`` of windows."""
    rng = np.random.default_rng(seed)
    n = len(samples)
    chosen = set(rng.permutation(n)[: int(round(fraction * n))].tolist())
    return [
        replace(w, v_in=np.zeros_like(w.v_in), v_missing=True) if i in chosen else w
        for i, w in enumerate(samples)
    ]


def collate(samples: Sequence[WindowSample]) -> dict[str, np.ndarray]:
    """Stack windows of equal length into batch arrays."""
    Ws = {w.W for w in samples}
    if len(Ws) != 1:
        raise ValueError(f"windows in a batch must share W, got {sorted(Ws)}")
    return {
        "v_in": np.stack([w.v_in for w in samples]),
        "a_in": np.stack([w.a_in for w in samples]),
        "labels": np.stack([w.labels for w in samples]),
        "frame_valid": np.stack([w.frame_valid for w in samples]),
        "frame_mask": np.stack([w.unpadded for w in samples]),
        "v_missing": np.array([w.v_missing for w in samples], dtype=bool),
    }
