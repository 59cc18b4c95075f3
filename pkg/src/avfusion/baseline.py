"""Frame-level two-stream MLP with decision-level weighted fusion.

Visual frames and context-pooled audio go through separate MLPs; the logits
are blended as ``lam * visual + (1 - lam) * audio``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import FeatureSequence, context_pool_all
from .fusionnet import Affine
from .metrics import accuracy, macro_f1
from .objective import cross_entropy

DEFAULT_LAMBDAS = (0.0, 0.5, 0.7, 1.0)


class StreamMLP(nn.Module):
    def __init__(self, d_in: int, hidden: int, n_classes: int = 8):
        super().__init__()
        self.fc1 = Affine(d_in, hidden)
        self.fc2 = Affine(hidden, n_classes)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class BaselineModel(nn.Module):
    def __init__(self, d_v: int, d_a: int, lam: float, hidden: int = 128, seed: int = 0):
        super().__init__()
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        self.lam = float(lam)
        self.visual = StreamMLP(d_v, hidden)
        self.audio = StreamMLP(d_a, hidden)
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, Affine):
                m.reset(gen)

    def forward(self, v_feat, a_ctx):
        return self.lam * self.visual(v_feat) + (1.0 - self.lam) * self.audio(a_ctx)


def baseline_forward(v_feat, a_ctx, model: BaselineModel) -> torch.Tensor:
    return model(v_feat, a_ctx)


@dataclass
class BaselineConfig:
    hidden: int = 128
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    radius: int = 18
    seed: int = 0


def frame_table(seqs: Sequence[FeatureSequence], radius: int = 18, labelled_only: bool = True):
    """Stack (visual frame, pooled audio context, label) rows over all videos."""
    vs, as_, ys = [], [], []
    for s in seqs:
        ctx = context_pool_all(s.audio, radius)
        keep = s.labels != -1 if labelled_only else np.ones(s.T, dtype=bool)
        vs.append(s.visual[keep])
        as_.append(ctx[keep])
        ys.append(s.labels[keep])
    return np.concatenate(vs), np.concatenate(as_), np.concatenate(ys)


def train_baseline(
    lam: float, train_seqs: Sequence[FeatureSequence], cfg: BaselineConfig = BaselineConfig()
) -> BaselineModel:
    v, a, y = frame_table(train_seqs, cfg.radius)
    model = BaselineModel(v.shape[1], a.shape[1], lam, cfg.hidden, cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    v_t, a_t, y_t = torch.from_numpy(v), torch.from_numpy(a), torch.from_numpy(y)
    for _ in range(cfg.epochs):
        order = torch.from_numpy(rng.permutation(len(y)))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss = cross_entropy(model(v_t[idx], a_t[idx]), y_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def evaluate_baseline(model: BaselineModel, seqs: Sequence[FeatureSequence], radius: int = 18) -> dict:
    v, a, y = frame_table(seqs, radius)
    with torch.no_grad():
        pred = model(torch.from_numpy(v), torch.from_numpy(a)).argmax(-1).numpy()
    return {"accuracy": accuracy(pred, y), "f1": macro_f1(pred, y)}


def lambda_sweep(
    train_seqs: Sequence[FeatureSequence],
    val_seqs: Sequence[FeatureSequence],
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    cfg: BaselineConfig = BaselineConfig(),
) -> list[dict]:
    """Train one baseline per fusion weight and score it on the validation frames."""
    rows = []
    for lam in lambdas:
        model = train_baseline(lam, train_seqs, cfg)
        rows.append({"lambda": float(lam), **evaluate_baseline(model, val_seqs, cfg.radius)})
    return rows


def write_sweep_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "accuracy", "f1"])
        for r in rows:
            w.writerow([r["lambda"], f"{r['accuracy']:.6f}", f"{r['f1']:.6f}"])
