"""Seeded mini-batch training of the fusion model and the (p, d, l) ablation driver."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint
from .dataio import FeatureSequence
from .fusionnet import FusionConfig, FusionModel, modality_dropout
from .inference import predict_video
from .metrics import accuracy, macro_f1
from .objective import ClassWeights, effective_number_weights, focal_loss
from .windowing import WindowSample, collate, dataset_windows

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint_path=None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    seed: int = 0
    p: float | None = None  # visual dropout; None -> FusionConfig.p
    gamma: float = 2.0
    beta: float = 0.999
    W: int = 64
    S: int = 8
    eval_every: int = 1
    grad_clip: float | None = 1.0
    schedule: str = "none"  # "none" | "cosine"
    filter_threshold: float = 0.25
    median_k: int = 11
    smooth_zero_counts: bool = False

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "W", "S", "eval_every", "median_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.schedule not in ("none", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")


@dataclass
class FitResult:
    model: FusionModel
    best_model: FusionModel
    log: list[dict]
    best_epoch: int
    weights: ClassWeights
    checkpoint_path: Path | None = None


def class_counts(windows: Sequence[WindowSample], n_classes: int = 8) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    for w in windows:
        lab = w.labels[w.frame_valid]
        counts += np.bincount(lab, minlength=n_classes)
    return counts


def evaluate(model, seqs: Sequence[FeatureSequence], W: int, S: int, k: int) -> dict:
    preds, golds = [], []
    for seq in seqs:
        lab, _ = predict_video(model, seq, W, S, k)
        preds.append(lab)
        golds.append(seq.labels)
    pred, gold = np.concatenate(preds), np.concatenate(golds)
    return {"val_acc": accuracy(pred, gold), "val_f1": macro_f1(pred, gold)}


def evaluate_windows(model, windows: Sequence[WindowSample], batch_size: int = 64) -> dict:
    """Frame metrics of per-window predictions (no voting or smoothing)."""
    preds, golds = [], []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            b = collate(windows[i : i + batch_size])
            z = model.forward_batch(b, train=False)
            preds.append(z.argmax(-1).numpy()[b["frame_mask"]])
            golds.append(b["labels"][b["frame_mask"]])
    pred, gold = np.concatenate(preds), np.concatenate(golds)
    return {"accuracy": accuracy(pred, gold), "f1": macro_f1(pred, gold)}


def _snapshot(model: FusionModel) -> FusionModel:
    copy = FusionModel(model.cfg)
    copy.load_state_dict(model.state_dict())
    copy.eval()
    return copy


def fit(
    train_cfg: TrainConfig,
    model_cfg: FusionConfig,
    train_seqs: Sequence[FeatureSequence],
    val_seqs: Sequence[FeatureSequence] = (),
    out_dir=None,
    on_epoch=None,
) -> FitResult:
    """Train a fusion model; keeps the checkpoint with the best validation macro-F1.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one JSON object per epoch)
    and ``best.ckpt`` there. ``on_epoch(epoch, model)`` runs after every epoch
    and stops training early by returning True.
    """
    train_cfg.validate()
    p = model_cfg.p if train_cfg.p is None else train_cfg.p
    model_cfg = replace(model_cfg, p=p)
    torch.manual_seed(train_cfg.seed)
    windows = dataset_windows(train_seqs, train_cfg.W, train_cfg.S, train_cfg.filter_threshold)
    if not windows:
        raise ValueError("no training windows survive filtering")
    counts = class_counts(windows, model_cfg.n_classes)
    if train_cfg.smooth_zero_counts:
        counts = np.maximum(counts, 1)
    weights = effective_number_weights(counts, train_cfg.beta)

    model = FusionModel(model_cfg, seed=train_cfg.seed)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=tuple(train_cfg.betas),
        weight_decay=train_cfg.weight_decay,
    )
    steps_per_epoch = math.ceil(len(windows) / train_cfg.batch_size)
    sched = None
    if train_cfg.schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=train_cfg.epochs * steps_per_epoch)

    rng = np.random.default_rng(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        log_path.write_text("", encoding="utf-8")
        ckpt_path = out / "best.ckpt"
    else:
        ckpt_path = None

    history: list[dict] = []
    best_f1, best_epoch, best = -1.0, 0, _snapshot(model)
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(windows))
        total, n_batches = 0.0, 0
        for i in range(0, len(order), train_cfg.batch_size):
            batch = collate([windows[j] for j in order[i : i + train_cfg.batch_size]])
            batch = modality_dropout(batch, p, rng, train=True)
            labels = np.where(batch["frame_valid"], batch["labels"], -1)
            if not (labels != -1).any():
                continue
            logits = model.forward_batch(batch, train=True, gen=gen)
            loss = focal_loss(logits, labels, weights, train_cfg.gamma)
            if not torch.isfinite(loss):
                if ckpt_path is not None:
                    checkpoint.save_fusion(ckpt_path, best, {"epoch": best_epoch})
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}; last good epoch {best_epoch}",
                    ckpt_path,
                )
            opt.zero_grad()
            loss.backward()
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            if sched is not None:
                sched.step()
            total += float(loss.detach())
            n_batches += 1
        model.eval()
        row = {"epoch": epoch, "train_loss": total / max(n_batches, 1)}
        if val_seqs and (epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs):
            row.update(evaluate(model, val_seqs, train_cfg.W, train_cfg.S, train_cfg.median_k))
            if row["val_f1"] > best_f1:
                best_f1, best_epoch, best = row["val_f1"], epoch, _snapshot(model)
        elif not val_seqs:
            best_epoch, best = epoch, _snapshot(model)
        history.append(row)
        log.info("epoch %d %s", epoch, row)
        if out is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        if on_epoch is not None and on_epoch(epoch, model):
            break
    if ckpt_path is not None:
        checkpoint.save_fusion(ckpt_path, best, {"epoch": best_epoch})
    return FitResult(model, best, history, best_epoch, weights, ckpt_path)


@dataclass
class AblationRow:
    p: float
    d: int
    l: int
    accuracy: float
    f1: float
    error: str | None = None


def ablation_grid(
    train_cfg: TrainConfig,
    model_cfg: FusionConfig,
    axes: dict[str, Sequence],
    train_seqs: Sequence[FeatureSequence],
    val_seqs: Sequence[FeatureSequence],
    out_csv=None,
) -> list[AblationRow]:
    """Train every (p, d_model, layers) combination with the shared seed.

    Scores are the best-epoch validation accuracy and macro-F1. A failing cell
    is logged and reported with NaN scores; the rest of the grid still runs.
    """
    ps, ds, ls = (list(axes.get(k) or []) for k in ("p", "d_model", "l"))
    if not (ps and ds and ls):
        raise ValueError("every ablation axis needs at least one value")
    rows = []
    for p, d, l in itertools.product(ps, ds, ls):
        try:
            cfg = replace(model_cfg, p=p, d_model=d, layers=l, ff_dim=4 * d, head_hidden=d)
            res = fit(replace(train_cfg, p=p), cfg, train_seqs, val_seqs)
            best = max((r for r in res.log if "val_f1" in r), key=lambda r: r["val_f1"])
            rows.append(AblationRow(p, d, l, best["val_acc"], best["val_f1"]))
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.warning("ablation cell p=%s d=%s l=%s failed: %s", p, d, l, exc)
            rows.append(AblationRow(p, d, l, float("nan"), float("nan"), str(exc)))
    if out_csv is not None:
        write_ablation_csv(out_csv, rows)
    return rows


def write_ablation_csv(path, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "d", "l", "accuracy", "f1"])
        for r in rows:
            w.writerow([r.p, r.d, r.l, f"{r.accuracy:.6f}", f"{r.f1:.6f}"])
