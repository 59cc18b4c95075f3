"""Desk-scale synthetic experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baseline import BaselineConfig, lambda_sweep
from .dataio import SynthSpec, generate_synthetic, load_manifest
from .fusionnet import FusionConfig
from .trainer import TrainConfig, evaluate_windows, fit
from .windowing import blackout, dataset_windows

PRIORS = (0.25, 0.2, 0.15, 0.1, 0.1, 0.08, 0.07, 0.05)


def confusable_audio_spec() -> SynthSpec:
    """Vision-dominant data; audio cannot tell classes 0 and 1 apart."""
    return SynthSpec(n_videos=24, n_val_videos=8, d_v=16, d_a=8, noise_v=1.5, noise_a=8.0, class_priors=PRIORS)


def robustness_spec() -> SynthSpec:
    """Like :func:`confusable_audio_spec` with audio informative enough to fall back on."""
    return replace(confusable_audio_spec(), noise_a=4.0)


def separable_spec(n_windows: int = 50) -> SynthSpec:
    """Noise-free data with one 64-frame video per window."""
    return SynthSpec(
        n_videos=n_windows,
        n_val_videos=0,
        T_range=(64, 64),
        d_v=16,
        d_a=8,
        noise_v=0.0,
        noise_a=0.0,
        missing_rate=0.0,
        class_priors=(0.125,) * 8,
        segment_range=(8, 24),
    )


def _load(spec: SynthSpec, seed: int, root):
    m = generate_synthetic(spec, seed, root)
    train = load_manifest(m["train"], spec.d_v, spec.d_a)
    val = load_manifest(m["val"], spec.d_v, spec.d_a) if spec.n_val_videos else []
    return train, val


def lambda_experiment(seed: int, lambdas=(0.0, 0.5, 0.7, 1.0), epochs: int = 8, workdir=None) -> list[dict]:
    with tempfile.TemporaryDirectory(dir=workdir) as root:
        train, val = _load(confusable_audio_spec(), seed, Path(root))
    return lambda_sweep(train, val, lambdas, BaselineConfig(epochs=epochs, seed=seed))


def dropout_experiment(
    seed: int,
    ps=(0.0, 0.1),
    epochs: int = 8,
    stress_fraction: float = 0.3,
    d_model: int = 64,
    layers: int = 2,
    workdir=None,
) -> list[dict]:
    """Train one model per ``p`` and score clean and visually-blacked-out validation windows."""
    spec = robustness_spec()
    with tempfile.TemporaryDirectory(dir=workdir) as root:
        train, val = _load(spec, seed, Path(root))
    clean = dataset_windows(val, 64, 64, threshold=None)
    stressed = blackout(clean, stress_fraction, seed)
    rows = []
    for p in ps:
        res = fit(
            TrainConfig(epochs=epochs, S=16, seed=seed, p=p),
            FusionConfig(spec.d_v, spec.d_a, d_model=d_model, layers=layers),
            train,
            val,
        )
        rows.append(
            {
                "p": p,
                "clean_f1": evaluate_windows(res.best_model, clean)["f1"],
                "stress_f1": evaluate_windows(res.best_model, stressed)["f1"],
            }
        )
    return rows


def overfit_experiment(seed: int = 0, max_epochs: int = 30, workdir=None) -> list[float]:
    """Training-window accuracy after each epoch on noise-free data; stops at 0.99."""
    spec = separable_spec()
    with tempfile.TemporaryDirectory(dir=workdir) as root:
        train, _ = _load(spec, seed, Path(root))
    windows = dataset_windows(train, 64, 8, 0.25)
    accs: list[float] = []

    def track(epoch, model):
        accs.append(evaluate_windows(model, windows)["accuracy"])
        return accs[-1] >= 0.99

    fit(
        TrainConfig(epochs=max_epochs, batch_size=8, seed=seed),
        FusionConfig(spec.d_v, spec.d_a, d_model=64, layers=2),
        train,
        on_epoch=track,
    )
    return accs


def mean_rows(per_seed: list[list[dict]], key: str, fields) -> list[dict]:
    """Average ``fields`` over seeds, matching rows on ``key``."""
    out = []
    for i, row in enumerate(per_seed[0]):
        avg = {key: row[key]}
        for f in fields:
            avg[f] = float(np.mean([rows[i][f] for rows in per_seed]))
        out.append(avg)
    return out
