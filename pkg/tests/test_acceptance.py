"""Acceptance gate. Each test records one PASS/FAIL line (see the terminal summary)."""

import time
from pathlib import Path

import numpy as np
import pytest
import torch

from avfusion import cli
from avfusion.experiments import dropout_experiment, lambda_experiment, mean_rows, overfit_experiment
from avfusion.fusionnet import FusionConfig, FusionModel
from avfusion.inference import median_filter, soft_vote
from avfusion.numcore import layer_norm
from avfusion.objective import cross_entropy, focal_loss, frame_terms, uniform_weights
from avfusion.windowing import coverage_counts, filter_window, make_windows

SEEDS3 = (0, 1, 2)


def test_a1_gradient_fidelity(criterion):
    t0 = time.perf_counter()
    reports = [cli.run_grad_check(seed, window=8, coords=6, tol=1e-4) for seed in range(20)]
    worst = max(r["max_rel_error"] for r in reports)
    elapsed = time.perf_counter() - t0
    ok = all(r["passed"] for r in reports) and elapsed <= 120
    criterion("A1 gradient fidelity", ok, f"max rel err {worst:.2e} over 20 seeds in {elapsed:.0f}s")
    assert ok


def test_a2_safe_attention(criterion):
    t0 = time.perf_counter()
    g = np.random.default_rng(0)
    model = FusionModel(FusionConfig(d_v=5, d_a=3, d_model=16, layers=1, heads=4), seed=0).double()
    q, kv = torch.from_numpy(g.standard_normal((2, 7, 16))), torch.from_numpy(g.standard_normal((2, 7, 16)))
    none = torch.zeros(2, 7, dtype=torch.bool)
    identical = all(
        torch.equal(c(q, kv, none), layer_norm(q, c.norm.gain, c.norm.shift))
        for c in (model.cross_va, model.cross_av)
    )
    bad = 0
    for i in range(1000):
        W = 1 if i % 10 == 0 else int(g.integers(1, 12))
        mask = torch.from_numpy(g.random((2, W)) < g.random())
        if i % 4 == 0:
            mask[:] = False
        missing = torch.from_numpy(g.random(2) < 0.3)
        v = torch.from_numpy(g.standard_normal((2, W, 5))) * (~missing)[:, None, None]
        a = torch.from_numpy(g.standard_normal((2, W, 3)))
        model.zero_grad()
        z = model(v, a, mask, missing, train=bool(i % 2), gen=torch.Generator().manual_seed(i))
        z.sum().backward()
        finite = torch.isfinite(z).all() and all(torch.isfinite(p.grad).all() for p in model.parameters())
        bad += not bool(finite)
    elapsed = time.perf_counter() - t0
    ok = identical and bad == 0 and elapsed <= 60
    criterion("A2 safe attention", ok, f"bit-identical={identical}, non-finite patterns {bad}/1000, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_a3_fusion_benefit(criterion):
    rows = mean_rows([lambda_experiment(s) for s in SEEDS3], "lambda", ["f1"])
    f1 = {r["lambda"]: r["f1"] for r in rows}
    best_mid = max(f1[0.5], f1[0.7])
    ok = best_mid >= f1[0.0] + 0.02 and best_mid >= f1[1.0] + 0.02
    detail = " ".join(f"F1({k})={v:.3f}" for k, v in f1.items())
    criterion("A3 fusion benefit", ok, detail)
    assert ok


@pytest.mark.slow
def test_a4_modality_dropout(criterion):
    rows = mean_rows([dropout_experiment(s) for s in SEEDS3], "p", ["clean_f1", "stress_f1"])
    r0, r1 = rows
    stress_gap = r1["stress_f1"] - r0["stress_f1"]
    clean_gap = r1["clean_f1"] - r0["clean_f1"]
    ok = stress_gap >= 0.03 and clean_gap >= -0.02
    criterion("A4 modality dropout", ok, f"stress gap {stress_gap:+.3f}, clean gap {clean_gap:+.3f}")
    assert ok


def test_a5_focal_loss(criterion):
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(200, 8, generator=g, dtype=torch.float64) * 3
    y = torch.randint(0, 8, (200,), generator=g)
    fl, logp = frame_terms(logits, y, 2.0)
    ce, _ = frame_terms(logits, y, 0.0)
    ratio_err = float(((fl / ce) - (1 - logp.exp()) ** 2).abs().max())
    ce_err = abs(float(focal_loss(logits, y, uniform_weights(), gamma=0.0) - cross_entropy(logits, y)))
    ref_err = abs(float(focal_loss(logits, y, uniform_weights(), 0.0) - torch.nn.functional.cross_entropy(logits, y)))

    def grad(lg, lab):
        lg = lg.clone().requires_grad_(True)
        focal_loss(lg, lab).backward()
        return lg.grad

    extra = torch.randn(50, 8, generator=g, dtype=torch.float64)
    with_inv = grad(torch.cat([logits, extra]), torch.cat([y, torch.full((50,), -1)]))
    invisible = torch.equal(with_inv[:200], grad(logits, y)) and torch.count_nonzero(with_inv[200:]) == 0
    ok = ratio_err <= 1e-6 and max(ce_err, ref_err) <= 1e-6 and invisible
    criterion("A5 focal loss", ok, f"ratio err {ratio_err:.1e}, CE err {max(ce_err, ref_err):.1e}, -1 invisible={invisible}")
    assert ok


def _starts_oracle(T, W, S):
    if T <= W:
        return [0]
    out, s = [], 0
    while s + W <= T:
        out.append(s)
        s += S
    if out[-1] + W < T:
        out.append(T - W)
    return out


def _vote_oracle(windows, T):
    return np.stack([
        np.mean([z[t - s] for s, z, pad in windows if s <= t < s + len(z) - pad], axis=0) for t in range(T)
    ])


def _median_oracle(x, k):
    r = k // 2
    return np.array([sorted(x[min(max(i, 0), len(x) - 1)] for i in range(t - r, t + r + 1))[r] for t in range(len(x))])


def test_a6_windowing_oracles(criterion):
    g = np.random.default_rng(6)
    failures = []
    for i in range(500):
        W = int(g.integers(1, 70))
        T = [W, max(1, W - int(g.integers(1, W + 1))), int(g.integers(1, 3 * W + 5))][i % 3]
        S = int(g.integers(1, W + 1))
        k = int(g.choice([1, 3, 5, 7, 11, 15]))
        starts = make_windows(T, W, S)
        if starts != _starts_oracle(T, W, S):
            failures.append(("make_windows", T, W, S))
            continue
        cov = [sum(s <= t < s + W for s in starts) for t in range(T)]
        if coverage_counts(T, starts, W).tolist() != cov:
            failures.append(("coverage", T, W, S))
        wins = [(s, g.standard_normal((W, 8)), max(0, s + W - T)) for s in starts]
        if np.abs(soft_vote(wins, T) - _vote_oracle(wins, T)).max() > 1e-6:
            failures.append(("soft_vote", T, W, S))
        lab = g.integers(0, 8, T)
        if not np.array_equal(median_filter(lab, k), _median_oracle(lab, k)):
            failures.append(("median", T, k))
    valid = np.ones(64, bool)
    keep16 = filter_window(np.r_[np.full(16, -1), np.zeros(48, int)], valid)
    keep17 = filter_window(np.r_[np.full(17, -1), np.zeros(47, int)], valid)
    ok = not failures and keep16 and not keep17
    criterion("A6 windowing oracles", ok, f"{len(failures)} mismatches / 500 configs; 16/64 kept={keep16}, 17/64 kept={keep17}")
    assert ok


@pytest.mark.slow
def test_a7_overfit(criterion):
    t0 = time.perf_counter()
    accs = overfit_experiment(seed=0, max_epochs=30)
    elapsed = time.perf_counter() - t0
    ok = accs[-1] >= 0.99 and elapsed <= 180
    criterion("A7 overfit sanity", ok, f"train acc {accs[-1]:.3f} after {len(accs)} epoch(s), {elapsed:.0f}s")
    assert ok


def _pipeline(root: Path) -> dict:
    data, run, pred, ev = root / "data", root / "run", root / "pred", root / "eval"
    steps = [
        ["gen-synth", "--out", str(data), "--seed", "11", "--n-videos", "4", "--n-val-videos", "2",
         "--t-range", "80,120", "--label-rule", "iid", "--priors", ",".join(["0.125"] * 8)],
        ["train", "--train", str(data / "train.json"), "--val", str(data / "val.json"), "--out", str(run),
         "--epochs", "2", "--d-model", "16", "--layers", "1", "--heads", "2", "--seed", "4"],
        ["infer", "--checkpoint", str(run / "best.ckpt"), "--manifest", str(data / "val.json"), "--out", str(pred),
         "--logits"],
        ["eval", "--pred-dir", str(pred), "--manifest", str(data / "val.json"), "--out", str(ev)],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_a8_determinism(criterion, tmp_path):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    criterion("A8 determinism", ok, f"{len(a)} artifacts, {len(differing)} differ")
    assert ok
