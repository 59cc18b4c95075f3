import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avfusion.dataio import FeatureSequence
from avfusion.fusionnet import FusionConfig, FusionModel
from avfusion.inference import (
    CoverageError,
    majority_filter,
    median_filter,
    predict_video,
    read_predictions,
    soft_vote,
    window_logits,
    write_predictions,
)
from avfusion.windowing import collate, cut_window, make_windows


def vote_oracle(windows, T):
    out = np.zeros((T, windows[0][1].shape[1]))
    for t in range(T):
        rows = [z[t - s] for s, z, pad in windows if s <= t < s + z.shape[0] - pad]
        out[t] = np.mean(rows, axis=0)
    return out


def median_oracle(x, k):
    r = k // 2
    out = []
    for t in range(len(x)):
        vals = sorted(x[min(max(i, 0), len(x) - 1)] for i in range(t - r, t + r + 1))
        out.append(vals[r])
    return np.array(out)


def random_windows(g, T, W, S):
    out = []
    for s in make_windows(T, W, S):
        pad = max(0, s + W - T)
        out.append((s, g.standard_normal((W, 8)), pad))
    return out


def test_soft_vote_examples(rng):
    z = rng.standard_normal((64, 8))
    assert np.array_equal(soft_vote([(0, z, 0)], 64), z)
    z1, z2 = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    out = soft_vote([(0, z1, 0), (2, z2, 0)], 6)
    np.testing.assert_allclose(out[2], (z1[2] + z2[0]) / 2)
    np.testing.assert_allclose(out[0], z1[0])
    ws = random_windows(rng, 100, 64, 8)
    np.testing.assert_allclose(soft_vote(ws, 100), vote_oracle(ws, 100), atol=1e-6)


def test_soft_vote_uncovered_frame():
    with pytest.raises(CoverageError):
        soft_vote([(0, np.zeros((4, 8)), 0)], 6)


def test_soft_vote_skips_padding(rng):
    z = rng.standard_normal((64, 8))
    np.testing.assert_allclose(soft_vote([(0, z, 34)], 30), z[:30])


@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_vote_argmax_invariant_to_positive_affine(seed, a, b):
    g = np.random.default_rng(seed)
    ws = random_windows(g, 90, 32, 8)
    scaled = [(s, a * z + b, p) for s, z, p in ws]
    assert np.array_equal(soft_vote(ws, 90).argmax(1), soft_vote(scaled, 90).argmax(1))


def test_median_examples():
    assert median_filter([4] * 20).tolist() == [4] * 20
    spike = np.zeros(30, int)
    spike[14] = 3
    assert median_filter(spike, 11).tolist() == [0] * 30
    x = np.random.default_rng(0).integers(0, 8, 40)
    assert np.array_equal(median_filter(x, 1), x)
    with pytest.raises(ValueError):
        median_filter(x, 4)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=80), st.sampled_from([1, 3, 5, 7, 11, 15]))
def test_median_matches_oracle_and_keeps_alphabet(x, k):
    out = median_filter(x, k)
    assert np.array_equal(out, median_oracle(x, k))
    assert set(out.tolist()) <= set(x)


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(12, 30)), min_size=1, max_size=6))
def test_median_idempotent_on_long_segments(segments):
    x = np.concatenate([[lab] * n for lab, n in segments])
    once = median_filter(x, 11)
    assert np.array_equal(median_filter(once, 11), once)


def test_majority_filter():
    x = np.array([2, 2, 5, 2, 2, 7, 7, 7, 2])
    assert majority_filter(x, 3).tolist() == [2, 2, 2, 2, 2, 7, 7, 7, 2]


def _model(seed=0):
    return FusionModel(FusionConfig(d_v=4, d_a=3, d_model=16, layers=1, heads=2), seed=seed).eval()


def _seq(T, seed=0):
    g = np.random.default_rng(seed)
    return FeatureSequence(
        "v", g.standard_normal((T, 4)).astype(np.float32), g.standard_normal((T, 3)).astype(np.float32),
        g.integers(-1, 8, T),
    )


def test_predict_short_video():
    labels, logits = predict_video(_model(), _seq(20), 64, 8, 11)
    assert labels.shape == (20,) and logits.shape == (20, 8)


@settings(max_examples=25)
@given(st.integers(1, 150))
def test_predict_length_and_determinism(T):
    m, s = _model(), _seq(T, seed=T)
    a = predict_video(m, s, 16, 4, 5)
    b = predict_video(m, s, 16, 4, 5)
    assert a[0].shape == (T,)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_predict_composition_oracle():
    m, s = _model(3), _seq(80, seed=3)
    W, S, k = 64, 8, 5
    starts = make_windows(80, W, S)
    assert len(starts) == 3
    parts = []
    with torch.no_grad():
        for st_ in starts:
            w = cut_window(s, st_, W)
            parts.append((st_, m.forward_batch(collate([w])).double().numpy()[0], w.pad_len))
    voted = vote_oracle(parts, 80)
    expect = median_oracle(voted.argmax(1), k)
    labels, logits = predict_video(m, s, W, S, k)
    np.testing.assert_allclose(logits, voted, atol=1e-9)
    assert np.array_equal(labels, expect)


def test_predict_k1_is_raw_argmax():
    m, s = _model(), _seq(100)
    labels, logits = predict_video(m, s, 32, 8, 1)
    assert np.array_equal(labels, logits.argmax(1))


def test_dim_mismatch():
    bad = FeatureSequence("x", np.zeros((5, 2), np.float32), np.zeros((5, 3), np.float32), np.zeros(5, int))
    with pytest.raises(ValueError, match="do not match"):
        window_logits(_model(), bad, 8, 4)


def test_prediction_csv_roundtrip(tmp_path, rng):
    labels = rng.integers(0, 8, 12)
    logits = rng.standard_normal((12, 8))
    write_predictions(tmp_path / "p.csv", labels, logits)
    head = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert head == "frame,label," + ",".join(f"logit_{c}" for c in range(8))
    assert np.array_equal(read_predictions(tmp_path / "p.csv"), labels)
    write_predictions(tmp_path / "q.csv", labels)
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "frame,label"
