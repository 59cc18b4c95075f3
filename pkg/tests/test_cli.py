import json
from pathlib import Path

import numpy as np
import pytest

from avfusion import cli
from avfusion.dataio import read_labels, read_manifest

SMALL = ["--n-videos", "3", "--n-val-videos", "2", "--t-range", "70,90", "--d-v", "6", "--d-a", "4",
         "--label-rule", "iid", "--priors", ",".join(["0.125"] * 8)]


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert cli.main(["gen-synth", "--out", str(root), "--seed", "3", *SMALL]) == 0
    return root


@pytest.fixture(scope="module")
def run(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = {"train": str(data / "train.json"), "val": str(data / "val.json"), "out": str(out),
           "epochs": 2, "batch_size": 8, "d_model": 16, "layers": 1, "heads": 2, "S": 16}
    (out / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--config", str(out / "cfg.json")]) == 0
    return out


def test_gen_synth_byte_identical(data, tmp_path):
    assert cli.main(["gen-synth", "--out", str(tmp_path), "--seed", "3", *SMALL]) == 0
    assert tree_bytes(tmp_path) == tree_bytes(data)


def test_gen_synth_requires_out():
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen-synth"])
    assert exc.value.code == 2


def test_gen_synth_bad_priors(tmp_path, capsys):
    code = cli.main(["gen-synth", "--out", str(tmp_path), "--priors", "0.5,0.5,0.5,0,0,0,0,0"])
    assert code == 2
    assert "class_priors" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, data, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"train": str(data / "train.json"), "lr_typo": 1}))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2
    assert "lr_typo" in capsys.readouterr().err


def test_train_outputs(run):
    assert (run / "best.ckpt").stat().st_size > 0
    rows = [json.loads(x) for x in (run / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]


def test_train_rerun_identical(run, tmp_path):
    cfg = json.loads((run / "cfg.json").read_text())
    cfg["out"] = str(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    for name in ("best.ckpt", "metrics.jsonl"):
        assert (tmp_path / name).read_bytes() == (run / name).read_bytes()


def test_infer_then_eval(run, data, tmp_path):
    pred = tmp_path / "pred"
    assert cli.main(["infer", "--checkpoint", str(run / "best.ckpt"), "--manifest", str(data / "val.json"),
                     "--out", str(pred)]) == 0
    assert cli.main(["eval", "--pred-dir", str(pred), "--manifest", str(data / "val.json"),
                     "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev/metrics.json").read_text())
    entries = read_manifest(data / "val.json")
    n_valid = sum(int((read_labels(Path(e["_root"]) / e["labels_path"]) != -1).sum()) for e in entries)
    assert rep["valid_frames"] == n_valid
    assert set(rep) == {"accuracy", "macro_f1", "per_class_f1", "confusion", "valid_frames"}


def test_infer_k1_is_raw_argmax(run, data, tmp_path):
    assert cli.main(["infer", "--checkpoint", str(run / "best.ckpt"), "--manifest", str(data / "val.json"),
                     "--out", str(tmp_path), "--median-k", "1", "--logits"]) == 0
    for f in tmp_path.glob("*.csv"):
        tab = np.loadtxt(f, delimiter=",", skiprows=1)
        assert np.array_equal(tab[:, 1], tab[:, 2:].argmax(1))


def test_infer_defaults():
    args = cli.build_parser().parse_args(["infer", "--checkpoint", "c", "--manifest", "m", "--out", "o"])
    assert (args.window, args.stride, args.median_k) == (64, 8, 11)


def test_ablate_grid(data, tmp_path):
    base = ["ablate", "--train", str(data / "train.json"), "--val", str(data / "val.json"), "--epochs", "1",
            "--stride", "32", "--p", "0.0,0.1", "--d", "16", "--l", "1", "--heads", "2"]
    assert cli.main([*base, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*base, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a/ablation.csv").read_text()
    assert a == (tmp_path / "b/ablation.csv").read_text()
    assert len(a.splitlines()) == 3


def test_baseline_command(data, tmp_path):
    assert cli.main(["baseline", "--train", str(data / "train.json"), "--val", str(data / "val.json"),
                     "--out", str(tmp_path), "--lambda", "0,1", "--epochs", "1"]) == 0
    assert (tmp_path / "lambda_sweep.csv").read_text().splitlines()[0] == "lambda,accuracy,f1"


def test_grad_check_passes_and_is_reproducible(tmp_path):
    assert cli.main(["grad-check", "--seed", "1", "--coords", "3", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["grad-check", "--seed", "1", "--coords", "3", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/grad_check.json").read_bytes() == (tmp_path / "b/grad_check.json").read_bytes()


def test_grad_check_catches_corrupted_backward(monkeypatch, capsys):
    real = cli.gradcheck_setup

    def corrupted(seed, window=8, **kw):
        model, loss_fn = real(seed, window, **kw)
        model.head.fc1.weight.register_hook(lambda g: g * 1.01)
        return model, loss_fn

    monkeypatch.setattr(cli, "gradcheck_setup", corrupted)
    assert cli.main(["grad-check", "--seed", "0", "--coords", "3"]) == 1
    captured = capsys.readouterr()
    assert "head.fc1.weight" in captured.err
    assert json.loads(captured.out)["failing"] == ["head.fc1.weight"]


def test_runtime_failure_exit_code(tmp_path):
    assert cli.main(["infer", "--checkpoint", str(tmp_path / "missing.ckpt"), "--manifest", "x",
                     "--out", str(tmp_path)]) == 1
