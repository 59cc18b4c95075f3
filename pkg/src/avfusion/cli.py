"""Command-line entry point: ``avfusion <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .baseline import BaselineConfig, lambda_sweep, write_sweep_csv
from .dataio import SynthSpec, SynthSpecError, generate_synthetic, load_manifest, read_manifest, read_matrix
from .dataio import _resolve
from .fusionnet import FusionConfig, FusionModel
from .inference import predict_video, read_predictions, write_predictions
from .metrics import report
from .numcore import GradCheckError, param_grad_check
from .objective import effective_number_weights, focal_loss
from .trainer import TrainConfig, ablation_grid, fit

log = logging.getLogger("avfusion")


class UsageError(ValueError):
    pass


TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
MODEL_KEYS = {f.name for f in fields(FusionConfig)} - {"p"}
PATH_KEYS = {"train", "val", "out"}
RUN_KEYS = TRAIN_KEYS | MODEL_KEYS | PATH_KEYS

# flag dest -> config key
FLAG_KEYS = {
    "window": "W",
    "stride": "S",
    "median_k": "median_k",
    "p": "p",
    "d_model": "d_model",
    "layers": "layers",
    "heads": "heads",
    "gamma": "gamma",
    "beta": "beta",
    "seed": "seed",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "train": "train",
    "val": "val",
    "out": "out",
}


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def load_run_config(args) -> dict:
    """Config file values overlaid with any flags given on the command line."""
    cfg: dict = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    for dest, key in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _dims_from_manifest(path) -> tuple[int, int]:
    entry = read_manifest(path)[0]
    return read_matrix(_resolve(entry, "visual_path")).shape[1], read_matrix(_resolve(entry, "audio_path")).shape[1]


def build_configs(cfg: dict) -> tuple[TrainConfig, FusionConfig]:
    if "train" not in cfg:
        raise UsageError("a training manifest is required (--train or config key 'train')")
    if "d_v" not in cfg or "d_a" not in cfg:
        d_v, d_a = _dims_from_manifest(cfg["train"])
        cfg.setdefault("d_v", d_v)
        cfg.setdefault("d_a", d_a)
    tkw = {k: v for k, v in cfg.items() if k in TRAIN_KEYS}
    if "betas" in tkw:
        tkw["betas"] = tuple(tkw["betas"])
    mkw = {k: v for k, v in cfg.items() if k in MODEL_KEYS}
    if "p" in cfg:
        mkw["p"] = cfg["p"]
    try:
        tcfg = TrainConfig(**tkw)
        tcfg.validate()
        mcfg = FusionConfig(**mkw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return tcfg, mcfg


# --------------------------------------------------------------------------- commands


def cmd_gen_synth(args) -> int:
    spec_d = {}
    if args.config:
        spec_d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "n_videos": args.n_videos,
        "n_val_videos": args.n_val_videos,
        "d_v": args.d_v,
        "d_a": args.d_a,
        "class_priors": args.priors,
        "missing_rate": args.missing_rate,
        "noise_v": args.noise_v,
        "noise_a": args.noise_a,
        "blackout_rate": args.blackout_rate,
        "label_rule": args.label_rule,
    }
    if args.t_range:
        overrides["T_range"] = args.t_range
    spec_d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        spec = SynthSpec.from_dict(spec_d)
        spec.validate()
    except (SynthSpecError, TypeError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from exc
    manifests = generate_synthetic(spec, args.seed, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    if "out" not in cfg:
        raise UsageError("--out is required")
    tcfg, mcfg = build_configs(cfg)
    train = load_manifest(cfg["train"], mcfg.d_v, mcfg.d_a)
    val = load_manifest(cfg["val"], mcfg.d_v, mcfg.d_a) if cfg.get("val") else []
    res = fit(tcfg, mcfg, train, val, out_dir=cfg["out"])
    print(f"best epoch {res.best_epoch}; checkpoint {res.checkpoint_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args)
    if "out" not in cfg or not cfg.get("val"):
        raise UsageError("--out and a validation manifest are required")
    tcfg, mcfg = build_configs(cfg)
    train = load_manifest(cfg["train"], mcfg.d_v, mcfg.d_a)
    val = load_manifest(cfg["val"], mcfg.d_v, mcfg.d_a)
    axes = {
        "p": args.p_grid or [mcfg.p],
        "d_model": args.d or [mcfg.d_model],
        "l": args.l or [mcfg.layers],
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_grid(tcfg, mcfg, axes, train, val, out_csv=out / "ablation.csv")
    for r in rows:
        print(f"p={r.p} d={r.d} l={r.l} acc={r.accuracy:.4f} f1={r.f1:.4f}")
    return 1 if all(r.error for r in rows) else 0


def cmd_infer(args) -> int:
    model = checkpoint.load_fusion(args.checkpoint)
    seqs = load_manifest(args.manifest, model.cfg.d_v, model.cfg.d_a)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        labels, logits = predict_video(model, seq, args.window, args.stride, args.median_k, args.smoother)
        write_predictions(out / f"{seq.video_id}.csv", labels, logits if args.logits else None)
    print(f"wrote {len(seqs)} prediction file(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    entries = read_manifest(args.manifest)
    from .dataio import read_labels

    preds, golds = [], []
    for e in entries:
        gold = read_labels(_resolve(e, "labels_path"))
        pred = read_predictions(Path(args.pred_dir) / f"{e['video_id']}.csv")
        if len(pred) != len(gold):
            raise RuntimeError(f"{e['video_id']}: {len(pred)} predictions for {len(gold)} frames")
        preds.append(pred)
        golds.append(gold)
    rep = report(np.concatenate(preds), np.concatenate(golds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"accuracy {rep['accuracy']:.4f} macro-F1 {rep['macro_f1']:.4f} over {rep['valid_frames']} frames")
    return 0


def cmd_baseline(args) -> int:
    dims = _dims_from_manifest(args.train)
    train = load_manifest(args.train, *dims)
    val = load_manifest(args.val, *dims)
    bcfg = BaselineConfig(seed=args.seed if args.seed is not None else 0, epochs=args.epochs)
    rows = lambda_sweep(train, val, args.lambdas, bcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "lambda_sweep.csv", rows)
    for r in rows:
        print(f"lambda={r['lambda']} acc={r['accuracy']:.4f} f1={r['f1']:.4f}")
    return 0


def gradcheck_setup(seed: int, window: int = 8, d_model: int = 32, layers: int = 2):
    """Double-precision model, one random window and its loss closure."""
    rng = np.random.default_rng(seed)
    cfg = FusionConfig(d_v=6, d_a=4, d_model=d_model, layers=layers, heads=4)
    model = FusionModel(cfg, seed=seed).double()
    v = torch.from_numpy(rng.standard_normal((1, window, cfg.d_v)))
    a = torch.from_numpy(rng.standard_normal((1, window, cfg.d_a)))
    y = torch.from_numpy(rng.integers(0, cfg.n_classes, (1, window)))
    w = effective_number_weights(rng.integers(1, 100, cfg.n_classes), 0.99)

    def loss_fn():
        return focal_loss(model(v, a), y, w)

    return model, loss_fn


def run_grad_check(seed: int, window: int, coords: int | None, tol: float, step: float = 1e-4) -> dict:
    model, loss_fn = gradcheck_setup(seed, window)
    params = dict(model.named_parameters())
    gen = torch.Generator().manual_seed(seed)
    try:
        per = param_grad_check(loss_fn, params, step=step, coords_per_param=coords, generator=gen)
    except GradCheckError as exc:
        return {"seed": seed, "passed": False, "max_rel_error": None, "worst_param": exc.name, "detail": str(exc)}
    worst = max(per, key=per.get)
    return {
        "seed": seed,
        "passed": per[worst] <= tol,
        "max_rel_error": per[worst],
        "worst_param": worst,
        "failing": sorted(k for k, v in per.items() if v > tol),
    }


def cmd_grad_check(args) -> int:
    rep = run_grad_check(args.seed, args.window, args.coords or None, args.tol)
    text = json.dumps(rep, indent=1, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grad_check.json").write_text(text + "\n", encoding="utf-8")
    if not rep["passed"]:
        print(f"FAIL: gradient mismatch in {rep['worst_param']}", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------- parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--train", help="training manifest")
    p.add_argument("--val", help="validation manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--median-k", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a seeded synthetic train/val dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="JSON object of generator fields")
    g.add_argument("--priors", type=_floats)
    g.add_argument("--n-videos", type=int)
    g.add_argument("--n-val-videos", type=int)
    g.add_argument("--t-range", type=_ints)
    g.add_argument("--d-v", type=int)
    g.add_argument("--d-a", type=int)
    g.add_argument("--missing-rate", type=float)
    g.add_argument("--noise-v", type=float)
    g.add_argument("--noise-a", type=float)
    g.add_argument("--blackout-rate", type=float)
    g.add_argument("--label-rule", choices=["segments", "iid"])
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train the fusion model")
    _add_run_flags(t)
    t.add_argument("--p", type=float, help="visual modality-dropout probability")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="grid over dropout p, width d and depth l")
    _add_run_flags(a)
    a.add_argument("--p", dest="p_grid", type=_floats, help="comma-separated p values")
    a.add_argument("--d", type=_ints, help="comma-separated d_model values")
    a.add_argument("--l", type=_ints, help="comma-separated layer counts")
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("infer", help="windowed soft-voting prediction per video")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--manifest", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--window", type=int, default=64)
    i.add_argument("--stride", type=int, default=8)
    i.add_argument("--median-k", type=int, default=11)
    i.add_argument("--smoother", choices=["median", "majority", "none"], default="median")
    i.add_argument("--logits", action="store_true", help="also write the voted logits")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score prediction CSVs against manifest labels")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="frame-level two-stream MLP lambda sweep")
    b.add_argument("--train", required=True)
    b.add_argument("--val", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--lambda", dest="lambdas", type=_floats, default=[0.0, 0.5, 0.7, 1.0])
    b.add_argument("--seed", type=int)
    b.add_argument("--epochs", type=int, default=8)
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("grad-check", help="finite-difference check of full-model gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--window", type=int, default=4)
    c.add_argument("--coords", type=int, default=8, help="coordinates sampled per tensor (0 = all)")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--out", help="optional directory for grad_check.json")
    c.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"avfusion {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        log.debug("failure", exc_info=True)
        print(f"avfusion {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
