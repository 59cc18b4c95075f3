"""(p, d_model, layers) grid on the robustness synthetic set; writes ablation.csv."""

import argparse
import tempfile
from pathlib import Path

from avfusion.dataio import generate_synthetic, load_manifest
from avfusion.experiments import robustness_spec
from avfusion.fusionnet import FusionConfig
from avfusion.trainer import TrainConfig, ablation_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--p", type=float, nargs="+", default=[0.0, 0.1, 0.2])
    ap.add_argument("--d", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--l", type=int, nargs="+", default=[1, 2])
    args = ap.parse_args()
    spec = robustness_spec()
    with tempfile.TemporaryDirectory() as root:
        m = generate_synthetic(spec, args.seed, root)
        train = load_manifest(m["train"], spec.d_v, spec.d_a)
        val = load_manifest(m["val"], spec.d_v, spec.d_a)
    rows = ablation_grid(
        TrainConfig(epochs=args.epochs, S=16, seed=args.seed),
        FusionConfig(spec.d_v, spec.d_a),
        {"p": args.p, "d_model": args.d, "l": args.l},
        train,
        val,
        out_csv=Path(args.out),
    )
    for r in rows:
        print(f"p={r.p:<4} d={r.d:<4} l={r.l}  acc={r.accuracy:.3f}  f1={r.f1:.3f}")


if __name__ == "__main__":
    main()
