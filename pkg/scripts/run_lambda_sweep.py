"""Baseline lambda sweep on the confusable-audio synthetic set, averaged over seeds."""

import argparse
import json

from avfusion.experiments import lambda_experiment, mean_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=8)
    args = ap.parse_args()
    per_seed = [lambda_experiment(s, epochs=args.epochs) for s in args.seeds]
    for s, rows in zip(args.seeds, per_seed):
        print(f"seed {s}: " + "  ".join(f"{r['lambda']}:{r['f1']:.3f}" for r in rows))
    print(json.dumps(mean_rows(per_seed, "lambda", ["accuracy", "f1"]), indent=1))


if __name__ == "__main__":
    main()
