"""Fusion models with and without visual modality dropout, scored on clean and blacked-out windows."""

import argparse
import json

from avfusion.experiments import dropout_experiment, mean_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--p", type=float, nargs="+", default=[0.0, 0.1])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--stress", type=float, default=0.3, help="fraction of windows with vision zeroed")
    args = ap.parse_args()
    per_seed = []
    for s in args.seeds:
        rows = dropout_experiment(s, tuple(args.p), args.epochs, args.stress)
        per_seed.append(rows)
        print(f"seed {s}: {rows}")
    print(json.dumps(mean_rows(per_seed, "p", ["clean_f1", "stress_f1"]), indent=1))


if __name__ == "__main__":
    main()
