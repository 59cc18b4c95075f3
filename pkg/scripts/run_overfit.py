"""Check that the fusion model can memorise a noise-free separable set."""

import argparse

from avfusion.experiments import overfit_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-epochs", type=int, default=30)
    args = ap.parse_args()
    for epoch, acc in enumerate(overfit_experiment(args.seed, args.max_epochs), start=1):
        print(f"epoch {epoch:2d}  train acc {acc:.4f}")


if __name__ == "__main__":
    main()
