"""Command line entry point: train a denoiser from a dataset CSV and write
the weight file, training curve, and golden vectors next to it."""

import argparse
import os
import sys

from .format import read_msdw
from .train import (TrainConfig, train, write_curve_csv, export_goldens,
                    default_probes)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="msd-train",
        description="Train the small MLP toy denoiser on a dataset CSV")
    p.add_argument("dataset", help="dataset CSV (header x,y,label)")
    p.add_argument("--out", default="model.msdw", help="output weight file")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden-layers", type=int, default=3)
    p.add_argument("--hidden-width", type=int, default=128)
    p.add_argument("--fourier-features", type=int, default=16)
    p.add_argument("--num-classes", type=int, default=0)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if not os.path.exists(args.dataset):
        print(f"missing dataset: {args.dataset}", file=sys.stderr)
        return 4
    cfg = TrainConfig(dataset_csv=args.dataset, out_weights=args.out,
                      hidden_layers=args.hidden_layers,
                      hidden_width=args.hidden_width,
                      fourier_features=args.fourier_features,
                      num_classes=args.num_classes, sigma_min=args.sigma_min,
                      sigma_max=args.sigma_max, batch_size=args.batch_size,
                      steps=args.steps, lr=args.lr, seed=args.seed)
    try:
        result = train(cfg)
    except RuntimeError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return 3
    base, _ = os.path.splitext(args.out)
    write_curve_csv(base + "_curve.csv", result.curve)
    dims, weights, biases, emb = read_msdw(args.out)
    export_goldens(base + "_goldens.csv", weights, biases, emb,
                   default_probes(emb))
    print(f"final loss {result.final_loss:.3e}; wrote {args.out}, "
          f"{base}_curve.csv, {base}_goldens.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
