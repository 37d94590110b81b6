"""Command line front end: train a prior network and export its weights."""

from __future__ import annotations

import argparse
import json
import sys

from .data import list_images, load_image
from .model import export_weights, parameter_counts
from .spec import load_spec
from .train import evaluate_mse, train_prior


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sasc-train",
        description="Train an external prior network for the sasc restoration tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a network and write a weight file")
    train.add_argument("--spec", required=True, help="JSON training spec")
    train.add_argument("--data", default=None,
                       help="directory of .pgm/.f32 images (overrides the spec)")
    train.add_argument("--out", required=True, help="output weight file")
    return parser


def run_train(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    data_dir = args.data if args.data is not None else spec.data_dir
    if data_dir is None:
        raise ValueError("no data directory: pass --data or set data_dir in the spec")
    paths = list_images(data_dir)
    images = [load_image(p) for p in paths]

    model, losses = train_prior(spec, images)
    export_weights(model, args.out)
    before, after = evaluate_mse(model, spec, images, spec.seed + 1)
    taps, biases = parameter_counts(model)

    log = {
        "spec_sha256": spec.spec_sha256,
        "seed": spec.seed,
        "degradation": spec.degradation,
        "sigma": spec.sigma,
        "epochs": spec.epochs,
        "images": len(images),
        "tap_count": taps,
        "bias_count": biases,
        "losses": losses,
        "validation_input_mse": before,
        "validation_output_mse": after,
        "weights": args.out,
    }
    with open(args.out + ".train.json", "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2)
        fh.write("\n")

    final = losses[-1] if losses else float("nan")
    print(f"trained {len(losses)} epoch(s) on {len(images)} image(s), "
          f"final loss {final:.6g}")
    print(f"validation mse {before:.6g} -> {after:.6g}")
    print(f"weights written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return run_train(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
