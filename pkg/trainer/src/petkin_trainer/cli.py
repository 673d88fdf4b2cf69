"""Console entry point: train, infer, and forward-model parity."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .infer import infer
from .model import DiscriminatorConfig, GeneratorConfig
from .parity import forward_parity
from .train import TrainConfig, train


def _load_train_config(path):
    obj = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    gcfg = GeneratorConfig(**obj.get("generator", {}))
    dcfg = DiscriminatorConfig(**obj.get("discriminator", {}))
    tcfg = TrainConfig(**obj.get("train", {}))
    return gcfg, dcfg, tcfg


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="petkin-trainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a directory of phantom samples")
    p.add_argument("--data", required=True, help="directory of sample subdirectories")
    p.add_argument("--config", default=None, help="JSON with generator/discriminator/train sections")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="map a dynamic volume to parameter maps + AIF")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("parity", help="compare the differentiable forward model to the engine")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--out", required=True, help="report JSON path")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "train":
        gcfg, dcfg, tcfg = _load_train_config(args.config)
        ckpt, losses = train(args.data, gcfg, dcfg, tcfg, args.out)
        print(f"wrote {ckpt} and {losses}")
        return 0
    if args.command == "infer":
        infer(args.checkpoint, args.image, args.out)
        print(f"wrote {args.out}")
        return 0
    report = forward_parity(n_random=args.cases, seed=args.seed, dt=args.dt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"max abs diff: {report['max_abs_diff']:.3e} (scaled AIF: {report['max_abs_diff_scaled_aif']:.3e})")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
