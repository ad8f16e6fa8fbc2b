"""Command line entry point: ``compose``, ``train``, ``infer``, ``eval``, ``trimap``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import yaml

from . import imaging
from .data import compose_dataset
from .train import TrainConfig, evaluate_dataset, infer, train


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        if f.name == "model":
            parser.add_argument(*flags, dest=f.name, type=json.loads, default=None,
                                help="backbone config as a JSON object (merged over the file's)")
        elif f.name in ("crop_sizes", "weights_first_epoch", "weights_later_epochs"):
            kind = int if f.name == "crop_sizes" else float
            parser.add_argument(*flags, dest=f.name, type=kind, nargs="+", default=None)
        else:
            kind = type(f.default)
            parser.add_argument(*flags, dest=f.name, type=kind, default=None)


def load_config(path, overrides: dict) -> TrainConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "model":
            data["model"] = {**data.get("model", {}), **value}
        else:
            data[key] = value
    return TrainConfig.from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnmatte", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="composite foregrounds over backgrounds")
    p.add_argument("--fg", required=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--bg", required=True)
    p.add_argument("--per-fg", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("--config", default=None, help="YAML/JSON file with TrainConfig fields")
    _add_config_flags(p)

    p = sub.add_parser("infer", help="predict an alpha matte for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--pred-dir", default=None)

    p = sub.add_parser("trimap", help="trimap from an alpha matte")
    p.add_argument("--alpha", required=True)
    p.add_argument("--radius", type=int, required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    if args.command == "compose":
        manifest = compose_dataset(args.fg, args.alpha, args.bg, args.out,
                                   per_fg=args.per_fg, seed=args.seed)
        print(f"wrote {len(manifest)} composites to {args.out}")
    elif args.command == "train":
        overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)}
        config = load_config(args.config, overrides)
        state = train(config)
        last = state.history[-1]
        print(f"{state.iteration} iterations, final total loss {last['total']:.6f}")
        for path in state.checkpoints[-1:]:
            print(f"checkpoint: {path}")
    elif args.command == "infer":
        infer(args.ckpt, args.image, args.out)
    elif args.command == "eval":
        report = evaluate_dataset(args.ckpt, args.manifest, pred_dir=args.pred_dir)
        report.save(args.report)
        print(report.table())
    elif args.command == "trimap":
        alpha = imaging.read_alpha(args.alpha)
        imaging.write_trimap(args.out, imaging.generate_trimap(alpha, args.radius))
    return 0


if __name__ == "__main__":
    sys.exit(main())
