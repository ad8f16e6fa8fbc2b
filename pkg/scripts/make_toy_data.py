"""Write a toy foreground/alpha/background set and composite it.

    python3 scripts/make_toy_data.py --out runs/toy --n-fg 4 --per-fg 2
"""
import argparse
from pathlib import Path

from attnmatte.data import compose_dataset
from attnmatte.toy import make_toy_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n-fg", type=int, default=4)
    ap.add_argument("--n-bg", type=int, default=8)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--per-fg", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    make_toy_set(args.out / "src", args.n_fg, args.n_bg, args.size, args.seed)
    src = args.out / "src"
    manifest = compose_dataset(src / "fg", src / "alpha", src / "bg", args.out / "data",
                               per_fg=args.per_fg, seed=args.seed)
    print(f"{len(manifest)} composites -> {args.out / 'data' / 'manifest.jsonl'}")


if __name__ == "__main__":
    main()
