"""Overfit a handful of toy composites and report training-set SAD.

    python3 scripts/overfit_smoke.py --work runs/smoke --iterations 200
"""
import argparse
import json
import math
import time
from pathlib import Path

import torch

from attnmatte.toy import overfit_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--n-fg", type=int, default=4)
    ap.add_argument("--batch-size", type=int, default=2)
    ap.add_argument("--out-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    torch.set_num_threads(args.threads)
    start = time.perf_counter()
    result = overfit_run(args.work, iterations=args.iterations, n_fg=args.n_fg,
                         batch_size=args.batch_size, out_size=args.out_size, seed=args.seed)
    finite = all(math.isfinite(r[k]) for r in result["history"]
                 for k in ("adv", "mse", "ssim", "sentry", "total", "disc"))
    summary = {
        "iterations": len(result["history"]),
        "sad_initial": result["sad_initial"],
        "sad_final": result["sad_final"],
        "ratio": result["sad_final"] / result["sad_initial"],
        "all_finite": finite,
        "seconds": round(time.perf_counter() - start, 1),
        "checkpoint": result["checkpoint"],
    }
    (args.work / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
