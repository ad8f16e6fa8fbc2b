"""Unknown-band area as a function of erosion radius for one matte."""
import argparse

import numpy as np

from attnmatte.imaging import UNKNOWN, generate_trimap, read_alpha


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("alpha")
    ap.add_argument("--radii", type=int, nargs="+", default=[1, 5, 10, 15, 20, 25])
    args = ap.parse_args()

    alpha = read_alpha(args.alpha)
    band = np.count_nonzero((alpha > 0) & (alpha < 1))
    print(f"transition pixels: {band}")
    for r in args.radii:
        unknown = np.count_nonzero(generate_trimap(alpha, r) == UNKNOWN)
        print(f"radius {r:3d}: unknown {unknown:7d} ({unknown / alpha.size:.1%})")


if __name__ == "__main__":
    main()
