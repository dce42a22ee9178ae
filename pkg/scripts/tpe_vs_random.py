"""Paired comparison of TPE and random search on the synthetic lr/wd surrogate.

    python3 scripts/tpe_vs_random.py --reps 20 --trials 30 --noise-std 0.1
"""

import argparse

import numpy as np

from rasterforge.iterate.surrogates import (
    LR_WD_SPACE,
    UNIT_SPACE,
    compare_with_random,
    lr_wd_surrogate,
    shifted_square,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--noise-std", type=float, default=0.1)
    args = ap.parse_args()

    cmp = compare_with_random(lambda s: lr_wd_surrogate(args.noise_std, s), LR_WD_SPACE, args.trials, args.reps)
    print(f"lr/wd surrogate (noise std {args.noise_std}): TPE <= random in {cmp.wins}/{cmp.reps}")
    print(f"  median best  TPE {np.median(cmp.tpe_best):.4g}  random {np.median(cmp.random_best):.4g}")

    cmp = compare_with_random(lambda s: shifted_square, UNIT_SPACE, args.trials, args.reps)
    print(f"(x - 0.3)^2 on [0, 1]: TPE <= random in {cmp.wins}/{cmp.reps}")
    print(f"  median best  TPE {np.median(cmp.tpe_best):.3g}  random {np.median(cmp.random_best):.3g}")


if __name__ == "__main__":
    main()
