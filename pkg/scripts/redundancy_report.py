"""Redundancy of extracted descriptors: spectrum, E(m) and how much a random
half of the patches keeps.

    python scripts/redundancy_report.py --h 16 --w 16 --d 64 --rank 12
"""
import argparse

import numpy as np

from stochpatch.attention import Backbone, extract_all
from stochpatch.redundancy import components_for, explained_variance, pca_spectrum, pearson_matrix
from stochpatch.selection import sample_fixed
from stochpatch.tensor import DescriptorMatrix, GridShape, RngSeed, gen_low_rank


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=int, default=16)
    ap.add_argument("--w", type=int, default=16)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--rank", type=int, default=12, help="rank of the synthetic token field")
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    shape = GridShape(args.h, args.w, args.d)
    X = gen_low_rank(shape, args.rank, args.noise, seed=RngSeed(args.seed, 0))
    bb = Backbone.from_seed(args.d, layers=args.layers, masked_layer=args.layers,
                            seed=RngSeed(args.seed, 1))
    F = extract_all(bb, X, "hard", args.alpha)
    full = pca_spectrum(F)
    print(f"descriptors: N={F.n} D={F.dim} numerical rank={full.rank}")
    for m in (1, 2, 4, 8, 16):
        if m <= full.rank:
            print(f"  E({m}) = {explained_variance(full, m):.4f}")
    for tau in (0.8, 0.9, 0.95, 0.99):
        print(f"  components for {tau:.2f}: {components_for(full, tau)}")
    R, undefined = pearson_matrix(F)
    off = R[~np.eye(F.n, dtype=bool)]
    print(f"  mean |pearson| between patches: {np.nanmean(np.abs(off)):.4f} "
          f"({int(undefined.sum())} constant rows)")

    sel = sample_fixed(F.n, 0.5, RngSeed(args.seed, 2))
    half = pca_spectrum(DescriptorMatrix.from_array(F.data[sel.indices]))
    print(f"random half ({len(sel)} patches): numerical rank={half.rank}, "
          f"components for 0.90: {components_for(half, 0.9)}")


if __name__ == "__main__":
    main()
