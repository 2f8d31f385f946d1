"""Extraction time versus keep rate; prints the benchmark CSV.

    python scripts/rate_benchmark.py --runs 100 --masked-layer 2
"""
import argparse

from stochpatch.bench import DEFAULT_RATES, run_rate_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--masked-layer", type=int, default=None,
                    help="defaults to the last layer (cheapest per patch)")
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    masked = args.masked_layer if args.masked_layer is not None else args.layers
    res = run_rate_benchmark(args.n, args.d, args.layers, None, masked, DEFAULT_RATES,
                             args.runs, args.warmup, args.seed, args.workers)
    print(res.to_csv(), end="")
    print(f"# monotone: {res.monotone()}")


if __name__ == "__main__":
    main()
