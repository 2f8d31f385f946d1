"""Sweep the sample count m below the sampling bound and report pass fractions.

With default settings the bound exceeds N, so the acceptance campaign samples
every row. This sweep shows where sampling actually starts to fail, for spread
and spiky (high-coherence) data.

    python scripts/lemma_campaign.py --n 512 --rank 8 --trials 200
"""
import argparse

from stochpatch.lemma import CampaignData, LemmaConfig, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--rank", type=int, default=8)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--epsilon", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ms = sorted({m for m in (args.rank, 2 * args.rank, 4 * args.rank, 8 * args.rank,
                             args.n // 4, args.n // 2, args.n) if args.rank <= m <= args.n})
    print("mode,mu,m,pass_fraction,rank_preserved_fraction,max_distance_preserved")
    for mode in ("spread", "spiky"):
        data = CampaignData(args.n, args.d, args.rank, 0.0, mode)
        for m in ms:
            cfg = LemmaConfig(epsilon=args.epsilon, trials=args.trials, seed=args.seed, m=m)
            rep = run_campaign(cfg, data)
            kept = [t for t in rep.trials if t.rank_preserved]
            dist = max((t.projector_distance for t in kept), default=float("nan"))
            print(f"{mode},{rep.mu:.4f},{m},{rep.pass_fraction:.3f},"
                  f"{len(kept) / len(rep.trials):.3f},{dist:.2e}")


if __name__ == "__main__":
    main()
