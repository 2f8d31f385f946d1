"""Command-line entry point: ``stochpatch {gen,extract,analyze,verify,bench,inspect}``.

Exit codes: 0 success, 1 verification failure, 2 usage or validation error.
``--seed`` falls back to the ``SPS_SEED`` environment variable, then 0.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .attention import MASK_KINDS, Backbone, extract_subset
from .errors import EmptySelectionError, StochPatchError
from .formats import matrix_csv, spectrum_csv, timing_line, write_pgm
from .lemma import CampaignData, LemmaConfig, run_campaign
from .redundancy import (NORMALIZATIONS, coherence, components_for, cosine_overlay,
                         pca_spectrum, pearson_matrix, thin_svd)
from .selection import (VARIANTS, build_position_adjusted, build_sparse, positional_table,
                        sample_fixed, sample_threshold)
from .tensor import (DescriptorMatrix, GridShape, RngSeed, center, gen_low_rank, load_tensor,
                     save_tensor, top_energy_subset)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _unit_rate(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def _open_unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {v}")
    return v


def _default_seed():
    env = os.environ.get("SPS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SPS_SEED must be an integer, got {env!r}")


def _grid(n, h, w, d) -> GridShape:
    if h is not None or w is not None:
        if h is None or w is None:
            raise UsageError("--h and --w must be given together")
        if h * w != n:
            raise UsageError(f"--h x --w = {h * w} does not equal --n = {n}")
        return GridShape(h, w, d)
    return GridShape.for_count(n, d)


def _add_backbone_flags(p):
    p.add_argument("--key-dim", type=_positive_int, default=None)
    p.add_argument("--layers", type=_positive_int, default=4)
    p.add_argument("--masked-layer", type=_positive_int, default=None)
    p.add_argument("--r-sup", type=float, default=-1e4)
    p.add_argument("--backbone-seed", type=_nonneg_int, default=None,
                   help="defaults to --seed")
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--scale-logits", action="store_true")
    p.add_argument("--mask", choices=MASK_KINDS + ("ones",), default="hard")
    p.add_argument("--alpha", type=float, default=1.0, help="cutoff for the hard mask")


def _backbone(args, dim) -> Backbone:
    if args.r_sup >= 0:
        raise UsageError("--r-sup must be negative")
    if args.masked_layer is not None and args.masked_layer > args.layers:
        raise UsageError("--masked-layer must not exceed --layers")
    seed = args.seed if args.backbone_seed is None else args.backbone_seed
    return Backbone.from_seed(dim, args.key_dim, args.layers, args.masked_layer,
                              seed=RngSeed(seed, 1), r_sup=args.r_sup,
                              residual=not args.no_residual, scale_logits=args.scale_logits)


def cmd_gen(args) -> int:
    shape = _grid(args.n, args.h, args.w, args.d)
    if args.rank > min(shape.n, shape.dim):
        raise UsageError(f"--rank must be <= min(n, d) = {min(shape.n, shape.dim)}")
    F = gen_low_rank(shape, args.rank, args.noise, args.mode, args.spiky_rows,
                     RngSeed(args.seed, 0))
    save_tensor(args.out, F)
    svd = thin_svd(F.data)
    mu = coherence(svd.truncate(args.rank).U).mu
    print(f"wrote {args.out}: grid {shape.h_patches}x{shape.w_patches} N={shape.n} "
          f"D={shape.dim} rank={args.rank} numerical_rank={svd.rank} mu={mu:.6f}")
    return EXIT_OK


def _check_shape(F: DescriptorMatrix, args):
    for flag, got in (("h", F.shape.h_patches), ("w", F.shape.w_patches), ("d", F.shape.dim)):
        want = getattr(args, flag)
        if want is not None and want != got:
            raise UsageError(f"--{flag} {want} does not match the input file ({got})")


def cmd_extract(args) -> int:
    X = load_tensor(args.input)
    _check_shape(X, args)
    bb = _backbone(args, X.dim)
    n = X.n
    seed = RngSeed(args.seed, args.frame)
    variant = args.variant

    if variant == "mspps":
        sel = sample_threshold(n, args.rate, seed)
        if len(sel) == 0:
            raise EmptySelectionError("threshold sampling kept no patches")
    else:
        sel = sample_fixed(n, args.rate, seed)

    samples = []
    rows = None
    for _ in range(args.timing_runs):
        t0 = time.perf_counter_ns()
        rows = extract_subset(bb, X, sel.indices, args.mask, args.alpha, X.shape, args.workers)
        samples.append(time.perf_counter_ns() - t0)
    print(timing_line("extract", samples, kept=len(sel), n=n))

    if variant == "sps":
        out = build_sparse(rows, sel, X.shape).as_matrix()
    else:
        seq = build_position_adjusted(rows, sel, positional_table(n, bb.dim), args.combine)
        tokens = seq.tokens()
        out = DescriptorMatrix(GridShape(1, len(seq), tokens.shape[1]), tokens)
    save_tensor(args.out, out)
    if args.indices_out:
        Path(args.indices_out).write_text(sel.to_csv())
    if args.inspect:
        _print_inspect(out)
    return EXIT_OK


def _print_inspect(F: DescriptorMatrix):
    zero = int(np.count_nonzero(~F.data.any(axis=1)))
    print(json.dumps({"h": F.shape.h_patches, "w": F.shape.w_patches, "d": F.dim,
                      "n": F.n, "zero_rows": zero}))


def cmd_inspect(args) -> int:
    _print_inspect(load_tensor(args.input))
    return EXIT_OK


def cmd_analyze(args) -> int:
    F = load_tensor(args.input)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in args.seed_patch:
        if not 0 <= i < F.n:
            raise UsageError(f"--seed-patch {i} out of range [0, {F.n})")
    if args.top_energy is not None and not 1 <= args.top_energy <= F.n:
        raise UsageError(f"--top-energy must be in [1, {F.n}]")

    Fc, _ = center(F)
    rep = pca_spectrum(Fc, args.normalization)
    (out / "spectrum.csv").write_text(spectrum_csv(rep))
    print(f"spectrum: rank={rep.rank} components_for({args.tau})={components_for(rep, args.tau)}")

    R, undefined = pearson_matrix(F)
    (out / "correlation.csv").write_text(matrix_csv(R))
    if undefined.any():
        print(f"correlation undefined for {int(undefined.sum())} constant rows")

    for i in args.seed_patch:
        M = cosine_overlay(F, i, F.shape, args.upsample, args.upsample_method)
        (out / f"overlay_{i}.pgm").write_bytes(write_pgm(M))

    if args.top_energy is not None:
        idx = top_energy_subset(F, args.top_energy)
        (out / "top_energy.csv").write_text("index\n" + "".join(f"{i}\n" for i in idx))
        sub = DescriptorMatrix.from_array(F.data[idx])
        top = pca_spectrum(sub, args.normalization)
        (out / "spectrum_top.csv").write_text(spectrum_csv(top))
        print(f"top-energy {len(idx)} patches: components_for({args.tau})="
              f"{components_for(top, args.tau)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = LemmaConfig(epsilon=args.epsilon, delta=args.delta, constant=args.C,
                      trials=args.trials, rank_tol=args.rank_tol, seed=args.seed, m=args.m)
    data = CampaignData(args.n, args.d, args.rank, args.noise, args.mode, args.spiky_rows)
    if args.rank > min(args.n, args.d):
        raise UsageError("--rank must be <= min(n, d)")
    if args.m is not None and not args.rank <= args.m <= args.n:
        raise UsageError(f"--m must be in [rank, n] = [{args.rank}, {args.n}]")
    rep = run_campaign(cfg, data)
    if args.out:
        Path(args.out).write_text(rep.to_csv())
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_bench(args) -> int:
    masked = args.masked_layer if args.masked_layer is not None else args.layers
    if masked > args.layers:
        raise UsageError("--masked-layer must not exceed --layers")
    res = bench_mod.run_rate_benchmark(args.n, args.d, args.layers, args.key_dim, masked,
                                       args.rates, args.runs, args.warmup, args.seed,
                                       args.workers)
    text = res.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    for t in res.timings:
        print(timing_line(f"extract@{t.rate}", t.samples_ns, kept=t.kept,
                          workers=args.workers or 1))
    if args.breakdown:
        X, bb = bench_mod.bench_inputs(args.n, args.d, args.layers, args.key_dim, masked, args.seed)
        for rate in sorted(args.rates, reverse=True):
            stages = bench_mod.layer_breakdown(bb, X, rate, args.breakdown, args.seed)
            for stage, samples in stages.items():
                print(timing_line(stage, samples, rate=rate, masked_layer=masked))
    if not res.monotone():
        print("speedup is not strictly increasing as the rate decreases", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochpatch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=_nonneg_int, default=None)
        return sp

    g = add("gen", cmd_gen, "write a synthetic low-rank descriptor tensor")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--d", type=_positive_int, required=True)
    g.add_argument("--h", type=_positive_int, default=None)
    g.add_argument("--w", type=_positive_int, default=None)
    g.add_argument("--rank", type=_positive_int, required=True)
    g.add_argument("--mode", choices=("spread", "spiky"), default="spread")
    g.add_argument("--spiky-rows", type=_positive_int, default=None)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("-o", "--out", default="gen.spst")

    e = add("extract", cmd_extract, "masked-attention descriptors for a (sub)set of patches")
    e.add_argument("input")
    e.add_argument("-o", "--out", default="descriptors.spst")
    e.add_argument("--h", type=_positive_int, default=None)
    e.add_argument("--w", type=_positive_int, default=None)
    e.add_argument("--d", type=_positive_int, default=None)
    e.add_argument("--rate", type=_unit_rate, default=1.0)
    e.add_argument("--variant", choices=VARIANTS, default="sps")
    e.add_argument("--combine", choices=("add", "concat"), default="add")
    e.add_argument("--frame", type=_nonneg_int, default=0, help="stream id for this frame")
    e.add_argument("--timing-runs", type=_positive_int, default=1)
    e.add_argument("--workers", type=_positive_int, default=None)
    e.add_argument("--indices-out", default=None)
    e.add_argument("--inspect", action="store_true", help="print shape and zero-row count")
    _add_backbone_flags(e)

    a = add("analyze", cmd_analyze, "PCA spectrum, correlation and overlays")
    a.add_argument("input")
    a.add_argument("--out-dir", default="analysis")
    a.add_argument("--normalization", choices=NORMALIZATIONS, default="over_N")
    a.add_argument("--tau", type=_unit_rate, default=0.9)
    a.add_argument("--seed-patch", type=int, action="append", default=[])
    a.add_argument("--upsample", type=_positive_int, default=1)
    a.add_argument("--upsample-method", choices=("nearest", "bilinear"), default="nearest")
    a.add_argument("--top-energy", type=int, default=None)

    v = add("verify", cmd_verify, "Monte Carlo row-sampling subspace campaign")
    v.add_argument("--n", type=_positive_int, default=512)
    v.add_argument("--d", type=_positive_int, default=64)
    v.add_argument("--rank", type=_positive_int, default=8)
    v.add_argument("--mode", choices=("spread", "spiky"), default="spread")
    v.add_argument("--spiky-rows", type=_positive_int, default=None)
    v.add_argument("--noise", type=float, default=0.0)
    v.add_argument("--epsilon", type=_open_unit, default=0.25)
    v.add_argument("--delta", type=_open_unit, default=0.05)
    v.add_argument("--C", type=float, default=8.0)
    v.add_argument("--trials", type=_positive_int, default=200)
    v.add_argument("--m", type=_positive_int, default=None, help="override the bound")
    v.add_argument("--rank-tol", type=float, default=1e-9)
    v.add_argument("-o", "--out", default=None, help="per-trial CSV")

    b = add("bench", cmd_bench, "extraction time against keep rate")
    b.add_argument("--n", type=_positive_int, default=256)
    b.add_argument("--d", type=_positive_int, default=64)
    b.add_argument("--layers", type=_positive_int, default=4)
    b.add_argument("--key-dim", type=_positive_int, default=None)
    b.add_argument("--masked-layer", type=_positive_int, default=None,
                   help="defaults to the last layer")
    b.add_argument("--rates", type=_unit_rate, nargs="+", default=list(bench_mod.DEFAULT_RATES))
    b.add_argument("--runs", type=_positive_int, default=100)
    b.add_argument("--warmup", type=_nonneg_int, default=5)
    b.add_argument("--workers", type=_positive_int, default=None)
    b.add_argument("--breakdown", type=_nonneg_int, default=0, metavar="RUNS",
                   help="also time prefix / masked layer / later layers over RUNS runs per rate")
    b.add_argument("-o", "--out", default=None)

    i = add("inspect", cmd_inspect, "print shape and zero-row count of an SPST file")
    i.add_argument("input")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except (UsageError, StochPatchError) as exc:
        print(f"stochpatch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"stochpatch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
