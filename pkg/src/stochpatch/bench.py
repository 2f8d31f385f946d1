"""Wall-clock timing of masked-attention extraction at several keep rates."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .attention import (Backbone, _mix, _prefix, _resolve_mask,
                        _run_layers, extract_subset, masked_similarity, softmax_rows)
from .selection import sample_fixed
from .tensor import DescriptorMatrix, GridShape, RngSeed

DEFAULT_RATES = (1.0, 0.7, 0.5, 0.3)


@dataclass(frozen=True)
class RateTiming:
    rate: float
    kept: int
    samples_ns: tuple

    @property
    def median_ns(self) -> float:
        return float(np.median(self.samples_ns))

    @property
    def mean_ns(self) -> float:
        return float(np.mean(self.samples_ns))


def time_extraction(backbone: Backbone, X: DescriptorMatrix, rate: float, runs: int = 100,
                    warmup: int = 5, seed: int = 0, mask_kind="hard", alpha: float = 1.0,
                    workers: int | None = None) -> RateTiming:
    """Time ``extract_subset`` on a fresh fixed-count subset per run (stream = run index).

    Only the extraction is timed; warm-up runs are discarded.
    """
    samples = []
    kept = 0
    for run in range(warmup + runs):
        sel = sample_fixed(X.n, rate, RngSeed(seed, run))
        kept = len(sel)
        t0 = time.perf_counter_ns()
        extract_subset(backbone, X, sel.indices, mask_kind, alpha, X.shape, workers)
        dt = time.perf_counter_ns() - t0
        if run >= warmup:
            samples.append(dt)
    return RateTiming(rate, kept, tuple(samples))


def layer_breakdown(backbone: Backbone, X: DescriptorMatrix, rate: float, runs: int = 10,
                    seed: int = 0, mask_kind="hard", alpha: float = 1.0) -> dict:
    """Per-stage timing of one extraction: the shared plain prefix (layers before
    the masked one, computed once per frame), the masked layer and the remaining
    plain layers (both summed over kept patches). Returns stage -> samples_ns."""
    out = {"prefix": [], "masked_layer": [], "post_layers": []}
    for run in range(runs):
        sel = sample_fixed(X.n, rate, RngSeed(seed, run))
        t0 = time.perf_counter_ns()
        pre = _prefix(backbone, X.data)
        out["prefix"].append(time.perf_counter_ns() - t0)
        masked = post = 0
        for j in sel.indices:
            mask = _resolve_mask(int(j), mask_kind, X.shape, alpha)
            t0 = time.perf_counter_ns()
            A = softmax_rows(masked_similarity(pre.G, mask, backbone.r_sup))
            H = _mix(backbone, A, pre.V, pre.H)
            t1 = time.perf_counter_ns()
            _run_layers(backbone, H, backbone.masked_layer + 1, backbone.layers)
            t2 = time.perf_counter_ns()
            masked += t1 - t0
            post += t2 - t1
        out["masked_layer"].append(masked)
        out["post_layers"].append(post)
    return {k: tuple(v) for k, v in out.items()}


@dataclass
class BenchResult:
    timings: list

    def speedups(self) -> list:
        base = self.timings[0].median_ns
        return [base / t.median_ns for t in self.timings]

    def monotone(self) -> bool:
        """Median time strictly decreases along the (descending) rate list."""
        med = [t.median_ns for t in self.timings]
        return all(a > b for a, b in zip(med, med[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rate", "kept", "median_extraction_ns", "mean_extraction_ns", "speedup_vs_rate1"])
        for t, s in zip(self.timings, self.speedups()):
            w.writerow([t.rate, t.kept, f"{t.median_ns:.0f}", f"{t.mean_ns:.0f}", f"{s:.6f}"])
        return buf.getvalue()


def run_rate_benchmark(n: int = 256, dim: int = 64, layers: int = 4, key_dim: int | None = None,
                       masked_layer: int | None = None, rates=DEFAULT_RATES, runs: int = 100,
                       warmup: int = 5, seed: int = 0, workers: int | None = None) -> BenchResult:
    """Random token embeddings on an ``n``-patch grid through a seeded backbone."""
    rates = sorted(rates, reverse=True)
    X, bb = bench_inputs(n, dim, layers, key_dim, masked_layer, seed)
    return BenchResult([time_extraction(bb, X, r, runs, warmup, seed, workers=workers)
                        for r in rates])


def bench_inputs(n: int = 256, dim: int = 64, layers: int = 4, key_dim: int | None = None,
                 masked_layer: int | None = None, seed: int = 0):
    """The token matrix and backbone ``run_rate_benchmark`` uses."""
    shape = GridShape.for_count(n, dim)
    X = DescriptorMatrix(shape, RngSeed(seed, 1).generator().standard_normal((n, dim)))
    return X, Backbone.from_seed(dim, key_dim, layers, masked_layer, seed=RngSeed(seed, 2))
