import json

import numpy as np

from stochpatch.bench import bench_inputs, layer_breakdown, run_rate_benchmark, time_extraction
from stochpatch.cli import main


def test_rate_benchmark_structure():
    res = run_rate_benchmark(n=36, dim=8, layers=2, masked_layer=2, rates=(0.5, 1.0), runs=2,
                             warmup=0)
    assert [t.rate for t in res.timings] == [1.0, 0.5]
    assert [t.kept for t in res.timings] == [36, 18]
    assert res.speedups()[0] == 1.0
    assert all(len(t.samples_ns) == 2 and min(t.samples_ns) > 0 for t in res.timings)
    assert res.to_csv().splitlines()[0] == \
        "rate,kept,median_extraction_ns,mean_extraction_ns,speedup_vs_rate1"


def test_bench_inputs_match_benchmark_seed():
    X1, bb1 = bench_inputs(16, 4, 2, seed=3)
    X2, bb2 = bench_inputs(16, 4, 2, seed=3)
    assert X1 == X2
    assert np.array_equal(bb1.w_q[0], bb2.w_q[0])


def test_layer_breakdown_stages():
    X, bb = bench_inputs(25, 8, 3, masked_layer=2)
    stages = layer_breakdown(bb, X, 0.4, runs=3)
    assert set(stages) == {"prefix", "masked_layer", "post_layers"}
    assert all(len(v) == 3 and min(v) > 0 for v in stages.values())
    # with the last layer masked there is nothing after it to time
    X, bb = bench_inputs(25, 8, 3, masked_layer=3)
    assert time_extraction(bb, X, 1.0, runs=1, warmup=0).kept == 25


def test_cli_breakdown_lines(capsys):
    code = main(["bench", "--n", "16", "--d", "4", "--layers", "2", "--runs", "2",
                 "--warmup", "0", "--rates", "1.0", "--breakdown", "1"])
    assert code == 0  # a single rate is trivially monotone
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()
               if line.startswith("{")]
    assert [r["component"] for r in records] == ["extract@1.0", "prefix", "masked_layer",
                                                 "post_layers"]
