import math
import statistics
import time

import numpy as np
import pytest

from stochpatch.attention import (Backbone, attention_weights, build_mask, extract_all,
                                  extract_patch_descriptor, extract_subset, forward,
                                  forward_plain, grid_distance, masked_layer_attention,
                                  masked_similarity, softmax_rows, unit_mask)
from stochpatch.errors import ParameterError
from stochpatch.tensor import DescriptorMatrix, GridShape, RngSeed


def tokens(n=16, d=8, seed=0):
    shape = GridShape.for_count(n, d)
    return DescriptorMatrix(shape, RngSeed(seed, 9).generator().standard_normal((n, d)))


def naive_softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = math.fsum(e)
    return [v / s for v in e]


def naive_descriptor(bb, X, j, weights):
    """Loop-level reference of masked extraction, sharing no code with the library."""
    H = [list(r) for r in X]
    n = len(H)

    def layer(H, k, mask=None):
        Wq, Wk, Wv = bb.w_q[k].tolist(), bb.w_k[k].tolist(), bb.w_v[k].tolist()
        mat = lambda A, B: [[math.fsum(a * B[t][c] for t, a in enumerate(row))
                             for c in range(len(B[0]))] for row in A]
        Q, K, V = mat(H, Wq), mat(H, Wk), mat(H, Wv)
        out = []
        for a in range(n):
            logits = [math.fsum(Q[a][t] * K[i][t] for t in range(len(Q[a]))) for i in range(n)]
            if bb.scale_logits:
                logits = [g / math.sqrt(bb.key_dim) for g in logits]
            if mask is not None:
                logits = [g + (1 - mask[i]) * bb.r_sup for i, g in enumerate(logits)]
            p = naive_softmax(logits)
            y = [math.fsum(p[i] * V[i][c] for i in range(n)) for c in range(len(V[0]))]
            if bb.residual:
                y = [y[c] + H[a][c] for c in range(len(y))]
            out.append(y)
        return out

    for k in range(bb.layers):
        H = layer(H, k, weights if k == bb.masked_layer - 1 else None)
    return np.array(H[j])


def test_grid_distance():
    s = GridShape(3, 4, 1)
    assert grid_distance(5, 5, s) == 0
    assert grid_distance(5, 6, s) == 1
    assert grid_distance(5, 1, s) == 1  # vertical neighbour
    assert grid_distance(0, 5, s) == pytest.approx(math.sqrt(2), abs=1e-12)
    with pytest.raises(ParameterError):
        grid_distance(12, 0, s)


def test_mask_hard_zero_is_indicator():
    m = build_mask(5, "hard", GridShape(3, 4, 1), alpha=0.0)
    expected = np.zeros(12)
    expected[5] = 1
    assert np.array_equal(m.weights, expected)


def test_mask_hard_radius():
    m = build_mask(5, "hard", GridShape(3, 4, 1), alpha=1.0)
    assert set(np.flatnonzero(m.weights)) == {1, 4, 5, 6, 9}


def test_mask_exp2_and_inverse_values():
    s = GridShape(1, 5, 1)
    e = build_mask(0, "exp2", s)
    assert e.weights[1] == 0.5 and e.weights[0] == 1.0
    inv = build_mask(0, "inverse", s)
    assert inv.weights[2] == 0.5 and inv.weights[0] == 1.0 and inv.weights[1] == 1.0
    for kind in ("exp2", "inverse"):
        w = build_mask(7, kind, GridShape(4, 4, 1)).weights
        assert w[7] == 1.0 and np.all((w >= 0) & (w <= 1))


def test_mask_unknown_kind():
    with pytest.raises(ParameterError):
        build_mask(0, "gauss", GridShape(2, 2, 1))


def test_masked_similarity_examples():
    G = np.array([[3.0, 2.0]])
    assert np.array_equal(masked_similarity(G, np.ones(2), -1e4), G)
    assert masked_similarity(G, np.array([0.0, 1.0]), -1e4)[0, 0] == -9997.0
    assert masked_similarity(G, np.array([1.0, 0.5]), -10.0)[0, 1] == -3.0
    with pytest.raises(ParameterError):
        masked_similarity(G, np.ones(2), 0.0)


def test_mask_replicated_over_rows():
    G = np.zeros((3, 3))
    out = masked_similarity(G, np.array([1.0, 0.0, 0.25]), -4.0)
    assert np.array_equal(out, np.tile([0.0, -4.0, -3.0], (3, 1)))


def test_backbone_validation():
    with pytest.raises(ParameterError):
        Backbone.from_seed(4, layers=2, masked_layer=3)
    with pytest.raises(ParameterError):
        Backbone.from_seed(4, layers=2, r_sup=0.0)
    bb = Backbone.from_seed(4, 3, layers=2)
    assert bb.w_q[0].shape == (4, 3) and bb.w_v[1].shape == (4, 4)


def test_forward_single_token():
    bb = Backbone.from_seed(4, layers=1, seed=2)
    X = np.array([[1.0, -2.0, 0.5, 3.0]])
    Y = forward(bb, X)
    np.testing.assert_allclose(Y, X @ bb.w_v[0] + X, rtol=1e-15)


def test_forward_identical_tokens_identical_outputs():
    bb = Backbone.from_seed(6, layers=3, seed=4)
    X = tokens(5, 6).data.copy()
    X[3] = X[1]
    Y = forward(bb, X)
    np.testing.assert_array_equal(Y[1], Y[3])


def test_forward_plain_returns_layer_inputs():
    bb = Backbone.from_seed(8, layers=3, seed=1)
    X = tokens(16, 8)
    H, Q, K, V = forward_plain(bb, X, 1)
    assert np.array_equal(H, X.data)
    np.testing.assert_array_equal(Q, X.data @ bb.w_q[0])
    H3, *_ = forward_plain(bb, X, 3)
    assert H3.shape == (16, 8)


def test_attention_rows_are_stochastic():
    bb = Backbone.from_seed(8, layers=2, seed=7)
    X = tokens(4, 8, seed=3)
    A = attention_weights(bb, X, 2)
    H, Q, K, _ = forward_plain(bb, X, 2)
    for a in range(4):
        ref = naive_softmax([float(Q[a] @ K[i]) for i in range(4)])
        np.testing.assert_allclose(A[a], ref, rtol=1e-12)
        assert abs(math.fsum(A[a]) - 1) <= 1e-12


def test_softmax_rows_handle_large_negatives():
    A = softmax_rows(np.array([[0.0, -1e4, 5.0], [-1e4, -1e4, -1e4]]))
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-15)
    assert A[0, 1] == 0.0


@pytest.mark.parametrize("kind,alpha", [("hard", 1.0), ("exp2", 0.0), ("inverse", 0.0)])
def test_extract_matches_naive_reference(kind, alpha):
    bb = Backbone.from_seed(6, 4, layers=3, masked_layer=2, seed=5, r_sup=-20.0)
    X = tokens(9, 6, seed=2)
    for j in (0, 4, 8):
        m = build_mask(j, kind, X.shape, alpha)
        ref = naive_descriptor(bb, X.data.tolist(), j, m.weights.tolist())
        got = extract_patch_descriptor(bb, X, j, kind, alpha)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_extract_scaled_logits_and_no_residual_reference():
    bb = Backbone.from_seed(6, 4, layers=2, masked_layer=1, seed=8, residual=False,
                            scale_logits=True)
    X = tokens(6, 6, seed=4)
    m = build_mask(2, "exp2", X.shape)
    ref = naive_descriptor(bb, X.data.tolist(), 2, m.weights.tolist())
    np.testing.assert_allclose(extract_patch_descriptor(bb, X, 2, "exp2"), ref, rtol=1e-10)


def test_hard_zero_mask_suppresses_off_seed():
    bb = Backbone.from_seed(16, layers=3, masked_layer=2, seed=3)
    X = tokens(16, 16)
    A = masked_layer_attention(bb, X, 6, "hard", 0.0)
    off = np.delete(A, 6, axis=1)
    assert off.max() < 1e-12
    np.testing.assert_allclose(A[:, 6], 1.0, atol=1e-12)


def test_unit_mask_equals_plain_forward_bitwise():
    bb = Backbone.from_seed(8, layers=4, masked_layer=2, seed=12)
    X = tokens(16, 8)
    full = forward(bb, X)
    for j in range(16):
        assert np.array_equal(extract_patch_descriptor(bb, X, j, "ones"), full[j])
        assert np.array_equal(extract_patch_descriptor(bb, X, j, unit_mask(j, X.shape)), full[j])


def test_extract_deterministic():
    bb1 = Backbone.from_seed(8, layers=2, seed=RngSeed(4, 1))
    bb2 = Backbone.from_seed(8, layers=2, seed=RngSeed(4, 1))
    X = tokens(16, 8)
    a = extract_patch_descriptor(bb1, X, 5, "exp2")
    b = extract_patch_descriptor(bb2, X, 5, "exp2")
    assert a.tobytes() == b.tobytes()


def test_extract_subset_matches_single_patch():
    bb = Backbone.from_seed(8, layers=3, seed=6)
    X = tokens(16, 8)
    idx = [1, 5, 9, 14]
    rows = extract_subset(bb, X, idx, "hard", 1.0)
    for k, j in enumerate(idx):
        assert np.array_equal(rows[k], extract_patch_descriptor(bb, X, j, "hard", 1.0))
    single = extract_subset(bb, X, [5], "hard", 1.0)
    assert np.array_equal(single[0], extract_patch_descriptor(bb, X, 5, "hard", 1.0))


def test_extract_subset_all_equals_full_and_is_schedule_independent():
    bb = Backbone.from_seed(8, layers=2, seed=6)
    X = tokens(16, 8)
    full = extract_all(bb, X, "inverse")
    serial = extract_subset(bb, X, np.arange(16), "inverse")
    threaded = extract_subset(bb, X, np.arange(16), "inverse", workers=4)
    assert np.array_equal(full.data, serial)
    assert np.array_equal(serial, threaded)


def test_extract_subset_errors():
    bb = Backbone.from_seed(8, layers=2, seed=6)
    X = tokens(16, 8)
    with pytest.raises(ParameterError):
        extract_subset(bb, X, [])
    with pytest.raises(ParameterError):
        extract_subset(bb, X, [16])
    with pytest.raises(ParameterError):
        forward(bb, np.full((2, 8), np.inf))


def test_extract_cost_grows_with_subset_size():
    n, d = 256, 64
    X = DescriptorMatrix(GridShape(16, 16, d), RngSeed(0, 1).generator().standard_normal((n, d)))
    bb = Backbone.from_seed(d, layers=4, masked_layer=4, seed=1)
    half, full = np.arange(0, n, 2), np.arange(n)

    def median_time(idx):
        ts = []
        for _ in range(20):
            t0 = time.perf_counter()
            extract_subset(bb, X, idx, "hard", 1.0)
            ts.append(time.perf_counter() - t0)
        return statistics.median(ts)

    extract_subset(bb, X, half, "hard", 1.0)
    assert median_time(half) < median_time(full)
