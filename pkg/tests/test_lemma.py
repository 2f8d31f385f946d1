import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochpatch.errors import BudgetExceededError, ContractError, ParameterError
from stochpatch.lemma import (CampaignData, LemmaConfig, SamplerMatrix, clip_to_unit_ball,
                              covariance_scale_check, expected_sampled_gram, lipschitz_check,
                              power_spectral_norm, projector_distance, run_campaign, run_trial,
                              sample_complexity, sampling_bound, sandwich_check,
                              second_moment_exhaustive)
from stochpatch.redundancy import row_projector, thin_svd
from stochpatch.tensor import GridShape, RngSeed, center, gen_low_rank


def line_projector(theta):
    v = np.array([[math.cos(theta)], [math.sin(theta)]])
    return v @ v.T


def test_sampling_bound_examples():
    assert sampling_bound(1, 1, 1.0, 1 / math.e, 1) == 1
    assert sampling_bound(2, 4, 0.5, 0.04, 1) == 148
    assert sample_complexity(2, 4, 0.5, 0.04, 1) == pytest.approx(147.36, abs=0.01)
    a = sample_complexity(1.5, 3, 0.3, 0.1, 2)
    assert sample_complexity(3.0, 3, 0.3, 0.1, 2) == pytest.approx(2 * a, rel=1e-15)


@pytest.mark.parametrize("args", [(0.5, 1, 0.5, 0.1), (1, 0, 0.5, 0.1), (1, 1, 0, 0.1),
                                  (1, 1, 1.5, 0.1), (1, 1, 0.5, 1.0), (1, 1, 0.5, 0.1, 0)])
def test_sampling_bound_rejects(args):
    with pytest.raises(ParameterError):
        sampling_bound(*args)


def test_projector_distance_examples():
    P = line_projector(0.3)
    assert projector_distance(P, P) == 0.0
    assert projector_distance(line_projector(0), line_projector(math.pi / 2)) == pytest.approx(1.0, abs=1e-15)
    A, B = line_projector(0), line_projector(math.pi / 6)
    # oracle: top singular value of the explicit 2x2 difference via its characteristic polynomial
    D = A - B
    M = D.T @ D
    tr, det = np.trace(M), np.linalg.det(M)
    # both singular values equal sin(theta), so the discriminant is ~0
    top = math.sqrt((tr + math.sqrt(max(tr * tr - 4 * det, 0.0))) / 2)
    assert top == pytest.approx(0.5, abs=1e-12)
    assert projector_distance(A, B) == pytest.approx(top, abs=1e-12)


def test_projector_distance_contract():
    with pytest.raises(ContractError):
        projector_distance(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_projector_distance_range_and_power_iteration(seed, ra, rb):
    rng = np.random.default_rng(seed)
    Pa = row_projector(np.linalg.qr(rng.standard_normal((6, ra)))[0])
    Pb = row_projector(np.linalg.qr(rng.standard_normal((6, rb)))[0])
    d = projector_distance(Pa, Pb)
    assert -1e-9 <= d <= 1 + 1e-9
    if ra != rb:
        assert d == pytest.approx(1.0, abs=1e-9)
    assert power_spectral_norm(Pa - Pb, tol=1e-13) == pytest.approx(d, abs=1e-6)


def centered_low_rank(n, d, r, mode="spread", seed=0, noise=0.0, h=None):
    shape = GridShape(h, n // h, d) if h else GridShape.for_count(n, d)
    return center(gen_low_rank(shape, r, noise, mode, seed=seed))[0]


def test_trial_full_sample_is_exact():
    F = centered_low_rank(64, 12, 4, seed=1)
    rep = run_trial(F, 64, 0)
    assert rep.projector_distance <= 1e-12
    assert abs(rep.sandwich_min - 1) <= 1e-12 and abs(rep.sandwich_max - 1) <= 1e-12
    assert rep.rank_preserved and rep.passed


def test_trial_requires_centered_and_m_range():
    F = gen_low_rank(GridShape(4, 4, 6), 3, seed=1)
    with pytest.raises(ContractError):
        run_trial(F, 8, 0)
    Fc = center(F)[0]
    with pytest.raises(ParameterError):
        run_trial(Fc, 2, 0)


def test_exact_rank_trials_against_span_oracle():
    F = centered_low_rank(8, 5, 2, seed=3, h=2)
    checked = 0
    for idx in itertools.combinations(range(8), 3):
        sampler = SamplerMatrix(np.array(idx), 8)
        rep = run_trial(F, 3, 0, sampler=sampler)
        sub = F.data[list(idx)]
        spans_same = (np.linalg.matrix_rank(sub, tol=1e-9) == 2 and
                      np.linalg.matrix_rank(np.vstack([sub, F.data]), tol=1e-9) == 2)
        if rep.rank_preserved:
            assert spans_same
            assert rep.projector_distance <= 1e-8
            checked += 1
    assert checked > 0


def test_spiky_missed_rows_lose_rank():
    shape = GridShape(2, 4, 4)
    raw = gen_low_rank(shape, 2, 0.0, "spiky", seed=5)
    spikes = set(np.flatnonzero(np.abs(raw.data).sum(axis=1) > 0))
    assert len(spikes) == 2
    F = center(raw)[0]
    others = [i for i in range(8) if i not in spikes]
    rep = run_trial(F, 3, 0, sampler=SamplerMatrix(np.array(others[:3]), 8))
    assert not rep.rank_preserved
    assert rep.projector_distance == pytest.approx(1.0, abs=1e-9)
    assert not rep.passed


def test_sandwich_full_sampler():
    U = np.linalg.qr(np.random.default_rng(0).standard_normal((10, 3)))[0]
    lo, hi, ok = sandwich_check(U, SamplerMatrix(np.arange(10), 10), 0.1)
    assert abs(lo - 1) <= 1e-12 and abs(hi - 1) <= 1e-12 and ok


def test_sandwich_equal_leverage_against_outer_products():
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], float)
    U = np.kron(H, np.ones((2, 1)))[:, :2] / math.sqrt(8)  # N=8, every leverage r/N
    assert np.allclose((U**2).sum(axis=1), 2 / 8)
    sampler = SamplerMatrix(np.array([0, 3, 4, 7]), 8)
    ref = np.zeros((2, 2))
    for i in sampler.indices:
        ref += np.outer(U[i], U[i])
    ref *= 8 / 4
    eig = np.linalg.eigvalsh(ref)
    lo, hi, _ = sandwich_check(U, sampler, 0.5)
    assert lo == pytest.approx(eig[0], abs=1e-14) and hi == pytest.approx(eig[1], abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20))
def test_sandwich_psd_and_implies_rank(seed, m):
    F = centered_low_rank(20, 6, 3, "spiky" if seed % 2 else "spread", seed=seed % 1000, h=4)
    svd = thin_svd(F)
    m = max(m, svd.rank)
    rep = run_trial(F, m, RngSeed(seed, 1), factors=svd)
    assert rep.sandwich_min >= -1e-12 and rep.sandwich_min <= rep.sandwich_max
    assert -1e-9 <= rep.projector_distance <= 1 + 1e-9
    if rep.sandwich_min > 1e-8:
        assert rep.rank_preserved
    if rep.rank_preserved:
        assert rep.projector_distance <= 1e-8


def test_second_moment_exhaustive_small():
    F = np.random.default_rng(6).standard_normal((6, 4))
    dev = second_moment_exhaustive(F, 3)
    assert dev <= 1e-12 * np.abs(F.T @ F).max()
    # independent recomputation of one subset's Gram
    idx = (0, 2, 5)
    g = np.array([[math.fsum(F[i, a] * F[i, b] for i in idx) for b in range(4)] for a in range(4)])
    rows = F[list(idx)]
    np.testing.assert_allclose(rows.T @ rows, g, atol=1e-13)


def test_second_moment_full_and_single_row():
    F = np.random.default_rng(1).standard_normal((5, 3))
    np.testing.assert_allclose(expected_sampled_gram(F, 5), F.T @ F, atol=1e-13)
    G = np.zeros((7, 3))
    G[4] = [1.0, -2.0, 0.5]
    avg = expected_sampled_gram(G, 3)
    frac = math.comb(6, 2) / math.comb(7, 3)
    assert frac == 3 / 7
    np.testing.assert_allclose(avg, frac * np.outer(G[4], G[4]), atol=1e-15)


def test_second_moment_budget():
    with pytest.raises(BudgetExceededError, match="Monte Carlo"):
        second_moment_exhaustive(np.ones((40, 2)), 20)


def test_covariance_scale_factor():
    a, _ = covariance_scale_check(np.random.default_rng(0).standard_normal((6, 2)), 3)
    assert a == pytest.approx(5 / 6 * 3 / 2, rel=1e-15)
    assert (255 / 256) * (128 / 127) == pytest.approx(255 / 254, rel=1e-15)
    assert 255 / 254 == pytest.approx(1.00393700787, abs=1e-11)
    F = center(gen_low_rank(GridShape(2, 3, 3), 2, 0.5, seed=1))[0]
    alpha, dev = covariance_scale_check(F, 6)
    assert alpha == 1.0 and dev <= 1e-14
    alpha, dev = covariance_scale_check(F, 3)
    assert dev <= 1e-12 * np.abs(F.data.T @ F.data).max()
    with pytest.raises(ParameterError):
        covariance_scale_check(F, 1)


def test_lipschitz_identity_and_scaled():
    F = np.random.default_rng(2).standard_normal((10, 4))
    S = SamplerMatrix(np.array([1, 4, 7]), 10)
    lhs, rhs, ok = lipschitz_check(F, S, np.eye(4))
    assert lhs == rhs and ok
    lhs, rhs, ok = lipschitz_check(F, S, 2 * np.eye(4))
    assert lhs <= rhs + 1e-12 and ok
    assert rhs == pytest.approx(2 * np.linalg.norm(F[[0, 2, 3, 5, 6, 8, 9]]))


def test_clip_to_unit_ball_is_nonexpansive():
    rng = np.random.default_rng(3)
    A, B = 3 * rng.standard_normal((50, 4)), 3 * rng.standard_normal((50, 4))
    d_out = np.linalg.norm(clip_to_unit_ball(A) - clip_to_unit_ball(B), axis=1)
    assert np.all(d_out <= np.linalg.norm(A - B, axis=1) + 1e-12)


@pytest.mark.parametrize("normalizer", [False, True])
def test_lipschitz_random_with_power_iteration_norms(normalizer):
    for s in range(100):
        rng = RngSeed(s, 7).generator()
        F = rng.standard_normal((12, 5))
        W = rng.standard_normal((5, 3))
        S = SamplerMatrix.uniform(12, 6, RngSeed(s, 8))
        L = power_spectral_norm(W, seed=s)
        assert L == pytest.approx(np.linalg.norm(W, 2), rel=1e-8)
        assert lipschitz_check(F, S, W, normalizer, operator_norm=L)[2]


def test_config_validation():
    with pytest.raises(ParameterError):
        LemmaConfig(trials=0)
    with pytest.raises(ParameterError):
        LemmaConfig(epsilon=1.0)
    with pytest.raises(ParameterError):
        LemmaConfig(delta=0.0)


def test_campaign_exact_spread_passes():
    rep = run_campaign(LemmaConfig(trials=30, seed=3), CampaignData(n=256, d=32, rank=4))
    assert rep.m == min(sampling_bound(rep.mu, 4, 0.25, 0.05, 8), 256)
    assert rep.pass_fraction == 1.0 and rep.ok
    lines = rep.to_csv().splitlines()
    assert lines[0] == "trial_id,m,mu,distance,sandwich_min,sandwich_max,rank_preserved,pass"
    assert len(lines) == 31


def test_campaign_spread_with_smaller_m_still_exact():
    rep = run_campaign(LemmaConfig(trials=50, seed=1, m=40), CampaignData(n=256, d=32, rank=4))
    for t in rep.trials:
        if t.rank_preserved:
            assert t.projector_distance <= 1e-8
    assert rep.pass_fraction == 1.0


def test_campaign_spiky_minimum_m_fails():
    rep = run_campaign(LemmaConfig(trials=20, delta=0.5, m=4),
                       CampaignData(n=64, d=16, rank=4, mode="spiky"))
    assert rep.pass_fraction < 0.5 and not rep.ok


def test_campaign_deterministic():
    cfg = LemmaConfig(trials=10, seed=9, m=20)
    data = CampaignData(n=64, d=8, rank=3, noise_sigma=0.1)
    assert run_campaign(cfg, data).to_csv() == run_campaign(cfg, data).to_csv()


def test_noisy_distance_decreases_with_m():
    data = CampaignData(n=64, d=12, rank=3, noise_sigma=0.1)
    means = []
    for m in (6, 12, 24, 48, 64):
        rep = run_campaign(LemmaConfig(trials=500, seed=4, m=m), data)
        means.append(np.mean([t.projector_distance for t in rep.trials]))
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert means[-1] <= 1e-12
