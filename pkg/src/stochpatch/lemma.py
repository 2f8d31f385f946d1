"""Numerical checks of row-space preservation under uniform row sampling.

A trial samples ``m`` rows without replacement, compares the row-space
projector of the sample with that of the full matrix, and evaluates the
rescaled sampled Gram ``(N/m) U_r^T S^T S U_r`` of the left singular basis.
The exhaustive checks enumerate every ``m``-subset and confirm the
second-moment and covariance identities exactly.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetExceededError, ContractError, ParameterError
from .redundancy import (DEFAULT_RANK_TOL, SvdFactors, coherence, row_projector,
                         thin_svd)
from .selection import partial_fisher_yates
from .tensor import DescriptorMatrix, GridShape, RngSeed, SeedLike, as_seed, center, gen_low_rank

EXHAUSTIVE_BUDGET = 10**6


@dataclass(frozen=True)
class LemmaConfig:
    epsilon: float = 0.25
    delta: float = 0.05
    constant: float = 8.0
    trials: int = 200
    rank_tol: float = DEFAULT_RANK_TOL
    seed: int = 0
    m: int | None = None

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ParameterError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must be in (0, 1), got {self.delta}")
        if not self.constant > 0:
            raise ParameterError(f"constant must be > 0, got {self.constant}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ParameterError(f"trials must be a positive integer, got {self.trials}")
        if not self.rank_tol > 0:
            raise ParameterError(f"rank_tol must be > 0, got {self.rank_tol}")
        if self.m is not None and self.m < 1:
            raise ParameterError(f"m must be positive, got {self.m}")


@dataclass(frozen=True)
class SamplerMatrix:
    """Row selector ``S`` in {0,1}^{m x N}, stored as its sorted row indices."""

    indices: np.ndarray
    n_total: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size != np.asarray(self.indices).size:
            raise ParameterError("sampler rows must be distinct")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.n_total):
            raise ParameterError("sampler index out of range")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return int(self.indices.size)

    def dense(self) -> np.ndarray:
        S = np.zeros((self.m, self.n_total))
        S[np.arange(self.m), self.indices] = 1.0
        return S

    def indicators(self) -> np.ndarray:
        """Diagonal of ``S^T S``."""
        c = np.zeros(self.n_total)
        c[self.indices] = 1.0
        return c

    @classmethod
    def uniform(cls, n: int, m: int, seed: SeedLike) -> "SamplerMatrix":
        return cls(partial_fisher_yates(n, m, as_seed(seed).generator()), n)


def sample_complexity(mu: float, r: int, epsilon: float, delta: float,
                      constant: float = 8.0) -> float:
    """``C mu r / eps^2 * ln(r / delta)`` before rounding."""
    if not mu >= 1 - 1e-9:
        raise ParameterError(f"mu must be >= 1, got {mu}")
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must be in (0, 1], got {epsilon}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")
    if not constant > 0:
        raise ParameterError(f"constant must be > 0, got {constant}")
    if not r / delta > 1:
        raise ParameterError("log(r / delta) must be positive")
    return constant * mu * r / epsilon**2 * math.log(r / delta)


def sampling_bound(mu: float, r: int, epsilon: float, delta: float, constant: float = 8.0) -> int:
    """Smallest integer row count meeting the bound. Clamping to ``[r, N]`` is left to the caller."""
    x = sample_complexity(mu, r, epsilon, delta, constant)
    # a few ulps of slack so exact integers are not pushed up by rounding
    return max(1, math.ceil(x * (1 - 4 * np.finfo(float).eps)))


def _check_projector(P: np.ndarray, tol: float, name: str) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ContractError(f"{name} must be square")
    if np.abs(P - P.T).max() > tol or np.abs(P @ P - P).max() > tol:
        raise ContractError(f"{name} is not a symmetric idempotent matrix")


def projector_distance(P_a: np.ndarray, P_b: np.ndarray, tol: float = 1e-8) -> float:
    """Spectral norm ``|P_a - P_b|_2``: the sine of the largest principal angle."""
    P_a = np.asarray(P_a, dtype=np.float64)
    P_b = np.asarray(P_b, dtype=np.float64)
    _check_projector(P_a, tol, "P_a")
    _check_projector(P_b, tol, "P_b")
    if P_a.shape != P_b.shape:
        raise ContractError("projectors act on different spaces")
    return float(np.linalg.norm(P_a - P_b, 2))


def power_spectral_norm(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000,
                        seed: SeedLike = 0) -> float:
    """Largest singular value by power iteration on ``A^T A`` (independent of LAPACK SVD)."""
    A = np.asarray(A, dtype=np.float64)
    x = as_seed(seed).generator().standard_normal(A.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A.T @ (A @ x)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        x = y / nrm
        if abs(nrm - lam) <= tol * nrm:
            lam = nrm
            break
        lam = nrm
    return float(np.sqrt(lam))


def sandwich_matrix(U: np.ndarray, sampler: SamplerMatrix) -> np.ndarray:
    Us = U[sampler.indices]
    M = (sampler.n_total / sampler.m) * (Us.T @ Us)
    return 0.5 * (M + M.T)


def sandwich_check(U: np.ndarray, sampler: SamplerMatrix, epsilon: float):
    """Extreme eigenvalues of ``(N/m) U^T S^T S U`` and whether both lie in [1-eps, 1+eps]."""
    U = U.U if isinstance(U, SvdFactors) else np.asarray(U, dtype=np.float64)
    eig = np.linalg.eigvalsh(sandwich_matrix(U, sampler))
    lo, hi = float(eig[0]), float(eig[-1])
    return lo, hi, bool(1 - epsilon <= lo and hi <= 1 + epsilon)


@dataclass(frozen=True)
class LemmaTrialReport:
    trial_id: int
    m: int
    mu: float
    projector_distance: float
    sandwich_min: float
    sandwich_max: float
    sandwich_pass: bool
    rank_preserved: bool
    passed: bool


def _as_factors(X, rank, rank_tol):
    svd = thin_svd(X, rank_tol)
    if rank is not None:
        if rank > svd.rank:
            raise ParameterError(f"target rank {rank} exceeds numerical rank {svd.rank}")
        svd = svd.truncate(rank)
    return svd


def run_trial(F, m: int, seed: SeedLike, epsilon: float = 0.25, rank: int | None = None,
              rank_tol: float = DEFAULT_RANK_TOL, factors: SvdFactors | None = None,
              trial_id: int = 0, sampler: SamplerMatrix | None = None) -> LemmaTrialReport:
    """Sample ``m`` rows uniformly without replacement and measure subspace preservation.

    ``rank`` fixes the principal subspace dimension (needed for noisy data,
    where the numerical rank is full); by default the numerical rank at
    ``rank_tol`` is used. The sampled projector uses at most that many
    leading right singular vectors of the sampled rows. Passing ``sampler``
    replaces the random draw (``m`` and ``seed`` are then ignored).
    """
    if isinstance(F, DescriptorMatrix):
        if not F.centered:
            raise ContractError("run_trial needs a centered matrix")
        X = F.data
    else:
        X = np.asarray(F, dtype=np.float64)
    n = X.shape[0]
    svd = factors if factors is not None else _as_factors(X, rank, rank_tol)
    r = svd.rank
    if sampler is not None:
        m = sampler.m
    if not r <= m <= n:
        raise ParameterError(f"m must be in [r, N] = [{r}, {n}], got {m}")
    mu = coherence(svd.U).mu
    if sampler is None:
        sampler = SamplerMatrix.uniform(n, m, seed)

    sub = thin_svd(X[sampler.indices], rank_tol)
    if sub.rank > r:
        sub = sub.truncate(r)
    dist = projector_distance(row_projector(svd.V), row_projector(sub.V))

    lo, hi, ok = sandwich_check(svd.U, sampler, epsilon)
    s = np.linalg.svd(svd.U[sampler.indices], compute_uv=False)
    rank_preserved = bool(s.size >= r and s[r - 1] > rank_tol)
    return LemmaTrialReport(trial_id, m, mu, dist, lo, hi, ok, rank_preserved,
                            bool(dist <= epsilon))


def _subsets(n: int, m: int, budget: int):
    if not 1 <= m <= n:
        raise ParameterError(f"m must be in [1, {n}], got {m}")
    total = math.comb(n, m)
    if total > budget:
        raise BudgetExceededError(
            f"C({n}, {m}) = {total} subsets exceeds the exhaustive budget {budget}; "
            "use a Monte Carlo estimate (run_trial / run_campaign) instead")
    return total, itertools.combinations(range(n), m)


def expected_sampled_gram(F, m: int, budget: int = EXHAUSTIVE_BUDGET) -> np.ndarray:
    """Average of ``(SF)^T (SF)`` over every ``m``-subset of rows."""
    X = F.data if isinstance(F, DescriptorMatrix) else np.asarray(F, dtype=np.float64)
    total, subsets = _subsets(X.shape[0], m, budget)
    acc = np.zeros((X.shape[1], X.shape[1]))
    for idx in subsets:
        rows = X[list(idx)]
        acc += rows.T @ rows
    return acc / total


def second_moment_exhaustive(F, m: int, budget: int = EXHAUSTIVE_BUDGET) -> float:
    """``max |E[(SF)^T (SF)] - (m/N) F^T F|`` by enumeration (absolute)."""
    X = F.data if isinstance(F, DescriptorMatrix) else np.asarray(F, dtype=np.float64)
    avg = expected_sampled_gram(X, m, budget)
    return float(np.abs(avg - (m / X.shape[0]) * (X.T @ X)).max())


def covariance_scale_check(F, m: int, budget: int = EXHAUSTIVE_BUDGET) -> tuple[float, float]:
    """Scale ``alpha = (N-1)/N * m/(m-1)`` with ``E[cov_m] = alpha * cov_N``, and the
    enumerated max absolute deviation from that identity."""
    X = F.data if isinstance(F, DescriptorMatrix) else np.asarray(F, dtype=np.float64)
    n = X.shape[0]
    if m < 2:
        raise ParameterError(f"m must be >= 2, got {m}")
    alpha = (n - 1) / n * (m / (m - 1))
    expected_cov_m = expected_sampled_gram(X, m, budget) / (m - 1)
    cov_n = (X.T @ X) / (n - 1)
    return alpha, float(np.abs(expected_cov_m - alpha * cov_n).max())


def clip_to_unit_ball(Y: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", Y, Y))
    return Y / np.maximum(norms, 1.0)[:, None]


def lipschitz_check(F, sampler: SamplerMatrix, W: np.ndarray, use_normalizer: bool = False,
                    operator_norm: float | None = None):
    """Check ``|phi(SF) - phi(F)|_F <= L |SF - F|_F`` for ``phi(x) = clip(x W)``.

    ``SF`` keeps the sampled rows in place and zeroes the others so both sides
    have N rows. ``L`` defaults to the spectral norm of ``W``.
    """
    X = F.data if isinstance(F, DescriptorMatrix) else np.asarray(F, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ParameterError("W must be finite")
    L = float(np.linalg.norm(W, 2)) if operator_norm is None else float(operator_norm)
    SF = X * sampler.indicators()[:, None]

    def phi(Z):
        Y = Z @ W
        return clip_to_unit_ball(Y) if use_normalizer else Y

    lhs = float(np.linalg.norm(phi(SF) - phi(X)))
    rhs = L * float(np.linalg.norm(SF - X))
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


@dataclass(frozen=True)
class CampaignData:
    n: int = 512
    d: int = 64
    rank: int = 8
    noise_sigma: float = 0.0
    mode: str = "spread"
    spiky_rows: int | None = None

    def generate(self, seed: SeedLike) -> DescriptorMatrix:
        shape = GridShape.for_count(self.n, self.d)
        return gen_low_rank(shape, self.rank, self.noise_sigma, self.mode, self.spiky_rows, seed)


@dataclass
class CampaignReport:
    config: LemmaConfig
    n: int
    rank: int
    mu: float
    m: int
    m_bound: int
    trials: list[LemmaTrialReport] = field(default_factory=list)

    @property
    def pass_fraction(self) -> float:
        return sum(t.passed for t in self.trials) / len(self.trials)

    @property
    def margin(self) -> float:
        d = self.config.delta
        return 3 * math.sqrt(d * (1 - d) / len(self.trials))

    @property
    def threshold(self) -> float:
        return 1 - self.config.delta - self.margin

    @property
    def ok(self) -> bool:
        return self.pass_fraction >= self.threshold

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial_id", "m", "mu", "distance", "sandwich_min", "sandwich_max",
                    "rank_preserved", "pass"])
        for t in self.trials:
            w.writerow([t.trial_id, t.m, repr(t.mu), repr(t.projector_distance),
                        repr(t.sandwich_min), repr(t.sandwich_max),
                        int(t.rank_preserved), int(t.passed)])
        return buf.getvalue()

    def summary(self) -> str:
        return (f"N={self.n} r={self.rank} mu={self.mu:.6g} m_bound={self.m_bound} m={self.m} "
                f"trials={len(self.trials)} pass_fraction={self.pass_fraction:.6f} "
                f"threshold={self.threshold:.6f} {'PASS' if self.ok else 'FAIL'}")

    def as_dict(self) -> dict:
        return {"n": self.n, "rank": self.rank, "mu": self.mu, "m": self.m,
                "m_bound": self.m_bound, "pass_fraction": self.pass_fraction,
                "threshold": self.threshold, "ok": self.ok, "config": asdict(self.config)}


def run_campaign(config: LemmaConfig, data: CampaignData | DescriptorMatrix) -> CampaignReport:
    """Run ``config.trials`` independent trials on centered data.

    Data is generated from stream 0 of ``config.seed``; trial ``t`` samples
    from stream ``t + 1``. ``m`` comes from the sampling bound clamped to
    ``[r, N]`` unless ``config.m`` overrides it.
    """
    if isinstance(data, CampaignData):
        F = data.generate(RngSeed(config.seed, 0))
        target_rank = data.rank if data.noise_sigma > 0 else None
    else:
        F, target_rank = data, None
    if not F.centered:
        F, _ = center(F)
    svd = _as_factors(F.data, target_rank, config.rank_tol)
    r, n = svd.rank, F.n
    if r < 1:
        raise ParameterError("data has numerical rank 0")
    mu = coherence(svd.U).mu
    m_bound = sampling_bound(mu, r, config.epsilon, config.delta, config.constant)
    m = config.m if config.m is not None else min(max(m_bound, r), n)
    if not r <= m <= n:
        raise ParameterError(f"m must be in [{r}, {n}], got {m}")
    report = CampaignReport(config, n, r, mu, m, m_bound)
    for t in range(config.trials):
        report.trials.append(run_trial(F, m, RngSeed(config.seed, t + 1), config.epsilon,
                                       rank_tol=config.rank_tol, factors=svd, trial_id=t))
    return report
