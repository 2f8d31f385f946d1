"""Redundancy measures over descriptor matrices: PCA spectra, Pearson
correlation, cosine-similarity overlays, thin SVD, projectors and coherence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError
from .tensor import DescriptorMatrix, GridShape

NORMALIZATIONS = ("over_N", "over_N_minus_1")
DEFAULT_RANK_TOL = 1e-9
# eigenvalues below this fraction of the largest are treated as zero
SPECTRUM_TOL = 1e-12


def _array(F, *, require_centered=False) -> np.ndarray:
    if isinstance(F, DescriptorMatrix):
        if require_centered and not F.centered:
            raise ContractError("input must be centered (call tensor.center first)")
        return F.data
    return np.asarray(F, dtype=np.float64)


def covariance(F, normalization: str = "over_N", axis: str = "feature") -> np.ndarray:
    """Sample covariance of a centered descriptor matrix.

    ``axis="feature"`` gives the D x D matrix ``F^T F / n``; ``axis="patch"``
    gives the N x N patch-wise matrix ``F F^T / n`` where the divisor counts
    features instead of patches. ``normalization`` picks ``n`` or ``n - 1``.
    """
    X = _array(F, require_centered=True)
    if axis == "patch":
        X = X.T
    elif axis != "feature":
        raise ParameterError(f"axis must be 'feature' or 'patch', got {axis!r}")
    count = X.shape[0]
    if normalization == "over_N":
        denom = count
    elif normalization == "over_N_minus_1":
        if count < 2:
            raise ParameterError("over_N_minus_1 needs at least two observations")
        denom = count - 1
    else:
        raise ParameterError(f"normalization must be one of {NORMALIZATIONS}")
    S = (X.T @ X) / denom
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    cumulative: np.ndarray
    normalization: str | None = None

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.size)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, normalization=None, tol: float = SPECTRUM_TOL):
        lam = np.sort(np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None))[::-1]
        if lam.size == 0 or lam[0] <= 0:
            raise ParameterError("spectrum has no positive eigenvalue")
        lam = lam[lam > tol * lam[0]].copy()
        csum = np.cumsum(lam)
        cum = csum / csum[-1]
        cum[-1] = 1.0
        return cls(lam, cum, normalization)


def spectrum(cov: np.ndarray, normalization: str | None = None,
             tol: float = SPECTRUM_TOL) -> SpectrumReport:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ParameterError("covariance must be square")
    return SpectrumReport.from_eigenvalues(np.linalg.eigvalsh(cov), normalization, tol)


def explained_variance(report: SpectrumReport, m: int) -> float:
    """Fraction of the total variance in the leading ``m`` eigenvalues."""
    if not 1 <= m <= report.rank:
        raise ParameterError(f"m must be in [1, {report.rank}], got {m}")
    return float(report.cumulative[m - 1])


def components_for(report: SpectrumReport, tau: float) -> int:
    """Smallest ``m`` with ``E(m) >= tau``."""
    if not 0 < tau <= 1:
        raise ParameterError(f"tau must be in (0, 1], got {tau}")
    return int(np.searchsorted(report.cumulative, tau, side="left")) + 1


def pca_spectrum(F, normalization: str = "over_N") -> SpectrumReport:
    """Centers if needed, then ``spectrum(covariance(F))``."""
    from .tensor import center
    if not isinstance(F, DescriptorMatrix):
        F = DescriptorMatrix.from_array(F)
    if not F.centered:
        F, _ = center(F)
    return spectrum(covariance(F, normalization), normalization)


def pearson_matrix(F) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation between rows (patches), taken across features.

    Rows with zero variance have no defined correlation; their row and column
    are NaN and they are flagged in the returned boolean vector.
    """
    X = _array(F)
    Z = X - X.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    scale = np.abs(X).max(axis=1)
    undefined = norms <= 1e-14 * np.maximum(scale, np.finfo(float).tiny) * np.sqrt(X.shape[1])
    safe = np.where(undefined, 1.0, norms)
    Zn = Z / safe[:, None]
    R = np.clip(Zn @ Zn.T, -1.0, 1.0)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    R[undefined, :] = np.nan
    R[:, undefined] = np.nan
    return R, undefined


def cosine_similarities(F, seed_patch: int) -> tuple[np.ndarray, np.ndarray]:
    """``s_j = f_i . f_j / (|f_i| |f_j|)``; zero-norm rows get 0 and are flagged."""
    X = _array(F)
    n = X.shape[0]
    if not 0 <= seed_patch < n:
        raise ParameterError(f"seed patch {seed_patch} out of range [0, {n})")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    if norms[seed_patch] == 0:
        raise ParameterError(f"seed patch {seed_patch} has a zero descriptor")
    zero = norms == 0
    unit = X / np.where(zero, 1.0, norms)[:, None]
    s = unit @ unit[seed_patch]
    return np.clip(s, -1.0, 1.0), zero


def _upsample_bilinear(M: np.ndarray, u: int) -> np.ndarray:
    from scipy.ndimage import zoom
    return zoom(M, u, order=1, mode="nearest", grid_mode=True)


def minmax_normalize(M: np.ndarray) -> np.ndarray:
    lo, hi = M.min(), M.max()
    if hi == lo:
        return np.full_like(M, 0.5)
    return (M - lo) / (hi - lo)


def cosine_overlay(F, seed_patch: int, shape: GridShape | None = None, upsample: int = 1,
                   method: str = "nearest") -> np.ndarray:
    """Cosine similarity to ``seed_patch`` on the patch grid, upsampled and scaled to [0, 1]."""
    if shape is None:
        if not isinstance(F, DescriptorMatrix):
            raise ParameterError("shape is required for raw arrays")
        shape = F.shape
    if upsample < 1:
        raise ParameterError(f"upsample must be >= 1, got {upsample}")
    s, _ = cosine_similarities(F, seed_patch)
    if s.size != shape.n:
        raise ParameterError("grid shape does not match the number of patches")
    M = s.reshape(shape.h_patches, shape.w_patches)
    if method == "nearest":
        M = np.repeat(np.repeat(M, upsample, axis=0), upsample, axis=1)
    elif method == "bilinear":
        M = _upsample_bilinear(M, upsample)
    else:
        raise ParameterError(f"unknown upsampling method {method!r}")
    return minmax_normalize(M)


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    singulars: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singulars.size)

    def truncate(self, r: int) -> "SvdFactors":
        return SvdFactors(self.U[:, :r], self.singulars[:r], self.V[:, :r])


def thin_svd(F, rank_tol: float = DEFAULT_RANK_TOL) -> SvdFactors:
    """Rank-revealing thin SVD keeping singular values above ``rank_tol * sigma_max``."""
    X = _array(F, require_centered=True)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.count_nonzero(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return SvdFactors(U[:, :r], s[:r], Vt[:r].T)


def row_projector(V: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``V V^T`` onto the span of the columns of ``V``."""
    V = V.V if isinstance(V, SvdFactors) else np.asarray(V, dtype=np.float64)
    P = V @ V.T
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class CoherenceReport:
    mu: float
    leverage: np.ndarray
    rank: int


def leverage_scores(U: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", U, U)


def coherence(U, gram_tol: float = 1e-8) -> CoherenceReport:
    """Row-space coherence ``(N/r) max_i |e_i^T U|^2`` of an orthonormal basis."""
    U = U.U if isinstance(U, SvdFactors) else np.asarray(U, dtype=np.float64)
    n, r = U.shape
    if r < 1:
        raise ContractError("basis has no columns")
    dev = np.abs(U.T @ U - np.eye(r)).max()
    if dev > gram_tol:
        raise ContractError(f"columns are not orthonormal (Gram deviation {dev:.3g})")
    lev = leverage_scores(U)
    return CoherenceReport(float(n / r * lev.max()), lev, r)
