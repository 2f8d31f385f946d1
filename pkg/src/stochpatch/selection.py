"""Stochastic patch selection and the two ways of handing kept descriptors on.

SPS keeps exactly ``ceil(rate * N)`` patches and zero-fills the rest of the
grid. SPPS keeps the same fixed-count subset but emits a compact sequence with
positional embeddings. MSPPS draws each patch independently (a uniform rate or
a per-patch probability grid) and emits the compact sequence as well.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .attention import Backbone, extract_subset
from .errors import EmptySelectionError, ParameterError
from .tensor import DescriptorMatrix, GridShape, SeedLike, as_seed

VARIANTS = ("sps", "spps", "mspps")


@dataclass(frozen=True, eq=False)
class SelectionSet:
    indices: np.ndarray
    n_total: int
    policy: str
    rate: float | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size and (idx[0] < 0 or idx[-1] >= self.n_total or np.any(np.diff(idx) <= 0)):
            raise ParameterError("indices must be strictly increasing within [0, n_total)")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        if not isinstance(other, SelectionSet):
            return NotImplemented
        return (self.n_total == other.n_total and self.policy == other.policy
                and np.array_equal(self.indices, other.indices))

    def occupancy(self) -> np.ndarray:
        occ = np.zeros(self.n_total, dtype=bool)
        occ[self.indices] = True
        return occ

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index"])
        w.writerows([int(i)] for i in self.indices)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_total: int, policy: str = "fixed", rate=None):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["index"]:
            raise ParameterError("selection CSV must start with an 'index' header")
        return cls(np.array([int(r[0]) for r in rows[1:]], dtype=np.int64), n_total, policy, rate)


def keep_count(n: int, rate: float) -> int:
    """``ceil(rate * n)`` evaluated on the decimal value of ``rate`` (0.3 * 10 is 3, not 4)."""
    _check_rate(rate)
    return math.ceil(Fraction(repr(float(rate))) * n)


def _check_rate(rate):
    if not (isinstance(rate, (int, float)) and 0 < rate <= 1):
        raise ParameterError(f"rate must be in (0, 1], got {rate!r}")


def partial_fisher_yates(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``k``-subset of ``range(n)``, sorted."""
    if not 0 <= k <= n:
        raise ParameterError(f"k must be in [0, {n}], got {k}")
    perm = np.arange(n)
    for i in range(k):
        j = int(rng.integers(i, n))
        perm[i], perm[j] = perm[j], perm[i]
    return np.sort(perm[:k])


def sample_fixed(n: int, rate: float, seed: SeedLike) -> SelectionSet:
    k = keep_count(n, rate)
    idx = partial_fisher_yates(n, k, as_seed(seed).generator())
    return SelectionSet(idx, n, "fixed", rate)


def sample_threshold(n: int, rate: float, seed: SeedLike) -> SelectionSet:
    """Keep patch ``i`` iff ``R_i <= rate`` with ``R ~ U(0,1)^n``; may be empty."""
    _check_rate(rate)
    R = as_seed(seed).generator().random(n)
    return SelectionSet(np.flatnonzero(R <= rate), n, "threshold", rate)


def sample_probability_matrix(P, seed: SeedLike) -> SelectionSet:
    """Keep patch ``i`` with probability ``P_i`` (grid flattened row-major)."""
    P = np.asarray(P, dtype=np.float64)
    if not np.all((P >= 0) & (P <= 1)):
        raise ParameterError("probability entries must lie in [0, 1]")
    p = P.ravel()
    R = as_seed(seed).generator().random(p.size)
    # strict '<' so P_i = 0 never keeps and P_i = 1 always keeps
    return SelectionSet(np.flatnonzero(R < p), p.size, "probability_matrix")


@dataclass(frozen=True, eq=False)
class SparseDescriptorTensor:
    shape: GridShape
    data: np.ndarray
    occupancy: np.ndarray

    def as_matrix(self) -> DescriptorMatrix:
        return DescriptorMatrix(self.shape, self.data)

    def zero_rows(self) -> int:
        return int(np.count_nonzero(~self.data.any(axis=1)))


def build_sparse(rows, selection, shape: GridShape) -> SparseDescriptorTensor:
    """Scatter the kept descriptors into a zero N x D grid tensor."""
    idx = selection.indices if isinstance(selection, SelectionSet) else np.asarray(selection, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.float64).reshape(len(idx), -1) if len(idx) else np.zeros((0, shape.dim))
    if rows.shape != (len(idx), shape.dim):
        raise ParameterError(f"expected {len(idx)} x {shape.dim} rows, got {rows.shape}")
    data = np.zeros((shape.n, shape.dim))
    data[idx] = rows
    occ = np.zeros(shape.n, dtype=bool)
    occ[idx] = True
    data.flags.writeable = False
    occ.flags.writeable = False
    return SparseDescriptorTensor(shape, data, occ)


def positional_table(n: int, d: int, scheme: str = "sinusoidal", seed: SeedLike = 0) -> np.ndarray:
    """Fixed N x D positional embeddings: sinusoidal, or seeded Gaussian (std 0.02)."""
    if scheme == "sinusoidal":
        pos = np.arange(n, dtype=np.float64)[:, None]
        i = np.arange(d)
        freq = np.power(10000.0, -(2 * (i // 2)) / d)
        ang = pos * freq[None, :]
        return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))
    if scheme == "seeded_gaussian":
        return 0.02 * as_seed(seed).generator().standard_normal((n, d))
    raise ParameterError(f"unknown positional scheme {scheme!r}")


@dataclass(frozen=True, eq=False)
class PositionAdjustedSequence:
    indices: np.ndarray
    descriptors: np.ndarray
    positions: np.ndarray
    combine_mode: str

    def __len__(self):
        return int(self.indices.size)

    def tokens(self) -> np.ndarray:
        if self.combine_mode == "add":
            return self.descriptors + self.positions
        return np.concatenate([self.descriptors, self.positions], axis=1)


def build_position_adjusted(rows, selection, table: np.ndarray,
                            combine_mode: str = "add") -> PositionAdjustedSequence:
    """Compact sequence of kept descriptors in original-index order, with ``p_i`` attached."""
    idx = selection.indices if isinstance(selection, SelectionSet) else np.asarray(selection, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] != len(idx):
        raise ParameterError(f"expected {len(idx)} descriptor rows, got {rows.shape}")
    if combine_mode not in ("add", "concat"):
        raise ParameterError(f"combine_mode must be 'add' or 'concat', got {combine_mode!r}")
    if table.shape[1] != rows.shape[1]:
        raise ParameterError("positional table width does not match descriptor dimension")
    if len(idx) and (np.min(idx) < 0 or np.max(idx) >= table.shape[0]):
        raise ParameterError("index outside positional table")
    order = np.argsort(idx, kind="stable")
    idx = np.asarray(idx)[order]
    return PositionAdjustedSequence(idx, rows[order], table[idx], combine_mode)


@dataclass(frozen=True)
class SelectionOutcome:
    variant: str
    selection: SelectionSet
    sparse: SparseDescriptorTensor | None = None
    sequence: PositionAdjustedSequence | None = None


def select_and_build(variant: str, backbone: Backbone, X: DescriptorMatrix, seed: SeedLike,
                     rate: float = 0.5, probabilities=None, mask_kind="hard", alpha: float = 0.0,
                     table: np.ndarray | None = None, combine_mode: str = "add",
                     workers: int | None = None) -> SelectionOutcome:
    """Sample, extract the kept descriptors and assemble them per ``variant``."""
    variant = variant.lower()
    shape = X.shape
    n = shape.n
    if variant in ("sps", "spps"):
        sel = sample_fixed(n, rate, seed)
    elif variant == "mspps":
        if probabilities is not None:
            sel = sample_probability_matrix(probabilities, seed)
            if sel.n_total != n:
                raise ParameterError("probability grid size does not match the input")
        else:
            sel = sample_threshold(n, rate, seed)
        if len(sel) == 0:
            raise EmptySelectionError("threshold sampling kept no patches")
    else:
        raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")

    rows = extract_subset(backbone, X, sel.indices, mask_kind, alpha, shape, workers)
    out_shape = GridShape(shape.h_patches, shape.w_patches, backbone.dim)
    if variant == "sps":
        return SelectionOutcome(variant, sel, sparse=build_sparse(rows, sel, out_shape))
    if table is None:
        table = positional_table(n, backbone.dim)
    return SelectionOutcome(variant, sel,
                            sequence=build_position_adjusted(rows, sel, table, combine_mode))
