"""Descriptor matrices, seeding, synthetic low-rank data and the SPST file format.

Patches are always indexed row-major over the ``h_patches x w_patches`` grid:
patch ``i`` sits at ``(y, x) = divmod(i, w_patches)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import (BadMagicError, BadVersionError, FormatError,
                     ParameterError, TruncatedError)

SPST_MAGIC = b"SPST"
SPST_VERSION = 1
# magic, version, h, w, d, reserved (keeps the float64 payload 8-byte aligned)
_HEADER = struct.Struct("<4sIIIII")
HEADER_SIZE = _HEADER.size

_CENTER_TOL = 1e-9


@dataclass(frozen=True)
class GridShape:
    h_patches: int
    w_patches: int
    dim: int

    def __post_init__(self):
        for name in ("h_patches", "w_patches", "dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")

    @property
    def n(self) -> int:
        return self.h_patches * self.w_patches

    def coords(self, i: int) -> tuple[int, int]:
        """(row, col) of patch ``i`` in the grid."""
        if not 0 <= i < self.n:
            raise ParameterError(f"patch index {i} out of range [0, {self.n})")
        return divmod(int(i), self.w_patches)

    @classmethod
    def for_count(cls, n: int, dim: int) -> "GridShape":
        """Most square grid with ``n`` cells (``h <= w``)."""
        if n < 1:
            raise ParameterError(f"n must be positive, got {n}")
        h = int(np.sqrt(n))
        while n % h:
            h -= 1
        return cls(h, n // h, dim)


@dataclass(frozen=True)
class RngSeed:
    """Counter-based stream key. Equal ``(seed, stream_id)`` gives equal draws everywhere."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ParameterError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        key = (int(self.stream_id) << 64) | int(self.seed)
        return np.random.Generator(np.random.Philox(key=key))

    def for_stream(self, stream_id: int) -> "RngSeed":
        return replace(self, stream_id=stream_id)


SeedLike = Union[RngSeed, int]


def as_seed(seed: SeedLike) -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


@dataclass(frozen=True, eq=False)
class DescriptorMatrix:
    """N x D patch descriptors (row ``i`` = patch ``i``) plus grid metadata."""

    shape: GridShape
    data: np.ndarray
    centered: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.ndim == 1:
            data = data.reshape(self.shape.n, self.shape.dim)
        if data.shape != (self.shape.n, self.shape.dim):
            raise ParameterError(
                f"data shape {data.shape} does not match grid "
                f"({self.shape.n}, {self.shape.dim})")
        if not np.all(np.isfinite(data)):
            raise ParameterError("descriptor entries must be finite")
        if self.centered:
            means = np.abs(data.mean(axis=0))
            scale = np.abs(data).max(axis=0)
            if np.any(means > _CENTER_TOL * np.maximum(scale, np.finfo(float).tiny)):
                raise ParameterError("centered=True but column means are not zero")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data, shape: GridShape | None = None, centered=False):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ParameterError("expected a 2-D array")
        if shape is None:
            shape = GridShape.for_count(data.shape[0], data.shape[1])
        return cls(shape, data, centered)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def dim(self) -> int:
        return self.shape.dim

    def __eq__(self, other):
        if not isinstance(other, DescriptorMatrix):
            return NotImplemented
        return (self.shape == other.shape and self.centered == other.centered
                and self.data.tobytes() == other.data.tobytes())

    def __hash__(self):
        return hash((self.shape, self.centered, self.data.tobytes()))


def center(F: DescriptorMatrix) -> tuple[DescriptorMatrix, np.ndarray]:
    """Subtract column means. Returns the centered matrix and the mean vector."""
    mean = F.data.mean(axis=0)
    out = F.data - mean
    # second pass: near-constant columns otherwise keep a rounding offset that
    # is large relative to their (tiny) centered magnitude
    residue = out.mean(axis=0)
    return DescriptorMatrix(F.shape, out - residue, centered=True), mean + residue


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def gen_low_rank(shape: GridShape, rank: int, noise_sigma: float = 0.0,
                 mode: str = "spread", spiky_rows: int | None = None,
                 seed: SeedLike = 0) -> DescriptorMatrix:
    """Synthetic ``U diag(r, r-1, ..., 1) V^T + noise_sigma * E``.

    ``mode="spread"`` orthonormalizes a Gaussian N x r matrix, giving low
    coherence with high probability. ``mode="spiky"`` places ``spiky_rows``
    (default ``rank``) identity rows inside ``U`` so the maximum leverage is 1
    and the coherence is ``N / rank``.
    """
    n, d = shape.n, shape.dim
    if not 1 <= rank <= min(n, d):
        raise ParameterError(f"rank must be in [1, {min(n, d)}], got {rank}")
    if noise_sigma < 0 or not np.isfinite(noise_sigma):
        raise ParameterError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = as_seed(seed).generator()

    if mode == "spread":
        U = _orthonormal(rng, n, rank)
    elif mode == "spiky":
        s = rank if spiky_rows is None else int(spiky_rows)
        if not 1 <= s <= rank:
            raise ParameterError(f"spiky_rows must be in [1, {rank}], got {s}")
        rows = rng.permutation(n)[:s]
        U = np.zeros((n, rank))
        U[rows, np.arange(s)] = 1.0
        if s < rank:
            G = rng.standard_normal((n, rank - s))
            G[rows] = 0.0
            U[:, s:] = np.linalg.qr(G)[0]
    else:
        raise ParameterError(f"unknown coherence mode {mode!r}")

    V = _orthonormal(rng, d, rank)
    sigma = np.arange(rank, 0, -1, dtype=np.float64)
    F = (U * sigma) @ V.T
    if noise_sigma > 0:
        F = F + noise_sigma * rng.standard_normal((n, d))
    return DescriptorMatrix(shape, F)


def l2_row_norms(F: DescriptorMatrix | np.ndarray) -> np.ndarray:
    data = F.data if isinstance(F, DescriptorMatrix) else np.asarray(F, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", data, data))


def top_energy_subset(F: DescriptorMatrix | np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest-norm rows, descending; ties go to the lower index."""
    norms = l2_row_norms(F)
    if not 1 <= count <= norms.size:
        raise ParameterError(f"count must be in [1, {norms.size}], got {count}")
    order = np.lexsort((np.arange(norms.size), -norms))
    return order[:count]


def write_tensor(F: DescriptorMatrix) -> bytes:
    s = F.shape
    header = _HEADER.pack(SPST_MAGIC, SPST_VERSION, s.h_patches, s.w_patches, s.dim, 0)
    return header + F.data.astype("<f8", copy=False).tobytes(order="C")


def read_tensor(buf: bytes) -> DescriptorMatrix:
    buf = bytes(buf)
    if len(buf) < 4:
        raise TruncatedError("magic", f"need 4 bytes, got {len(buf)}")
    if buf[:4] != SPST_MAGIC:
        raise BadMagicError(buf[:4])
    if len(buf) < HEADER_SIZE:
        raise TruncatedError("header", f"need {HEADER_SIZE} bytes, got {len(buf)}")
    _, version, h, w, d, reserved = _HEADER.unpack_from(buf)
    if version != SPST_VERSION:
        raise BadVersionError(version)
    for name, v in (("h", h), ("w", w), ("d", d)):
        if v == 0:
            raise FormatError(name, "dimension must be >= 1")
    if reserved != 0:
        raise FormatError("reserved", f"expected 0, found {reserved}")
    expected = 8 * h * w * d
    payload = buf[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedError("payload", f"expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f8").reshape(h * w, d)
    return DescriptorMatrix(GridShape(h, w, d), data)


def save_tensor(path, F: DescriptorMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(write_tensor(F))


def load_tensor(path) -> DescriptorMatrix:
    with open(path, "rb") as fh:
        return read_tensor(fh.read())
