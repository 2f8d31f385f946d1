"""Seeded single-head self-attention stack and the masked patch-descriptor extractor.

Each layer computes ``Y = softmax(Q K^T) V (+ X)`` with ``Q = X W_Q``,
``K = X W_K`` and ``V = X W_V``. To get the descriptor of patch ``j``, the
logits of the masked layer are shifted by ``(1 - m_i) * r_sup`` for every
column ``i`` before the softmax, and the result is pushed through the
remaining plain layers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .tensor import DescriptorMatrix, GridShape, SeedLike, as_seed

DEFAULT_R_SUP = -1e4
MASK_KINDS = ("hard", "exp2", "inverse")


@dataclass(frozen=True, eq=False)
class Backbone:
    dim: int
    key_dim: int
    layers: int
    masked_layer: int
    w_q: tuple = field(repr=False)
    w_k: tuple = field(repr=False)
    w_v: tuple = field(repr=False)
    r_sup: float = DEFAULT_R_SUP
    residual: bool = True
    scale_logits: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ParameterError(f"layers must be >= 1, got {self.layers}")
        if not 1 <= self.masked_layer <= self.layers:
            raise ParameterError(
                f"masked_layer must be in [1, {self.layers}], got {self.masked_layer}")
        if not self.r_sup < 0:
            raise ParameterError(f"r_sup must be strictly negative, got {self.r_sup}")
        for name, shape in (("w_q", (self.dim, self.key_dim)),
                            ("w_k", (self.dim, self.key_dim)),
                            ("w_v", (self.dim, self.dim))):
            mats = getattr(self, name)
            if len(mats) != self.layers:
                raise ParameterError(f"{name}: expected {self.layers} matrices")
            for w in mats:
                if w.shape != shape or not np.all(np.isfinite(w)):
                    raise ParameterError(f"{name}: bad projection matrix")
                w.flags.writeable = False

    @classmethod
    def from_seed(cls, dim: int, key_dim: int | None = None, layers: int = 4,
                  masked_layer: int | None = None, seed: SeedLike = 0,
                  r_sup: float = DEFAULT_R_SUP, residual: bool = True,
                  scale_logits: bool = False) -> "Backbone":
        """Gaussian projections scaled by ``1/sqrt(dim)``.

        ``masked_layer`` defaults to ``ceil(layers / 2)``.
        """
        key_dim = dim if key_dim is None else key_dim
        if dim < 1 or key_dim < 1:
            raise ParameterError("dim and key_dim must be positive")
        if masked_layer is None:
            masked_layer = (layers + 1) // 2
        rng = as_seed(seed).generator()
        s = 1.0 / np.sqrt(dim)
        wq, wk, wv = [], [], []
        for _ in range(max(layers, 0)):
            wq.append(rng.standard_normal((dim, key_dim)) * s)
            wk.append(rng.standard_normal((dim, key_dim)) * s)
            wv.append(rng.standard_normal((dim, dim)) * s)
        return cls(dim, key_dim, layers, masked_layer, tuple(wq), tuple(wk), tuple(wv),
                   r_sup=r_sup, residual=residual, scale_logits=scale_logits)


@dataclass(frozen=True)
class AttentionMask:
    weights: np.ndarray
    seed_patch: int
    kind: str
    alpha: float | None = None


def softmax_rows(G: np.ndarray) -> np.ndarray:
    z = G - G.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def grid_distance(i: int, j: int, shape: GridShape) -> float:
    yi, xi = shape.coords(i)
    yj, xj = shape.coords(j)
    return float(np.hypot(xi - xj, yi - yj))


def _distances_from(j: int, shape: GridShape) -> np.ndarray:
    yj, xj = shape.coords(j)
    ys, xs = np.divmod(np.arange(shape.n), shape.w_patches)
    return np.hypot(xs - xj, ys - yj)


def build_mask(j: int, kind: str, shape: GridShape, alpha: float = 0.0) -> AttentionMask:
    """Locality mask around patch ``j``.

    ``hard``: 1 within grid distance ``alpha``, else 0. ``exp2``: ``2**-d``.
    ``inverse``: ``1/d`` clamped to 1, with the seed patch itself set to 1.
    """
    d = _distances_from(j, shape)
    if kind == "hard":
        if alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {alpha}")
        w = (d <= alpha).astype(np.float64)
    elif kind == "exp2":
        w = np.exp2(-d)
    elif kind == "inverse":
        w = np.ones_like(d)
        off = d > 0
        w[off] = np.minimum(1.0 / d[off], 1.0)
    else:
        raise ParameterError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    w.flags.writeable = False
    return AttentionMask(w, int(j), kind, alpha if kind == "hard" else None)


def unit_mask(j: int, shape: GridShape) -> AttentionMask:
    w = np.ones(shape.n)
    w.flags.writeable = False
    return AttentionMask(w, int(j), "ones")


def masked_similarity(G: np.ndarray, mask: AttentionMask | np.ndarray,
                      r_sup: float = DEFAULT_R_SUP) -> np.ndarray:
    """``G + (1 - M) * r_sup`` where every row of ``M`` is the mask."""
    if not r_sup < 0:
        raise ParameterError(f"r_sup must be strictly negative, got {r_sup}")
    w = mask.weights if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    return G + (1.0 - w)[None, :] * r_sup


def _qkv(bb: Backbone, H: np.ndarray, layer: int):
    i = layer - 1
    Q = H @ bb.w_q[i]
    K = H @ bb.w_k[i]
    V = H @ bb.w_v[i]
    return Q, K, V


def _logits(bb: Backbone, Q, K):
    G = Q @ K.T
    if bb.scale_logits:
        G = G / np.sqrt(bb.key_dim)
    return G


def _mix(bb: Backbone, A, V, H):
    Y = A @ V
    return Y + H if bb.residual else Y


def _check_input(bb: Backbone, X) -> np.ndarray:
    X = X.data if isinstance(X, DescriptorMatrix) else np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] != bb.dim:
        raise ParameterError(f"expected an N x {bb.dim} input, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("input contains non-finite values")
    return X


def _run_layers(bb: Backbone, H: np.ndarray, first: int, last: int) -> np.ndarray:
    for layer in range(first, last + 1):
        Q, K, V = _qkv(bb, H, layer)
        H = _mix(bb, softmax_rows(_logits(bb, Q, K)), V, H)
    return H


def forward_plain(bb: Backbone, X, upto_layer: int):
    """Hidden state entering ``upto_layer`` together with that layer's Q, K, V."""
    X = _check_input(bb, X)
    if not 1 <= upto_layer <= bb.layers:
        raise ParameterError(f"upto_layer must be in [1, {bb.layers}], got {upto_layer}")
    H = _run_layers(bb, X, 1, upto_layer - 1)
    Q, K, V = _qkv(bb, H, upto_layer)
    return H, Q, K, V


def forward(bb: Backbone, X) -> np.ndarray:
    """Full unmasked pass through all layers."""
    return _run_layers(bb, _check_input(bb, X), 1, bb.layers)


def attention_weights(bb: Backbone, X, upto_layer: int) -> np.ndarray:
    """Row-stochastic attention matrix of a plain layer."""
    _, Q, K, _ = forward_plain(bb, X, upto_layer)
    return softmax_rows(_logits(bb, Q, K))


@dataclass(frozen=True)
class _Prefix:
    H: np.ndarray
    G: np.ndarray
    V: np.ndarray


def _prefix(bb: Backbone, X) -> _Prefix:
    H, Q, K, V = forward_plain(bb, X, bb.masked_layer)
    return _Prefix(H, _logits(bb, Q, K), V)


def _resolve_mask(j, mask_kind, shape, alpha):
    if isinstance(mask_kind, AttentionMask):
        if mask_kind.seed_patch != j:
            raise ParameterError("mask seed patch does not match j")
        return mask_kind
    if mask_kind == "ones":
        return unit_mask(j, shape)
    return build_mask(j, mask_kind, shape, alpha)


def _grid_for(X, shape, n):
    if shape is not None:
        if shape.n != n:
            raise ParameterError(f"grid has {shape.n} patches but input has {n} rows")
        return shape
    if isinstance(X, DescriptorMatrix):
        return X.shape
    return GridShape.for_count(n, 1)


def _descriptor_from_prefix(bb: Backbone, pre: _Prefix, mask: AttentionMask) -> np.ndarray:
    A = softmax_rows(masked_similarity(pre.G, mask, bb.r_sup))
    H = _mix(bb, A, pre.V, pre.H)
    H = _run_layers(bb, H, bb.masked_layer + 1, bb.layers)
    return H[mask.seed_patch].copy()


def masked_layer_attention(bb: Backbone, X, j: int, mask_kind="hard", alpha: float = 0.0,
                           shape: GridShape | None = None) -> np.ndarray:
    """Softmax weights at the masked layer for patch ``j`` (N x N, row-stochastic)."""
    Xa = _check_input(bb, X)
    grid = _grid_for(X, shape, Xa.shape[0])
    mask = _resolve_mask(j, mask_kind, grid, alpha)
    pre = _prefix(bb, Xa)
    return softmax_rows(masked_similarity(pre.G, mask, bb.r_sup))


def extract_patch_descriptor(bb: Backbone, X, j: int, mask_kind="hard", alpha: float = 0.0,
                             shape: GridShape | None = None) -> np.ndarray:
    """Descriptor of patch ``j``: masked attention at ``bb.masked_layer``, then plain layers.

    ``mask_kind`` is ``"hard"``, ``"exp2"``, ``"inverse"``, ``"ones"`` (no masking)
    or a prebuilt :class:`AttentionMask`.
    """
    Xa = _check_input(bb, X)
    grid = _grid_for(X, shape, Xa.shape[0])
    if not 0 <= j < Xa.shape[0]:
        raise ParameterError(f"patch index {j} out of range [0, {Xa.shape[0]})")
    mask = _resolve_mask(j, mask_kind, grid, alpha)
    return _descriptor_from_prefix(bb, _prefix(bb, Xa), mask)


def extract_subset(bb: Backbone, X, indices, mask_kind="hard", alpha: float = 0.0,
                   shape: GridShape | None = None, workers: int | None = None) -> np.ndarray:
    """Descriptors for ``indices`` (one masked pass each), as a ``len(indices) x D`` array.

    The layers before the masked one do not depend on the mask, so they run
    once. Row ``k`` equals ``extract_patch_descriptor(bb, X, indices[k], ...)``
    bit for bit, including when ``workers > 1``.
    """
    Xa = _check_input(bb, X)
    n = Xa.shape[0]
    grid = _grid_for(X, shape, n)
    idx = [int(i) for i in np.asarray(indices).ravel()]
    if not idx:
        raise ParameterError("index set must be non-empty")
    for i in idx:
        if not 0 <= i < n:
            raise ParameterError(f"patch index {i} out of range [0, {n})")
    pre = _prefix(bb, Xa)

    def one(i):
        return _descriptor_from_prefix(bb, pre, _resolve_mask(i, mask_kind, grid, alpha))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, idx))
    else:
        rows = [one(i) for i in idx]
    return np.vstack(rows)


def extract_all(bb: Backbone, X, mask_kind="hard", alpha: float = 0.0,
                shape: GridShape | None = None, workers: int | None = None) -> DescriptorMatrix:
    Xa = _check_input(bb, X)
    grid = _grid_for(X, shape, Xa.shape[0])
    rows = extract_subset(bb, Xa, np.arange(Xa.shape[0]), mask_kind, alpha, grid, workers)
    return DescriptorMatrix(GridShape(grid.h_patches, grid.w_patches, bb.dim), rows)
