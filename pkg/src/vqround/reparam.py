"""Codebook reparameterization of the latent rounding matrix, plus the
low-rank and Kronecker-product baselines it is compared against.

A matrix is flattened row-major and chopped into contiguous length-d
blocks; K-means over the blocks yields k centroids and a frozen index
per block. Reconstruction is a table lookup followed by the inverse
reshape, so only the k*d centroid values remain trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from . import tensor_io
from .errors import (
    DomainError,
    IndivisibleShape,
    KTooLarge,
    RankTooLarge,
    ShapeFactorizationMismatch,
    ShapeMismatch,
)


@dataclass
class Codebook:
    centroids: np.ndarray  # (k, d)
    indices: np.ndarray  # (L,) ints in [0, k)
    shape: tuple[int, int]  # source matrix shape, rows*cols == L*d

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.centroids.ndim != 2:
            raise ShapeMismatch(f"centroids must be 2-d, got {self.centroids.shape}")
        if self.indices.ndim != 1:
            raise ShapeMismatch(f"indices must be 1-d, got {self.indices.shape}")
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= self.k
        ):
            raise DomainError("codebook indices out of range")
        m, n = self.shape
        if m * n != self.indices.size * self.d:
            raise ShapeMismatch(
                f"shape {self.shape} incompatible with {self.indices.size} blocks of size {self.d}"
            )

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


def flatten_blocks(A, d: int) -> np.ndarray:
    """Row-major flatten chopped into contiguous length-d blocks."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d matrix, got shape {A.shape}")
    if d < 1 or A.size % d != 0:
        raise IndivisibleShape(f"matrix of {A.size} entries not divisible into blocks of {d}")
    return A.reshape(-1, d)


def unflatten_blocks(blocks, shape: tuple[int, int]) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    m, n = shape
    if blocks.size != m * n:
        raise ShapeMismatch(f"{blocks.size} values cannot fill shape {shape}")
    return blocks.reshape(m, n)


def vq_assign(blocks, centroids) -> np.ndarray:
    """Nearest-centroid index per block (squared Euclidean, ties to the
    lowest centroid index)."""
    blocks = np.asarray(blocks, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if blocks.shape[1] != centroids.shape[1]:
        raise ShapeMismatch(
            f"block dim {blocks.shape[1]} != centroid dim {centroids.shape[1]}"
        )
    return np.argmin(cdist(blocks, centroids, "sqeuclidean"), axis=1)


def wcss(blocks, centroids, indices) -> float:
    """Within-cluster sum of squares of an assignment."""
    blocks = np.asarray(blocks, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    diffs = blocks - centroids[np.asarray(indices, dtype=np.int64)]
    return float(np.sum(diffs * diffs))


def _plusplus_seed(blocks: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    L, d = blocks.shape
    centroids = np.empty((k, d))
    first = int(rng.integers(L))
    centroids[0] = blocks[first]
    closest = np.sum((blocks - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(L, p=closest / total))
        else:
            # All remaining blocks coincide with chosen centroids.
            idx = int(rng.integers(L))
        centroids[c] = blocks[idx]
        closest = np.minimum(closest, np.sum((blocks - centroids[c]) ** 2, axis=1))
    return centroids


def kmeans_fit(
    blocks,
    k: int,
    iters: int = 100,
    seed: int = 0,
    shape: tuple[int, int] | None = None,
) -> Codebook:
    """Lloyd's algorithm with distance-weighted seeding.

    ``iters`` is a budget; the loop stops early once assignments reach a
    fixed point. Ties assign to the lowest centroid index; a cluster
    that empties is reseeded to the block currently farthest from its
    own centroid (clusters emptied *by* a reseed are caught on the next
    pass). The objective is non-increasing across iterations, which the
    loop asserts.

    ``shape`` records the source-matrix shape for reconstruction and
    defaults to the block matrix itself.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2:
        raise ShapeMismatch(f"expected 2-d blocks, got shape {blocks.shape}")
    L, d = blocks.shape
    if k < 1 or k > L:
        raise KTooLarge(f"k must be in [1, {L}], got {k}")
    if iters < 1:
        raise DomainError(f"iters must be >= 1, got {iters}")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_seed(blocks, k, rng)

    prev_assign = None
    prev_obj = np.inf
    for _ in range(iters):
        dists = cdist(blocks, centroids, "sqeuclidean")
        assign = np.argmin(dists, axis=1)
        own = dists[np.arange(L), assign]

        counts = np.bincount(assign, minlength=k)
        reseeded = False
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(own))
            centroids[c] = blocks[far]
            counts[assign[far]] -= 1
            assign[far] = c
            counts[c] = 1
            own[far] = 0.0
            reseeded = True

        obj = float(own.sum())
        assert obj <= prev_obj * (1.0 + 1e-9) + 1e-12, "objective increased"
        prev_obj = obj

        if not reseeded and prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        # A cluster emptied by a reseed donation keeps its centroid until
        # the next pass picks it up again.
        sums = np.zeros((k, d))
        np.add.at(sums, assign, blocks)
        occupied = counts > 0
        centroids = centroids.copy()
        centroids[occupied] = sums[occupied] / counts[occupied, None]

    indices = vq_assign(blocks, centroids)
    if shape is None:
        shape = (L, d)
    return Codebook(centroids=centroids, indices=indices, shape=tuple(shape))


def fit_codebook(A, d: int, k: int, iters: int = 100, seed: int = 0) -> Codebook:
    """Flatten a matrix into blocks and fit a codebook for it."""
    A = np.asarray(A, dtype=np.float64)
    blocks = flatten_blocks(A, d)
    return kmeans_fit(blocks, k, iters=iters, seed=seed, shape=A.shape)


def vq_reconstruct(cb: Codebook) -> np.ndarray:
    """Gather each block's centroid and undo the flatten."""
    return unflatten_blocks(cb.centroids[cb.indices], cb.shape)


def save_codebook(cb: Codebook, prefix: str) -> None:
    """Serialize as a centroid tensor plus a raw u32 index sidecar."""
    tensor_io.save_tensor(cb.centroids, f"{prefix}.centroids.vqt")
    tensor_io.save_indices_u32(cb.indices, f"{prefix}.indices.u32")


def load_codebook(prefix: str, shape: tuple[int, int]) -> Codebook:
    centroids = tensor_io.load_tensor(f"{prefix}.centroids.vqt")
    indices = tensor_io.load_indices_u32(f"{prefix}.indices.u32")
    return Codebook(centroids=centroids, indices=indices, shape=tuple(shape))


@dataclass
class LowRankApprox:
    left: np.ndarray  # (m, r)
    right: np.ndarray  # (n, r)
    rank: int
    tail_energy: float  # Frobenius norm of the discarded spectrum

    def reconstruct(self) -> np.ndarray:
        return self.left @ self.right.T


def svd_lowrank(A, r: int) -> LowRankApprox:
    """Best rank-r approximation by truncated SVD.

    The Frobenius error equals sqrt(sum of squared discarded singular
    values) and the spectral error equals the first discarded one.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d matrix, got shape {A.shape}")
    if r < 1 or r > min(A.shape):
        raise RankTooLarge(f"rank must be in [1, {min(A.shape)}], got {r}")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    left = U[:, :r] * S[:r]
    right = Vt[:r].T
    tail = float(np.sqrt(np.sum(S[r:] ** 2)))
    return LowRankApprox(left=left, right=right, rank=r, tail_energy=tail)


def rearrange(A, a: int, b: int, c: int, d2: int) -> np.ndarray:
    """Block-to-row shuffle that turns a Kronecker product into rank 1.

    ``A`` of shape (a*b, c*d2) is viewed as an a-by-c grid of b-by-d2
    blocks; block (i, j) becomes row j*a + i, laid out column-major.
    The shuffle is a permutation of entries, so the Frobenius norm is
    preserved exactly, and the image of ``kron(P, Q)`` is the rank-1
    outer product of the column-stacked factors.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape != (a * b, c * d2):
        raise ShapeFactorizationMismatch(
            f"shape {A.shape} does not factor as ({a}*{b}, {c}*{d2})"
        )
    return A.reshape(a, b, c, d2).transpose(2, 0, 3, 1).reshape(a * c, b * d2)


def rearrange_inverse(R, a: int, b: int, c: int, d2: int) -> np.ndarray:
    """Undo :func:`rearrange`."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape != (a * c, b * d2):
        raise ShapeFactorizationMismatch(
            f"shape {R.shape} does not factor as ({a}*{c}, {b}*{d2})"
        )
    return R.reshape(c, a, d2, b).transpose(1, 3, 0, 2).reshape(a * b, c * d2)


@dataclass
class KroneckerApprox:
    factor_a: np.ndarray  # (a, c)
    factor_b: np.ndarray  # (b, d2)
    tail_energy: float

    def reconstruct(self) -> np.ndarray:
        return np.kron(self.factor_a, self.factor_b)


def _unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    # Column-stacking order, matching the rearrangement's row layout.
    return v.reshape(cols, rows).T


def kronecker_approx(A, a: int, b: int, c: int, d2: int) -> KroneckerApprox:
    """Nearest single Kronecker product.

    Equivalent to the best rank-1 approximation of the rearranged
    matrix, so the Frobenius error is the tail of its spectrum.
    """
    R = rearrange(A, a, b, c, d2)
    U, S, Vt = np.linalg.svd(R, full_matrices=False)
    root = np.sqrt(S[0])
    factor_a = _unvec(root * U[:, 0], a, c)
    factor_b = _unvec(root * Vt[0], b, d2)
    tail = float(np.sqrt(np.sum(S[1:] ** 2)))
    return KroneckerApprox(factor_a=factor_a, factor_b=factor_b, tail_energy=tail)


def balanced_factors(m: int, n: int) -> tuple[int, int, int, int]:
    """Factor (m, n) as (a*b, c*d2) with a, c near the square roots."""

    def nearest_divisor(x: int) -> int:
        target = np.sqrt(x)
        divisors = [v for v in range(1, x + 1) if x % v == 0]
        return min(divisors, key=lambda v: (abs(v - target), v))

    a = nearest_divisor(m)
    c = nearest_divisor(n)
    return a, m // a, c, n // c


def param_count(
    method: str,
    m: int,
    n: int,
    *,
    k: int = 0,
    d: int = 0,
    r: int = 0,
    factors: tuple[int, int, int, int] | None = None,
) -> int:
    """Trainable-parameter count of each reparameterization.

    Codebook indices are frozen, so only centroid values count for the
    vq method.
    """
    if method == "elementwise":
        return m * n
    if method == "vq":
        return k * d
    if method == "lowrank":
        return r * (m + n)
    if method == "kronecker":
        if factors is None:
            factors = balanced_factors(m, n)
        a, b, c, d2 = factors
        return a * c + b * d2
    raise DomainError(f"unknown method {method!r}")
