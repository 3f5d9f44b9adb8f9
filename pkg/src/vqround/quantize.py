"""Uniform affine quantization and the learned rounding transform.

Weights quantize per row: each row of ``W`` gets its own positive scale
and integer zero-point covering an asymmetric ``[0, 2^bits - 1]`` grid.
Round-to-nearest uses round-half-away-from-zero. The adaptive path
replaces the nearest-grid decision with a rounding matrix ``H`` in
``[0, 1]`` produced by a stretched sigmoid of a latent matrix, so the
up/down decision of every entry can be optimized by gradient descent
and hardened to binary afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import BitsOutOfRange, DomainError, OutOfRange, ShapeMismatch


@dataclass(frozen=True)
class RoundingSpec:
    """Constants of the stretched sigmoid and the hardening threshold.

    The stretch past [0, 1] (gamma < 0 < 1 < zeta) keeps both endpoints
    reachable at finite latent values, so exact round-up/round-down
    decisions have finite preimages under the inverse transform.
    """

    gamma: float = -0.1
    zeta: float = 1.1
    hard_threshold: float = 0.5

    def __post_init__(self):
        if not (self.gamma < 0.0 < 1.0 < self.zeta):
            raise DomainError(
                f"need gamma < 0 < 1 < zeta, got gamma={self.gamma}, zeta={self.zeta}"
            )


@dataclass
class QuantParams:
    """Per-row scale/zero-point for an asymmetric b-bit integer grid."""

    bits: int
    scale: np.ndarray  # (rows,), strictly positive
    zero: np.ndarray  # (rows,), integers in [0, q_max]

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 2 <= self.bits <= 8:
            raise BitsOutOfRange(f"bits must be an integer in [2, 8], got {self.bits!r}")
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.zero = np.asarray(self.zero, dtype=np.int64)
        if self.scale.ndim != 1 or np.any(self.scale <= 0.0):
            raise DomainError("per-row scales must be a 1-d positive vector")
        if self.zero.shape != self.scale.shape or np.any(
            (self.zero < 0) | (self.zero > self.q_max)
        ):
            raise DomainError("zero-points must match the scales and lie on the grid")

    @property
    def q_min(self) -> int:
        return 0

    @property
    def q_max(self) -> int:
        return 2**self.bits - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _check_bits(bits: int) -> None:
    if not isinstance(bits, (int, np.integer)) or not 2 <= int(bits) <= 8:
        raise BitsOutOfRange(f"bits must be an integer in [2, 8], got {bits!r}")


def _check_rows(W: np.ndarray, p: QuantParams) -> None:
    if W.ndim != 2:
        raise ShapeMismatch(f"expected 2-d weights, got shape {W.shape}")
    if p.scale.shape != (W.shape[0],) or p.zero.shape != (W.shape[0],):
        raise ShapeMismatch(
            f"per-row params of length {p.scale.shape} do not match {W.shape[0]} rows"
        )


def compute_quant_params(W, bits: int) -> QuantParams:
    """Min/max-calibrated per-row scale and zero-point.

    The row range is widened to include 0 so the zero-point always lies
    on the grid. Constant rows degenerate to scale 1 / zero 0, where
    quantization is lossless.
    """
    _check_bits(bits)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeMismatch(f"expected 2-d weights, got shape {W.shape}")
    q_max = 2 ** int(bits) - 1
    lo = np.minimum(0.0, W.min(axis=1))
    hi = np.maximum(0.0, W.max(axis=1))
    span = hi - lo
    scale = span / q_max
    # Constant rows and subnormal spans (where the division underflows)
    # degenerate to a unit scale; quantization is lossless there.
    scale = np.where(scale > 0.0, scale, 1.0)
    zero = np.clip(round_half_away(-lo / scale), 0, q_max).astype(np.int64)
    return QuantParams(bits=int(bits), scale=scale, zero=zero)


def rtn_quantize(W, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    """Round-to-nearest: returns the integer grid values and the dequant."""
    W = np.asarray(W, dtype=np.float64)
    _check_rows(W, p)
    s = p.scale[:, None]
    z = p.zero[:, None]
    q = np.clip(round_half_away(W / s) + z, p.q_min, p.q_max)
    return q.astype(np.int64), s * (q - z)


def rectified_sigmoid(A, spec: RoundingSpec = RoundingSpec()) -> np.ndarray:
    """H = clip(gamma + (zeta - gamma) * sigmoid(A), 0, 1), elementwise."""
    A = np.asarray(A, dtype=np.float64)
    return np.clip(spec.gamma + (spec.zeta - spec.gamma) * expit(A), 0.0, 1.0)


def inverse_rectified_sigmoid(H, spec: RoundingSpec = RoundingSpec()) -> np.ndarray:
    """Latent preimage of a rounding matrix.

    Well-defined on the closed interval [0, 1]: with the default stretch
    the sigmoid argument stays inside [1/12, 11/12], so the logit is
    finite even at the endpoints.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.size and (H.min() < 0.0 or H.max() > 1.0):
        raise OutOfRange("rounding values must lie in [0, 1]")
    return logit((H - spec.gamma) / (spec.zeta - spec.gamma))


def adaptive_quantize(W, p: QuantParams, H) -> tuple[np.ndarray, np.ndarray]:
    """Quantize with explicit up/down decisions.

    ``Q = clip(floor(W/s) + H + z, q_min, q_max)`` stays real-valued
    while H is soft so gradients can flow; it is integral exactly when
    H is binary.
    """
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    _check_rows(W, p)
    if H.shape != W.shape:
        raise ShapeMismatch(f"H shape {H.shape} != W shape {W.shape}")
    if H.size and (H.min() < 0.0 or H.max() > 1.0):
        raise OutOfRange("rounding values must lie in [0, 1]")
    s = p.scale[:, None]
    z = p.zero[:, None]
    q = np.clip(np.floor(W / s) + H + z, p.q_min, p.q_max)
    return q, s * (q - z)


def hard_round(H, spec: RoundingSpec = RoundingSpec()) -> np.ndarray:
    """Binarize soft decisions; values at the threshold round up."""
    H = np.asarray(H, dtype=np.float64)
    return np.where(H >= spec.hard_threshold, 1.0, 0.0)


def rounding_regularizer(H, beta: float) -> float:
    """sum(1 - |2H - 1|^beta): zero iff H is binary, maximal at H = 1/2."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    H = np.asarray(H, dtype=np.float64)
    return float(np.sum(1.0 - np.abs(2.0 * H - 1.0) ** beta))


def regularizer_grad(H, beta: float) -> np.ndarray:
    """Analytic derivative of :func:`rounding_regularizer` w.r.t. H.

    Defined as 0 at H = 1/2 (the stationary point for beta > 1 and by
    convention for beta <= 1, where the one-sided limits diverge).
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    H = np.asarray(H, dtype=np.float64)
    t = 2.0 * H - 1.0
    a = np.abs(t)
    grad = np.zeros_like(H)
    mask = a > 0.0
    grad[mask] = -2.0 * beta * np.sign(t[mask]) * a[mask] ** (beta - 1.0)
    return grad
