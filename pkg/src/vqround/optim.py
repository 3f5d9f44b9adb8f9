"""Codebook optimization: Adam, the sharpening schedule, and blockwise
reconstruction of a single linear layer.

The blockwise objective is the squared output reconstruction error
``||W X - What X||_F^2`` plus the weighted rounding regularizer; its
gradient flows analytically through the quantizer (scale inside the
active clip region, zero at and beyond the boundaries), the stretched
sigmoid, and the frozen index map into the centroids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, ShapeMismatch, StepOutOfRange
from .quantize import (
    QuantParams,
    RoundingSpec,
    adaptive_quantize,
    rectified_sigmoid,
    regularizer_grad,
    rounding_regularizer,
)
from .reparam import Codebook, vq_reconstruct


@dataclass
class FinetuneConfig:
    lr: float = 1e-2
    lam: float = 1e-2  # weight of the rounding regularizer
    beta_high: float = 20.0
    beta_low: float = 2.0
    steps: int = 5000
    warmup_frac: float = 0.1
    temperature: float = 1.0
    batch: int = 1
    seed: int = 0
    anneal_shape: str = "linear"  # or "cosine"

    def __post_init__(self):
        if not self.beta_high >= self.beta_low > 0:
            raise DomainError(
                f"need beta_high >= beta_low > 0, got {self.beta_high}, {self.beta_low}"
            )
        if not 0.0 <= self.warmup_frac < 1.0:
            raise DomainError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise DomainError(f"lr must be positive, got {self.lr}")
        if not self.temperature > 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")
        if self.batch < 1:
            raise DomainError(f"batch must be >= 1, got {self.batch}")
        if self.anneal_shape not in ("linear", "cosine"):
            raise DomainError(f"unknown anneal shape {self.anneal_shape!r}")


def warmup_steps(cfg: FinetuneConfig) -> int:
    # Guard against float fuzz in warmup_frac * steps (0.1 * 5000 -> 500).
    return math.floor(cfg.warmup_frac * cfg.steps + 1e-9)


def anneal_beta(t: int, cfg: FinetuneConfig) -> float:
    """Sharpening exponent at step t (1-based).

    Holds beta_high through warm-up, then interpolates down to beta_low
    at the final step.
    """
    if not 1 <= t <= cfg.steps:
        raise StepOutOfRange(f"step {t} outside [1, {cfg.steps}]")
    w = warmup_steps(cfg)
    if t <= w:
        return cfg.beta_high
    span = cfg.steps - (w + 1)
    u = 0.0 if span <= 0 else (t - (w + 1)) / span
    if cfg.anneal_shape == "cosine":
        return cfg.beta_low + (cfg.beta_high - cfg.beta_low) * 0.5 * (1.0 + math.cos(math.pi * u))
    return cfg.beta_high + (cfg.beta_low - cfg.beta_high) * u


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params, dtype=np.float64),
                   v=np.zeros_like(params, dtype=np.float64))


def adam_step(state: AdamState, params, grads, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatch(
            f"params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class SoftQuantForward:
    """Soft quantizer outputs plus the masks the backward pass needs."""

    latent: np.ndarray  # reconstructed latent matrix
    rounding: np.ndarray  # H in [0, 1]
    what: np.ndarray  # soft-dequantized weights
    clip_active: np.ndarray  # where the integer-range clip is inactive
    dh_da: np.ndarray  # sigmoid slope, zeroed where its clip saturates


def soft_quant_forward(W, p: QuantParams, cb: Codebook, spec: RoundingSpec) -> SoftQuantForward:
    W = np.asarray(W, dtype=np.float64)
    A = vq_reconstruct(cb)
    g = spec.gamma + (spec.zeta - spec.gamma) * expit(A)
    H = np.clip(g, 0.0, 1.0)
    s = p.scale[:, None]
    z = p.zero[:, None]
    v = np.floor(W / s) + H + z
    q = np.clip(v, p.q_min, p.q_max)
    what = s * (q - z)
    clip_active = (v > p.q_min) & (v < p.q_max)
    sig = expit(A)
    dh_da = (spec.zeta - spec.gamma) * sig * (1.0 - sig) * ((g > 0.0) & (g < 1.0))
    return SoftQuantForward(latent=A, rounding=H, what=what,
                            clip_active=clip_active, dh_da=dh_da)


def scatter_to_centroids(dl_da: np.ndarray, cb: Codebook) -> np.ndarray:
    """Accumulate per-entry latent gradients into the shared centroids."""
    block_grads = dl_da.reshape(-1, cb.d)
    grad = np.zeros_like(cb.centroids)
    np.add.at(grad, cb.indices, block_grads)
    return grad


def blockwise_loss(
    W,
    X,
    p: QuantParams,
    cb: Codebook,
    spec: RoundingSpec = RoundingSpec(),
    lam: float = 1e-2,
    beta: float = 20.0,
) -> float:
    """||W X - What X||_F^2 + lam * regularizer, What from the codebook."""
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if W.shape[1] != X.shape[0]:
        raise ShapeMismatch(f"W cols {W.shape[1]} != X rows {X.shape[0]}")
    if cb.shape != W.shape:
        raise ShapeMismatch(f"codebook shape {cb.shape} != W shape {W.shape}")
    A = vq_reconstruct(cb)
    H = rectified_sigmoid(A, spec)
    _, what = adaptive_quantize(W, p, H)
    resid = (W - what) @ X
    loss = float(np.sum(resid * resid))
    if lam != 0.0:
        loss += lam * rounding_regularizer(H, beta)
    return loss


def blockwise_grad(
    W,
    X,
    p: QuantParams,
    cb: Codebook,
    spec: RoundingSpec = RoundingSpec(),
    lam: float = 1e-2,
    beta: float = 20.0,
) -> np.ndarray:
    """Gradient of :func:`blockwise_loss` w.r.t. the centroids (k, d)."""
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if W.shape[1] != X.shape[0]:
        raise ShapeMismatch(f"W cols {W.shape[1]} != X rows {X.shape[0]}")
    if cb.shape != W.shape:
        raise ShapeMismatch(f"codebook shape {cb.shape} != W shape {W.shape}")
    fwd = soft_quant_forward(W, p, cb, spec)
    resid = (W - fwd.what) @ X
    dl_dwhat = -2.0 * (resid @ X.T)
    dl_dh = dl_dwhat * p.scale[:, None] * fwd.clip_active
    if lam != 0.0:
        dl_dh = dl_dh + lam * regularizer_grad(fwd.rounding, beta)
    dl_da = dl_dh * fwd.dh_da
    return scatter_to_centroids(dl_da, cb)


def optimize_blockwise(
    W,
    X,
    p: QuantParams,
    cb: Codebook,
    cfg: FinetuneConfig,
    spec: RoundingSpec = RoundingSpec(),
) -> tuple[Codebook, np.ndarray]:
    """Run Adam on the centroids against the blockwise objective.

    The regularizer carries zero weight through warm-up; indices never
    change. Returns the optimized codebook and the per-step loss trace
    (evaluated at the pre-update parameters).
    """
    centroids = cb.centroids.astype(np.float64).copy()
    work = Codebook(centroids=centroids, indices=cb.indices.copy(), shape=cb.shape)
    state = AdamState.for_params(centroids)
    w = warmup_steps(cfg)
    trace = np.zeros(cfg.steps)
    for t in range(1, cfg.steps + 1):
        beta = anneal_beta(t, cfg)
        lam_t = 0.0 if t <= w else cfg.lam
        trace[t - 1] = blockwise_loss(W, X, p, work, spec, lam_t, beta)
        grad = blockwise_grad(W, X, p, work, spec, lam_t, beta)
        work.centroids = adam_step(state, work.centroids, grad, cfg.lr)
    return work, trace
