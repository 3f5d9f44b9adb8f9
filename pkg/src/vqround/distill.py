"""Toy teacher/student distillation over codebook parameters.

A tiny feed-forward network (linear layers, ReLU between, softmax head)
stands in for the full-size model pair: the student's weights are
frozen at the teacher's values and only the per-layer rounding
codebooks train, against a temperature-softened KL between student and
teacher logits plus the rounding regularizer after warm-up. All
gradients are computed analytically; there is no autodiff underneath.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .errors import ArchitectureMismatch, DomainError, ShapeMismatch
from .hessian import (
    HessianConfig,
    accumulate_hessian,
    damped_inverse_factor,
    hessian_aware_init,
    residual_init,
)
from .optim import (
    AdamState,
    FinetuneConfig,
    adam_step,
    anneal_beta,
    scatter_to_centroids,
    soft_quant_forward,
    warmup_steps,
)
from .quantize import (
    QuantParams,
    RoundingSpec,
    adaptive_quantize,
    compute_quant_params,
    hard_round,
    inverse_rectified_sigmoid,
    rectified_sigmoid,
    regularizer_grad,
    rounding_regularizer,
)
from .reparam import Codebook, fit_codebook, vq_reconstruct


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    params: QuantParams | None = None
    codebook: Codebook | None = None


@dataclass
class TinyNet:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ArchitectureMismatch(
                    f"layer dims {prev.weight.shape} -> {nxt.weight.shape} incompatible"
                )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].weight.shape[1],) + tuple(
            layer.weight.shape[0] for layer in self.layers
        )


def random_net(dims: tuple[int, ...], seed: int = 0) -> TinyNet:
    """Gaussian-init network with 1/sqrt(fan_in) weight scale."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = rng.normal(size=(fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(Layer(weight=w))
    return TinyNet(layers=layers)


def effective_weight(layer: Layer, spec: RoundingSpec, mode: str) -> np.ndarray:
    """Layer weight under a given rounding mode: fp, soft, or hard."""
    if mode == "fp" or layer.codebook is None:
        return np.asarray(layer.weight, dtype=np.float64)
    A = vq_reconstruct(layer.codebook)
    H = rectified_sigmoid(A, spec)
    if mode == "hard":
        H = hard_round(H, spec)
    elif mode != "soft":
        raise DomainError(f"unknown weight mode {mode!r}")
    _, what = adaptive_quantize(layer.weight, layer.params, H)
    return what


def forward_logits(net: TinyNet, x, spec: RoundingSpec = RoundingSpec(), mode: str = "fp") -> np.ndarray:
    """Logits for input columns x of shape (n0, batch)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != net.dims[0]:
        raise ShapeMismatch(f"input dim {a.shape[0]} != network input {net.dims[0]}")
    for i, layer in enumerate(net.layers):
        z = effective_weight(layer, spec, mode) @ a
        a = np.maximum(z, 0.0) if i < len(net.layers) - 1 else z
    return a


def kl_loss(student_logits, teacher_logits, temperature: float = 1.0) -> float:
    """Mean per-row KL of softened student vs teacher distributions.

    Rows are batch entries; the student distribution is the left
    argument of the divergence.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeMismatch(f"logit shapes differ: {s.shape} vs {t.shape}")
    if s.ndim == 1:
        s = s[None, :]
        t = t[None, :]
    log_ps = log_softmax(s / temperature, axis=1)
    log_pt = log_softmax(t / temperature, axis=1)
    ps = np.exp(log_ps)
    return float(np.mean(np.sum(ps * (log_ps - log_pt), axis=1)))


def _kl_and_logit_grad(student_logits, teacher_logits, temperature):
    """KL (mean over columns) and its gradient w.r.t. student logits.

    Logits are (classes, batch) columns here, matching the forward pass.
    """
    log_ps = log_softmax(student_logits / temperature, axis=0)
    log_pt = log_softmax(teacher_logits / temperature, axis=0)
    ps = np.exp(log_ps)
    per_col = np.sum(ps * (log_ps - log_pt), axis=0)
    batch = student_logits.shape[1]
    grad = ps * ((log_ps - log_pt) - per_col[None, :]) / (temperature * batch)
    return float(np.mean(per_col)), grad


@dataclass
class E2EResult:
    codebooks: list[Codebook]
    loss_trace: np.ndarray
    kd_trace: np.ndarray
    reg_trace: np.ndarray
    hard_kl_warmup_end: float
    hard_kl_final: float


def _mean_hard_kl(teacher, student, data, cfg, spec):
    total = 0.0
    for x in data:
        y_t = forward_logits(teacher, x, spec, mode="fp")
        y_s = forward_logits(student, x, spec, mode="hard")
        total += kl_loss(y_s.T, y_t.T, cfg.temperature)
    return total / len(data)


def e2e_step(
    teacher: TinyNet,
    student: TinyNet,
    x,
    lam: float,
    beta: float,
    temperature: float = 1.0,
    spec: RoundingSpec = RoundingSpec(),
) -> tuple[float, float, float, list[np.ndarray]]:
    """Loss terms and per-layer codebook gradients for one batch.

    Returns (total, kd, reg, grads). Backpropagation runs analytically
    through the softmax/KL head, the linear layers and ReLUs, the soft
    quantizer (per-row scale inside the active clip region), the
    stretched sigmoid, and the frozen index map.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n_layers = len(student.layers)

    fwds = [
        soft_quant_forward(l.weight, l.params, l.codebook, spec)
        for l in student.layers
    ]

    acts = [x]
    pre = []
    a = x
    for i, fwd in enumerate(fwds):
        z_l = fwd.what @ a
        pre.append(z_l)
        a = np.maximum(z_l, 0.0) if i < n_layers - 1 else z_l
        acts.append(a)

    y_teacher = forward_logits(teacher, x, spec, mode="fp")
    kd, delta = _kl_and_logit_grad(acts[-1], y_teacher, temperature)
    reg = sum(rounding_regularizer(fwd.rounding, beta) for fwd in fwds)
    total = kd + lam * reg

    grads: list[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        fwd = fwds[i]
        layer = student.layers[i]
        dw = delta @ acts[i].T
        dl_dh = dw * layer.params.scale[:, None] * fwd.clip_active
        if lam != 0.0:
            dl_dh = dl_dh + lam * regularizer_grad(fwd.rounding, beta)
        grads[i] = scatter_to_centroids(dl_dh * fwd.dh_da, layer.codebook)
        if i > 0:
            delta = (fwd.what.T @ delta) * (pre[i - 1] > 0.0)
    return total, kd, reg, grads


def e2e_finetune(
    teacher: TinyNet,
    student: TinyNet,
    data: list,
    cfg: FinetuneConfig,
    spec: RoundingSpec = RoundingSpec(),
) -> E2EResult:
    """Distill the student's codebooks against the frozen teacher.

    Samples are drawn round-robin, ``cfg.batch`` consecutive columns per
    step (default 1). Through warm-up the objective is the distillation
    term alone; afterwards the annealed rounding regularizer joins with
    weight ``cfg.lam``. Codebook indices stay frozen throughout.
    """
    if teacher.dims != student.dims:
        raise ArchitectureMismatch(
            f"teacher dims {teacher.dims} != student dims {student.dims}"
        )
    for i, layer in enumerate(student.layers):
        if layer.codebook is None or layer.params is None:
            raise ArchitectureMismatch(f"student layer {i} carries no codebook")
    if not data:
        raise DomainError("empty calibration data")

    states = [AdamState.for_params(l.codebook.centroids) for l in student.layers]
    w = warmup_steps(cfg)
    loss_trace = np.zeros(cfg.steps)
    kd_trace = np.zeros(cfg.steps)
    reg_trace = np.zeros(cfg.steps)
    hard_kl_warmup_end = np.nan
    if w == 0:
        hard_kl_warmup_end = _mean_hard_kl(teacher, student, data, cfg, spec)

    cursor = 0
    for t in range(1, cfg.steps + 1):
        cols = []
        for _ in range(cfg.batch):
            x = np.asarray(data[cursor % len(data)], dtype=np.float64)
            cols.append(x[:, None] if x.ndim == 1 else x)
            cursor += 1
        x = np.hstack(cols)

        beta = anneal_beta(t, cfg)
        lam_t = 0.0 if t <= w else cfg.lam

        total, kd, reg, grads = e2e_step(
            teacher, student, x, lam_t, beta, cfg.temperature, spec
        )
        kd_trace[t - 1] = kd
        reg_trace[t - 1] = reg
        loss_trace[t - 1] = total

        for i, layer in enumerate(student.layers):
            layer.codebook.centroids = adam_step(
                states[i], layer.codebook.centroids, grads[i], cfg.lr
            )

        if t == w:
            hard_kl_warmup_end = _mean_hard_kl(teacher, student, data, cfg, spec)

    hard_kl_final = _mean_hard_kl(teacher, student, data, cfg, spec)
    return E2EResult(
        codebooks=[l.codebook for l in student.layers],
        loss_trace=loss_trace,
        kd_trace=kd_trace,
        reg_trace=reg_trace,
        hard_kl_warmup_end=float(hard_kl_warmup_end),
        hard_kl_final=float(hard_kl_final),
    )


def build_student(
    teacher: TinyNet,
    bits: int,
    k: int,
    d: int,
    kmeans_iters: int = 100,
    seed: int = 0,
    spec: RoundingSpec = RoundingSpec(),
    init: str = "residual",
    calib=None,
    codebook_space: str = "latent",
) -> TinyNet:
    """Clone the teacher with per-layer quant params and fitted codebooks.

    ``init`` picks the rounding seed: plain floor residuals or the
    curvature-compensated sweep (which needs calibration inputs and
    propagates them through the teacher to reach every layer). K-means
    runs in latent space by default; ``codebook_space="residual"``
    clusters the seed itself and maps the centroids through the inverse
    transform afterwards, so the forward pipeline is unchanged. The
    centroid count clamps to the number of blocks in each layer.
    """
    if init not in ("residual", "hessian"):
        raise DomainError(f"unknown init {init!r}")
    if codebook_space not in ("latent", "residual"):
        raise DomainError(f"unknown codebook space {codebook_space!r}")
    if init == "hessian":
        if calib is None:
            raise DomainError("hessian init requires calibration inputs")
        x_l = np.asarray(calib, dtype=np.float64)
        if x_l.ndim != 2 or x_l.shape[0] != teacher.dims[0]:
            raise ShapeMismatch(
                f"calibration shape {x_l.shape} does not feed input dim {teacher.dims[0]}"
            )

    layers = []
    for li, t_layer in enumerate(teacher.layers):
        W = np.asarray(t_layer.weight, dtype=np.float64)
        p = compute_quant_params(W, bits)
        if init == "hessian":
            factor = damped_inverse_factor(accumulate_hessian(x_l), HessianConfig())
            h_seed = hessian_aware_init(W, p, factor).h_tilde
            x_l = np.maximum(W @ x_l, 0.0) if li < len(teacher.layers) - 1 else x_l
        else:
            h_seed = residual_init(W, p)

        n_blocks = W.size // d
        kc = min(k, n_blocks)
        if codebook_space == "latent":
            cb = fit_codebook(inverse_rectified_sigmoid(h_seed, spec), d, kc,
                              iters=kmeans_iters, seed=seed + li)
        else:
            cb = fit_codebook(h_seed, d, kc, iters=kmeans_iters, seed=seed + li)
            cb.centroids = inverse_rectified_sigmoid(
                np.clip(cb.centroids, 0.0, 1.0), spec
            )
        layers.append(Layer(weight=W.copy(), params=p, codebook=cb))
    return TinyNet(layers=layers)
