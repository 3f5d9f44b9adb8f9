import math

import numpy as np
import pytest
from scipy.special import expit

from vqround import errors
from vqround.distill import (
    Layer,
    TinyNet,
    build_student,
    e2e_finetune,
    e2e_step,
    forward_logits,
    kl_loss,
    random_net,
)
from vqround.optim import FinetuneConfig, soft_quant_forward, warmup_steps
from vqround.quantize import QuantParams, RoundingSpec, inverse_rectified_sigmoid
from vqround.reparam import Codebook, fit_codebook

SPEC = RoundingSpec()


class TestTinyNet:
    def test_dims(self):
        net = random_net((16, 32, 4), seed=0)
        assert net.dims == (16, 32, 4)

    def test_incompatible_layers_rejected(self):
        with pytest.raises(errors.ArchitectureMismatch):
            TinyNet(layers=[Layer(weight=np.zeros((3, 2))), Layer(weight=np.zeros((4, 5)))])

    def test_forward_shapes(self):
        net = random_net((6, 8, 3), seed=1)
        y = forward_logits(net, np.zeros((6, 5)))
        assert y.shape == (3, 5)

    def test_forward_rejects_wrong_input_dim(self):
        net = random_net((6, 8, 3), seed=1)
        with pytest.raises(errors.ShapeMismatch):
            forward_logits(net, np.zeros((7, 2)))


class TestKlLoss:
    def test_identical_logits(self):
        z = np.array([[0.3, -1.2, 4.0]])
        assert kl_loss(z, z) == pytest.approx(0.0, abs=1e-15)

    def test_two_class_closed_form(self):
        # student uniform, teacher (0.25, 0.75):
        # KL = 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
        s = np.array([[0.0, 0.0]])
        t = np.array([[0.0, math.log(3.0)]])
        expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert kl_loss(s, t) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.14384, abs=1e-5)

    def test_grows_with_teacher_gap(self):
        s = np.array([[0.0, 0.0]])
        assert kl_loss(s, np.array([[0.0, 10.0]])) > kl_loss(s, np.array([[0.0, 5.0]]))

    def test_temperature_softens(self):
        s = np.array([[0.0, 0.0]])
        t = np.array([[0.0, 4.0]])
        assert kl_loss(s, t, temperature=4.0) < kl_loss(s, t, temperature=1.0)

    def test_batch_mean(self):
        s = np.array([[0.0, 0.0], [0.0, 0.0]])
        t = np.array([[0.0, 1.0], [0.0, 1.0]])
        single = kl_loss(s[:1], t[:1])
        assert kl_loss(s, t) == pytest.approx(single)

    def test_shape_mismatch(self):
        with pytest.raises(errors.ShapeMismatch):
            kl_loss(np.zeros((1, 2)), np.zeros((1, 3)))


def grid_aligned_teacher(dims, seed=0, bits=3):
    """Teacher whose weights already sit on each layer's integer grid."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = rng.uniform(0.05, 0.2, size=fan_out)
        grid = rng.integers(0, 2**bits, size=(fan_out, fan_in))
        layers.append(Layer(weight=scale[:, None] * grid))
    return TinyNet(layers=layers)


class TestBuildStudent:
    def test_layers_carry_codebooks(self):
        teacher = random_net((6, 8, 3), seed=2)
        student = build_student(teacher, bits=3, k=4, d=4, kmeans_iters=20, seed=0)
        for layer in student.layers:
            assert layer.codebook is not None
            assert layer.params is not None
        assert np.array_equal(student.layers[0].weight, teacher.layers[0].weight)

    def test_k_clamped_to_block_count(self):
        teacher = random_net((4, 4, 2), seed=3)
        student = build_student(teacher, bits=3, k=4096, d=4, kmeans_iters=10, seed=0)
        assert student.layers[0].codebook.k == 4  # 16 entries / d=4
        assert student.layers[1].codebook.k == 2  # 8 entries / d=4

    def test_hessian_init_needs_calibration(self):
        teacher = random_net((4, 4, 2), seed=4)
        with pytest.raises(errors.DomainError):
            build_student(teacher, bits=3, k=4, d=4, init="hessian")

    def test_hessian_init_runs(self):
        teacher = random_net((4, 6, 2), seed=5)
        calib = np.random.default_rng(5).normal(size=(4, 32))
        student = build_student(
            teacher, bits=3, k=4, d=4, kmeans_iters=10, seed=0,
            init="hessian", calib=calib,
        )
        assert len(student.layers) == 2

    def test_residual_space_flag(self):
        teacher = random_net((4, 6, 2), seed=6)
        a = build_student(teacher, bits=3, k=4, d=4, kmeans_iters=10, seed=0,
                          codebook_space="latent")
        b = build_student(teacher, bits=3, k=4, d=4, kmeans_iters=10, seed=0,
                          codebook_space="residual")
        assert not np.allclose(a.layers[0].codebook.centroids,
                               b.layers[0].codebook.centroids)


def masks_stable_under(student, x, li, i, j, h):
    """True when probing centroid (i, j) of layer li leaves every clip,
    saturation, and ReLU mask unchanged."""

    def snapshot():
        masks = []
        a = np.asarray(x, dtype=np.float64)[:, None]
        for idx, layer in enumerate(student.layers):
            fwd = soft_quant_forward(layer.weight, layer.params, layer.codebook, SPEC)
            g = SPEC.gamma + (SPEC.zeta - SPEC.gamma) * expit(fwd.latent)
            masks.append(((g > 0) & (g < 1)).copy())
            masks.append(fwd.clip_active.copy())
            z = fwd.what @ a
            if idx < len(student.layers) - 1:
                masks.append(z > 0)
                a = np.maximum(z, 0.0)
        return masks

    cb = student.layers[li].codebook
    base = snapshot()
    for delta in (h, -h):
        cb.centroids[i, j] += delta
        probed = snapshot()
        cb.centroids[i, j] -= delta
        if not all(np.array_equal(m0, m1) for m0, m1 in zip(base, probed)):
            return False
    return True


def fd_check_e2e(teacher, student, x, lam, beta, temperature=1.0, h=1e-4):
    _, _, _, grads = e2e_step(teacher, student, x, lam, beta, temperature, SPEC)
    checked, worst = 0, 0.0
    for li, layer in enumerate(student.layers):
        cb = layer.codebook
        for i in range(cb.k):
            for j in range(cb.d):
                if not masks_stable_under(student, x, li, i, j, h):
                    continue
                cb.centroids[i, j] += h
                lp, _, _, _ = e2e_step(teacher, student, x, lam, beta, temperature, SPEC)
                cb.centroids[i, j] -= 2 * h
                lm, _, _, _ = e2e_step(teacher, student, x, lam, beta, temperature, SPEC)
                cb.centroids[i, j] += h
                fd = (lp - lm) / (2 * h)
                rel = abs(grads[li][i, j] - fd) / max(abs(fd), 1e-10)
                worst = max(worst, rel)
                checked += 1
    return checked, worst


class TestE2EStep:
    def test_gradient_matches_finite_differences(self):
        teacher = random_net((6, 10, 4), seed=3)
        student = build_student(teacher, bits=4, k=6, d=4, kmeans_iters=50, seed=3)
        x = np.random.default_rng(3).normal(size=6)
        checked, worst = fd_check_e2e(teacher, student, x, lam=1e-2, beta=4.0)
        assert checked >= 20
        assert worst < 1e-4

    def test_exact_grid_teacher_zero_kd(self):
        teacher = grid_aligned_teacher((6, 8, 3), seed=7)
        # Exact codebooks reproduce the (binary) residual seed, so the
        # soft-quantized student equals the teacher.
        student = build_student(teacher, bits=3, k=10**9, d=4, kmeans_iters=10, seed=0)
        _, kd, _, _ = e2e_step(teacher, student, np.ones(6), lam=0.0, beta=5.0)
        assert kd == pytest.approx(0.0, abs=1e-12)


class TestE2EFinetune:
    def test_architecture_mismatch(self):
        teacher = random_net((4, 6, 2), seed=8)
        student = build_student(random_net((4, 8, 2), seed=8), bits=3, k=4, d=4)
        with pytest.raises(errors.ArchitectureMismatch):
            e2e_finetune(teacher, student, [np.zeros(4)], FinetuneConfig(steps=1))

    def test_student_without_codebooks_rejected(self):
        teacher = random_net((4, 6, 2), seed=9)
        with pytest.raises(errors.ArchitectureMismatch):
            e2e_finetune(teacher, random_net((4, 6, 2), seed=9),
                         [np.zeros(4)], FinetuneConfig(steps=1))

    def test_warmup_loss_is_pure_distillation(self):
        teacher = random_net((6, 8, 3), seed=10)
        student = build_student(teacher, bits=3, k=6, d=4, kmeans_iters=20, seed=0)
        data = [np.random.default_rng(i).normal(size=6) for i in range(16)]
        cfg = FinetuneConfig(steps=40, warmup_frac=0.25, seed=0)
        res = e2e_finetune(teacher, student, data, cfg)
        w = warmup_steps(cfg)
        assert w == 10
        assert np.array_equal(res.loss_trace[:w], res.kd_trace[:w])
        assert np.all(res.loss_trace[w:] >= res.kd_trace[w:])

    def test_indices_frozen(self):
        teacher = random_net((6, 8, 3), seed=11)
        student = build_student(teacher, bits=3, k=6, d=4, kmeans_iters=20, seed=0)
        before = [layer.codebook.indices.copy() for layer in student.layers]
        data = [np.random.default_rng(i).normal(size=6) for i in range(8)]
        res = e2e_finetune(teacher, student, data, FinetuneConfig(steps=25, seed=0))
        for idx, cb in zip(before, res.codebooks):
            assert np.array_equal(idx, cb.indices)

    def test_round_robin_is_deterministic(self):
        teacher = random_net((6, 8, 3), seed=12)
        data = [np.random.default_rng(i).normal(size=6) for i in range(8)]
        traces = []
        for _ in range(2):
            student = build_student(teacher, bits=3, k=6, d=4, kmeans_iters=20, seed=0)
            res = e2e_finetune(teacher, student, data, FinetuneConfig(steps=15, seed=0))
            traces.append(res.loss_trace)
        assert np.array_equal(traces[0], traces[1])
