"""Command-line front end for the quantization pipeline.

Exit codes: 0 success, 1 usage error, 2 file/format error, 3 shape
error, 4 parameter out of range, 5 failed inequality check. All
randomness flows from --seed, so identical invocations produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis, tensor_io
from .distill import build_student, e2e_finetune, random_net
from .errors import (
    DomainError,
    IoFailure,
    ShapeError,
    ShapeMismatch,
    TensorFormatError,
    TheoremViolation,
)
from .hessian import HessianConfig, accumulate_hessian, damped_inverse_factor, hessian_aware_init
from .optim import FinetuneConfig, optimize_blockwise
from .quantize import RoundingSpec, compute_quant_params, inverse_rectified_sigmoid, rectified_sigmoid
from .reparam import fit_codebook, load_codebook, save_codebook, vq_reconstruct, wcss, flatten_blocks


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage by default; the contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_finetune_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lam", type=float, default=1e-2,
                   help="rounding-regularizer weight")
    p.add_argument("--beta-high", type=float, default=20.0)
    p.add_argument("--beta-low", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--warmup-frac", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqround", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_init = sub.add_parser("init", help="curvature-compensated rounding initialization")
    p_init.add_argument("--weights", required=True)
    p_init.add_argument("--calib", required=True)
    p_init.add_argument("--bits", type=int, default=4)
    p_init.add_argument("--percdamp", type=float, default=0.01)
    p_init.add_argument("--blocksize", type=int, default=128)
    p_init.add_argument("--out-prefix", required=True)

    p_vq = sub.add_parser("vq", help="fit a codebook on a latent matrix")
    p_vq.add_argument("--latent", required=True)
    p_vq.add_argument("--k", type=int, default=4096)
    p_vq.add_argument("--d", type=int, default=8)
    p_vq.add_argument("--iters", type=int, default=100)
    p_vq.add_argument("--seed", type=int, default=0)
    p_vq.add_argument("--out", required=True, help="output prefix for codebook files")

    p_opt = sub.add_parser("optimize", help="optimize codebook parameters")
    p_opt.add_argument("--mode", required=True, choices=["blockwise", "e2e"])
    p_opt.add_argument("--weights", help="layer weights (blockwise mode)")
    p_opt.add_argument("--layers", nargs="+", help="layer weight files (e2e mode)")
    p_opt.add_argument("--calib", required=True)
    p_opt.add_argument("--bits", type=int, default=4)
    p_opt.add_argument("--codebook", help="input codebook prefix (blockwise mode)")
    p_opt.add_argument("--k", type=int, default=4096)
    p_opt.add_argument("--d", type=int, default=8)
    p_opt.add_argument("--kmeans-iters", type=int, default=100)
    p_opt.add_argument("--out", required=True, help="output prefix")
    p_opt.add_argument("--trace", help="loss-trace CSV path")
    _add_finetune_flags(p_opt)

    p_an = sub.add_parser("analyze", help="run checks and emit report CSVs")
    p_an.add_argument("--latent", required=True)
    p_an.add_argument("--approx", required=True)
    p_an.add_argument("--report-dir", required=True)
    p_an.add_argument("--bins", type=int, default=64)
    p_an.add_argument("--eps-points", type=int, default=20)
    p_an.add_argument("--budget", type=int,
                      help="also emit a budget-matched method comparison")
    p_an.add_argument("--methods", nargs="+",
                      default=["vq", "lowrank", "kronecker"])
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--rounding",
                      help="override: use this rounding matrix instead of the latent's")
    p_an.add_argument("--rounding-approx",
                      help="override: rounding matrix of the approximation (fault injection)")
    return parser


def _cfg_from_args(args) -> FinetuneConfig:
    return FinetuneConfig(
        lr=args.lr,
        lam=args.lam,
        beta_high=args.beta_high,
        beta_low=args.beta_low,
        steps=args.steps,
        warmup_frac=args.warmup_frac,
        temperature=args.temperature,
        seed=args.seed,
    )


def cmd_init(args) -> int:
    W = tensor_io.load_tensor(args.weights)
    X = tensor_io.load_tensor(args.calib)
    if X.shape[0] != W.shape[1]:
        raise ShapeMismatch(f"calibration rows {X.shape[0]} != weight cols {W.shape[1]}")
    cfg = HessianConfig(percdamp=args.percdamp, blocksize=args.blocksize)
    p = compute_quant_params(W, args.bits)
    factor = damped_inverse_factor(accumulate_hessian(X), cfg)
    result = hessian_aware_init(W, p, factor, cfg)
    latent = inverse_rectified_sigmoid(result.h_tilde)

    tensor_io.save_tensor(result.w_q, f"{args.out_prefix}_wq.vqt")
    tensor_io.save_tensor(result.base, f"{args.out_prefix}_b.vqt")
    tensor_io.save_tensor(result.h_tilde, f"{args.out_prefix}_h.vqt")
    tensor_io.save_tensor(latent, f"{args.out_prefix}_a.vqt")

    err = float(np.linalg.norm((W.astype(np.float64) - result.w_q) @ X.astype(np.float64)))
    print(f"recon_err={err:.9g}")
    return 0


def cmd_vq(args) -> int:
    A = tensor_io.load_tensor(args.latent)
    cb = fit_codebook(A, args.d, args.k, iters=args.iters, seed=args.seed)
    save_codebook(cb, args.out)
    blocks = flatten_blocks(A, args.d)
    print(f"wcss={wcss(blocks, cb.centroids, cb.indices):.9g}")
    return 0


def _cmd_optimize_blockwise(args) -> int:
    if not args.weights or not args.codebook:
        raise DomainError("blockwise mode needs --weights and --codebook")
    W = tensor_io.load_tensor(args.weights)
    X = tensor_io.load_tensor(args.calib)
    if X.shape[0] != W.shape[1]:
        raise ShapeMismatch(f"calibration rows {X.shape[0]} != weight cols {W.shape[1]}")
    p = compute_quant_params(W, args.bits)
    cb = load_codebook(args.codebook, W.shape)
    cfg = _cfg_from_args(args)
    out_cb, trace = optimize_blockwise(W, X, p, cb, cfg)
    save_codebook(out_cb, args.out)
    if args.trace:
        tensor_io.write_csv(
            ["step", "loss"],
            [[t + 1, float(v)] for t, v in enumerate(trace)],
            args.trace,
        )
    if trace.size:
        print(f"initial_loss={trace[0]:.9g}")
        print(f"final_loss={trace[-1]:.9g}")
    print(f"steps={cfg.steps}")
    return 0


def _cmd_optimize_e2e(args) -> int:
    if not args.layers:
        raise DomainError("e2e mode needs --layers")
    from .distill import Layer, TinyNet

    weights = [tensor_io.load_tensor(path) for path in args.layers]
    teacher = TinyNet(layers=[Layer(weight=w) for w in weights])
    X = tensor_io.load_tensor(args.calib)
    if X.shape[0] != teacher.dims[0]:
        raise ShapeMismatch(f"calibration rows {X.shape[0]} != input dim {teacher.dims[0]}")
    cfg = _cfg_from_args(args)
    student = build_student(
        teacher, args.bits, args.k, args.d, kmeans_iters=args.kmeans_iters,
        seed=args.seed,
    )
    data = [X[:, i] for i in range(X.shape[1])]
    result = e2e_finetune(teacher, student, data, cfg)
    for i, cb in enumerate(result.codebooks):
        save_codebook(cb, f"{args.out}_layer{i}")
    if args.trace:
        tensor_io.write_csv(
            ["step", "loss", "kd", "reg"],
            [
                [t + 1, float(l), float(k), float(r)]
                for t, (l, k, r) in enumerate(
                    zip(result.loss_trace, result.kd_trace, result.reg_trace)
                )
            ],
            args.trace,
        )
    print(f"hard_kl_warmup_end={result.hard_kl_warmup_end:.9g}")
    print(f"hard_kl_final={result.hard_kl_final:.9g}")
    print(f"steps={cfg.steps}")
    return 0


def cmd_optimize(args) -> int:
    if args.mode == "blockwise":
        return _cmd_optimize_blockwise(args)
    return _cmd_optimize_e2e(args)


def cmd_analyze(args) -> int:
    A = tensor_io.load_tensor(args.latent)
    At = tensor_io.load_tensor(args.approx)
    if A.shape != At.shape:
        raise ShapeMismatch(f"latent {A.shape} != approx {At.shape}")
    os.makedirs(args.report_dir, exist_ok=True)
    spec = RoundingSpec()
    L = analysis.lipschitz_constant(spec)

    H = tensor_io.load_tensor(args.rounding) if args.rounding else rectified_sigmoid(A, spec)
    Ht = (
        tensor_io.load_tensor(args.rounding_approx)
        if args.rounding_approx
        else rectified_sigmoid(At, spec)
    )
    if H.shape != A.shape or Ht.shape != A.shape:
        raise ShapeMismatch("rounding overrides must match the latent shape")

    dA = At.astype(np.float64) - A.astype(np.float64)
    dH = Ht.astype(np.float64) - H.astype(np.float64)

    # With overrides in play, check the contraction bound on the raw
    # deltas directly; otherwise this equals verify_lipschitz.
    sup_da = float(np.max(np.abs(dA))) if dA.size else 0.0
    sup_dh = float(np.max(np.abs(dH))) if dH.size else 0.0
    if sup_dh > L * sup_da + analysis.DETERMINISTIC_TOL:
        raise TheoremViolation(f"sup-norm {sup_dh} exceeds {L} * {sup_da}")
    lip = analysis.verify_lipschitz(A, At, spec)
    clip = analysis.clipping_check(A, At, spec)
    eps_grid = np.linspace(0.01, 1.0, args.eps_points)
    tail = analysis.tail_transfer(dA, dH, eps_grid, L)

    tensor_io.write_csv(
        ["epsilon", "tail_lhs", "tail_rhs", "lipschitz_L", "max_ratio", "clip_rate", "clip_bound"],
        [
            [eps, lhs, rhs, L, lip.max_elementwise_ratio, clip.clip_rate, clip.clip_bound]
            for eps, lhs, rhs in tail
        ],
        os.path.join(args.report_dir, "theory.csv"),
    )

    hist = analysis.error_histograms(A, {"approx": At}, spec, bins=args.bins)
    centers_a = 0.5 * (hist.edges_delta_a[:-1] + hist.edges_delta_a[1:])
    centers_h = 0.5 * (hist.edges_delta_h[:-1] + hist.edges_delta_h[1:])
    tensor_io.write_csv(
        ["bin_center_delta_a", "density_delta_a", "bin_center_delta_h", "density_delta_h"],
        [
            [ca, da, ch, dh_]
            for ca, da, ch, dh_ in zip(
                centers_a,
                hist.densities_delta_a["approx"],
                centers_h,
                hist.densities_delta_h["approx"],
            )
        ],
        os.path.join(args.report_dir, "histograms.csv"),
    )

    spectrum = analysis.singular_spectrum(A)
    tensor_io.write_csv(
        ["index", "singular_value"],
        [[i, float(s)] for i, s in enumerate(spectrum)],
        os.path.join(args.report_dir, "spectrum.csv"),
    )

    if args.budget is not None:
        rows = analysis.inf_norm_comparison(
            A, args.budget, seed=args.seed, methods=tuple(args.methods)
        )
        tensor_io.write_csv(
            ["params", "norm_inf", "norm_2", "norm_fro"],
            [[r.params, r.norm_inf, r.norm_2, r.norm_fro] for r in rows],
            os.path.join(args.report_dir, "norms.csv"),
        )
        for r in rows:
            print(f"{r.method}: params={r.params} inf={r.norm_inf:.9g}")

    print(f"clip_rate={clip.clip_rate:.9g}")
    return 0


_COMMANDS = {
    "init": cmd_init,
    "vq": cmd_vq,
    "optimize": cmd_optimize,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (IoFailure, TensorFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TheoremViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
