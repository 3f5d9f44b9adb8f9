#!/usr/bin/env python3
"""Generate synthetic layer weights and calibration activations as
tensor files, so the CLI pipeline can be driven end to end:

    python3 scripts/make_demo_data.py --out-dir demo
    vqround init --weights demo/w.vqt --calib demo/x.vqt --out-prefix demo/init
"""

import argparse
import os

import numpy as np

from vqround.tensor_io import save_tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="demo")
    ap.add_argument("--rows", type=int, default=64)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--samples", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--heavy-tails", action="store_true",
                    help="draw weights from Student-t(3) instead of a Gaussian")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    if args.heavy_tails:
        W = rng.standard_t(3, size=(args.rows, args.cols))
    else:
        W = rng.normal(size=(args.rows, args.cols))
    X = rng.normal(size=(args.cols, args.samples))

    os.makedirs(args.out_dir, exist_ok=True)
    save_tensor(W, os.path.join(args.out_dir, "w.vqt"))
    save_tensor(X, os.path.join(args.out_dir, "x.vqt"))
    print(f"wrote {args.out_dir}/w.vqt ({args.rows}x{args.cols}) "
          f"and {args.out_dir}/x.vqt ({args.cols}x{args.samples})")


if __name__ == "__main__":
    main()
