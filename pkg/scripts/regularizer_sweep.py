"""Cross-validate a lambda_s grid on synthetic data and count how often a
nonzero value wins.

    python scripts/regularizer_sweep.py --n 100 --m 10 --noise 0.5 --length-scale 0.4 \
        --l2 1.0 --grid 0 0.3 1 3 --seeds 0 1 2 3 4
"""

import argparse
import time

import numpy as np

from tsd.core import Hyperparams
from tsd.evaluate import cross_validate
from tsd.synth import SynthSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.5)
    ap.add_argument("--length-scale", type=float, default=0.4)
    ap.add_argument("--seasonal", type=float, default=0.0)
    ap.add_argument("--l2", type=float, default=1.0, help="lambda_d_l2 and lambda_w_l2")
    ap.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.3, 1.0, 3.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--max-iters", type=int, default=1500)
    ap.add_argument("--rho", type=float, default=0.1)
    args = ap.parse_args()

    wins = 0
    for seed in args.seeds:
        spec = SynthSpec(n=args.n, m=args.m, noise_std=args.noise, length_scale=args.length_scale,
                         seasonal_amplitude=args.seasonal, seed=seed)
        ds, *_ = generate(spec)
        base = Hyperparams(lambda_d_l2=args.l2, lambda_w_l2=args.l2, lambda_t=0.0, max_iters=args.max_iters,
                           seed=seed, **dict.fromkeys(Hyperparams.RHOS, args.rho))
        t0 = time.perf_counter()
        res = cross_validate(ds, [base.replace(lambda_s=v) for v in args.grid], folds=args.folds, seed=seed)
        wins += res.best.lambda_s > 0
        print(f"seed {seed}: best lambda_s {res.best.lambda_s:g}  mean RMSE {np.round(res.scores, 4)}  "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)
    print(f"nonzero lambda_s selected in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
