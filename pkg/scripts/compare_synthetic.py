"""Method comparison table (tsd, lr_nmf, dksvd, ridge) averaged over seeds.

    python scripts/compare_synthetic.py --seeds 0 1 2 3 4
"""

import argparse

import pandas as pd

from tsd.core import Hyperparams
from tsd.evaluate import compare_methods
from tsd.synth import SynthSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--max-iters", type=int, default=3000)
    args = ap.parse_args()

    tables = []
    for seed in args.seeds:
        ds, *_ = generate(SynthSpec(n=args.n, noise_std=args.noise, seed=seed))
        h = Hyperparams(max_iters=args.max_iters, seed=seed, **dict.fromkeys(Hyperparams.RHOS, args.rho))
        t = compare_methods(ds, h_map={"tsd": h}, seed=seed)
        tables.append(t.assign(seed=seed))
    all_rows = pd.concat(tables, ignore_index=True)
    print(all_rows.to_string(index=False))
    print()
    print(all_rows.groupby("method", sort=False)[["train_rmse", "test_rmse"]].mean().to_string())


if __name__ == "__main__":
    main()
