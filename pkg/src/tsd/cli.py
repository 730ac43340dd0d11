"""Command-line entry point: ``tsd fit|predict|decompose|cv|synth|diagnose|compare``.

Exit codes: 0 success, 1 input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from tsd import io
from tsd.config import RunConfig
from tsd.core import DataError, ConvergenceWarning, Hyperparams, encode, preprocess, read_table
from tsd.evaluate import compare_methods, continuity_diagnostics, cross_validate, random_grid
from tsd.graph import build_laplacians
from tsd.solver import SolverDivergence, fit
from tsd.synth import generate_with_truth, write_truth

log = logging.getLogger("tsd")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


class InputError(Exception):
    pass


def _load_dataset(cfg: RunConfig, require_target: bool = True):
    if not cfg.input:
        raise InputError("--input is required")
    path = Path(cfg.input)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    if require_target and not cfg.target:
        raise InputError("--target is required")
    try:
        table = read_table(path)
        return preprocess(table, cfg.preprocess, cfg.target, require_target=require_target)
    except DataError as exc:
        raise InputError(str(exc)) from exc


def _fit_and_save(cfg: RunConfig, h: Hyperparams, require_target: bool) -> int:
    ds = _load_dataset(cfg, require_target=require_target)
    if h.k_sources > ds.n_samples:
        raise InputError(f"k={h.k_sources} exceeds the number of samples ({ds.n_samples})")
    Ls, Lt = build_laplacians(ds.latitude, ds.longitude, ds.timestamp, cfg.graph)
    model, report = fit(ds, h, Ls, Lt)
    io.save_model(cfg.out, model, ds, h, report, extra={"graph": cfg.graph.__dict__})
    status = "converged" if report.converged else "stopped at max_iters"
    log.info("fit %s after %d iterations in %.2fs; objective %.6g",
             status, report.iterations, report.wall_time, report.objective_trace[-1])
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    return _fit_and_save(cfg, cfg.hyperparams, require_target=True)


def cmd_decompose(cfg: RunConfig) -> int:
    """Fit with the prediction term switched off (sources of X overall)."""
    return _fit_and_save(cfg, cfg.hyperparams.replace(lambda_y=0.0), require_target=False)


def cmd_predict(cfg: RunConfig) -> int:
    if not cfg.model:
        raise InputError("--model is required")
    try:
        f, h, spec, meta = io.load_model(cfg.model)
    except (FileNotFoundError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    target = meta.get("target")
    label = f"predicted_{target}" if target else "predicted"
    if not cfg.input or not Path(cfg.input).exists():
        raise InputError(f"input file not found: {cfg.input}")
    table = read_table(cfg.input)
    out = Path(cfg.out) / "predictions.csv"
    if len(table) == 0:
        io.write_csv(out, pd.DataFrame({"sample_id": pd.Series(dtype=str), label: pd.Series(dtype=float)}))
        return EXIT_OK
    try:
        ds = preprocess(table, spec, target, require_target=False)
    except DataError as exc:
        raise InputError(str(exc)) from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        y_hat = encode(ds, f, h) @ f.W
    io.write_csv(out, pd.DataFrame({"sample_id": list(ds.sample_ids), label: y_hat}))
    return EXIT_OK


def cmd_cv(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    base = cfg.hyperparams
    if cfg.cv.grid:
        grid = [base.replace(**dict(g)) for g in cfg.cv.grid]
    else:
        grid = random_grid(base, cfg.cv.grid_size, cfg.seed)
    res = cross_validate(ds, grid, folds=cfg.cv.folds, seed=cfg.seed, graph=cfg.graph, blocked=cfg.cv.blocked)
    outdir = Path(cfg.out)
    io.write_csv(outdir / "cv_scores.csv", res.table())
    io.atomic_write(outdir / "cv_best.yaml", RunConfig(hyperparams=res.best).dump())
    lines = [f"configs evaluated: {len(grid)}", f"folds: {cfg.cv.folds}",
             f"best config: {res.best_index} (mean RMSE {res.scores[res.best_index]:.6g})"]
    lines += [f"config {i} failed: {msg}" for i, msgs in sorted(res.failures.items()) for msg in msgs]
    io.atomic_write(outdir / "cv_summary.txt", "\n".join(lines) + "\n")
    return EXIT_SOLVER if all(np.isinf(res.scores)) else EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    ds, truth = generate_with_truth(cfg.synth)
    outdir = Path(cfg.out)
    io.write_csv(outdir / "data.csv", ds.to_frame())
    write_truth(truth, ds, outdir, io.write_csv)
    io.atomic_write(outdir / "synth.yaml", RunConfig(synth=cfg.synth).dump())
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    diag = continuity_diagnostics(ds, cfg.diagnose.n_bins, cfg.diagnose.max_pairs, cfg.seed)
    outdir = Path(cfg.out)
    io.write_csv(outdir / "monthly.csv", diag.monthly)
    io.write_csv(outdir / "distance.csv", diag.distance)
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    table = compare_methods(
        ds, cfg.compare.methods, {"tsd": cfg.hyperparams},
        test_fraction=cfg.compare.test_fraction, seed=cfg.seed, graph=cfg.graph,
    )
    outdir = Path(cfg.out)
    io.write_csv(outdir / "comparison.csv", table)
    io.atomic_write(outdir / "comparison.txt", table.to_string(index=False) + "\n")
    failed = table["status"].str.startswith("failed")
    return EXIT_SOLVER if failed.any() else EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "decompose": cmd_decompose,
    "cv": cmd_cv,
    "synth": cmd_synth,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration; flags override its values")
    common.add_argument("--input", help="input CSV (sample_id, latitude, longitude, date, analytes...)")
    common.add_argument("--target", help="target analyte column")
    common.add_argument("--k", type=int, help="number of sources")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="BLAS threads (default: $TSD_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tsd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "predict":
            p.add_argument("--model", help="directory written by `tsd fit`")
    return parser


@contextlib.contextmanager
def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get("TSD_THREADS")
        n = int(env) if env else None
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.override(
            input=args.input, target=args.target, out=args.out, seed=args.seed,
            threads=args.threads, model=getattr(args, "model", None), k=args.k,
        )
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        with _thread_limit(cfg.threads):
            return COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverDivergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
