"""Metrics, cross-validated hyperparameter search, method comparison and
continuity diagnostics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from tsd.baselines import fit_ridge, fit_stacked
from tsd.core import ChemDataset, ConvergenceWarning, Hyperparams, encode
from tsd.graph import GraphParams, build_laplacians, haversine
from tsd.solver import SolverDivergence, fit

log = logging.getLogger(__name__)

METHODS = ("tsd", "lr_nmf", "dksvd", "ridge")
GRID_CANDIDATES = (0.0, 1e-3, 1e-2, 1e-1, 1.0)


def rmse(y_pred, y_true) -> float:
    y_pred = np.asarray(y_pred, dtype=float)
    y_true = np.asarray(y_true, dtype=float)
    if y_pred.shape != y_true.shape:
        raise ValueError(f"length mismatch: {y_pred.shape} vs {y_true.shape}")
    if y_pred.size == 0:
        raise ValueError("rmse of an empty vector")
    return float(np.sqrt(np.mean((y_pred - y_true) ** 2)))


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded random partition of ``range(n)`` into ``folds`` validation sets."""
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, N]; got {folds} for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def blocked_kfold_indices(lat, lon, folds: int, seed: int, cells_per_side: int | None = None) -> list[np.ndarray]:
    """Spatially blocked folds: samples are binned on a lat/lon grid and whole
    cells are dealt to folds at random."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    c = cells_per_side or int(np.ceil(np.sqrt(4 * folds)))

    def bins(v):
        edges = np.quantile(v, np.linspace(0, 1, c + 1)[1:-1])
        return np.searchsorted(edges, v, side="right")

    cell = bins(lat) * c + bins(lon)
    cells = np.unique(cell)
    if cells.size < folds:
        raise ValueError("too few occupied spatial cells for the requested folds")
    order = np.random.default_rng(seed).permutation(cells)
    fold_of_cell = {cl: i % folds for i, cl in enumerate(order)}
    assign = np.array([fold_of_cell[cl] for cl in cell])
    return [np.flatnonzero(assign == f) for f in range(folds)]


def train_test_split(n: int, test_fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def fit_and_score(train: ChemDataset, test: ChemDataset, h: Hyperparams, graph: GraphParams | None = None):
    """Fit on ``train`` with train-only Laplacians and score encoded ``test`` predictions."""
    Ls, Lt = build_laplacians(train.latitude, train.longitude, train.timestamp, graph)
    model, report = fit(train, h, Ls, Lt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        y_hat = encode(test, model, h) @ model.W
    report.test_rmse = rmse(y_hat, test.target)
    return model, report, (Ls, Lt)


def random_grid(base: Hyperparams, size: int = 64, seed: int = 0, candidates=GRID_CANDIDATES) -> list[Hyperparams]:
    """Seeded random sample of the nine-weight grid (distinct points, ``size`` at most)."""
    rng = np.random.default_rng(seed)
    total = len(candidates) ** len(Hyperparams.LAMBDAS)
    size = min(size, total)
    seen, grid = set(), []
    while len(grid) < size:
        pick = tuple(int(i) for i in rng.integers(len(candidates), size=len(Hyperparams.LAMBDAS)))
        if pick in seen:
            continue
        seen.add(pick)
        values = {name: float(candidates[i]) for name, i in zip(Hyperparams.LAMBDAS, pick)}
        grid.append(base.replace(**values))
    return grid


@dataclass
class CVResult:
    best: Hyperparams
    best_index: int
    scores: list
    fold_scores: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    grid: list = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        rows = []
        for i, (h, s) in enumerate(zip(self.grid, self.scores)):
            rows.append({"config": i, "mean_rmse": s, **{k: getattr(h, k) for k in Hyperparams.LAMBDAS}})
        return pd.DataFrame(rows)


def _l1_total(h: Hyperparams) -> float:
    return h.lambda_w_l1 + h.lambda_a_l1 + h.lambda_d_l1


def cross_validate(
    ds: ChemDataset,
    grid: list[Hyperparams],
    folds: int = 5,
    seed: int = 0,
    graph: GraphParams | None = None,
    blocked: bool = False,
) -> CVResult:
    """k-fold search over ``grid`` by mean held-out RMSE.

    Laplacians are rebuilt from each fold's training samples only. A config
    whose fit diverges scores ``inf``. Ties go to the smaller total l1 weight,
    then to the earlier grid entry.
    """
    if not grid:
        raise ValueError("grid is empty")
    if not ds.has_target:
        raise ValueError("cross-validation needs a labelled dataset")
    if blocked:
        parts = blocked_kfold_indices(ds.latitude, ds.longitude, folds, seed)
    else:
        parts = kfold_indices(ds.n_samples, folds, seed)
    all_idx = np.arange(ds.n_samples)
    splits = []
    for val in parts:
        train = np.setdiff1d(all_idx, val)
        tr, te = ds.subset(train), ds.subset(val)
        splits.append((tr, te, build_laplacians(tr.latitude, tr.longitude, tr.timestamp, graph)))

    scores, fold_scores, failures = [], [], {}
    for i, h in enumerate(grid):
        per_fold = []
        for f_i, (tr, te, (Ls, Lt)) in enumerate(splits):
            try:
                model, _ = fit(tr, h, Ls, Lt)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    y_hat = encode(te, model, h) @ model.W
                score = rmse(y_hat, te.target)
                if not np.isfinite(score):
                    raise SolverDivergence("non-finite held-out RMSE")
            except (SolverDivergence, FloatingPointError, np.linalg.LinAlgError) as exc:
                failures.setdefault(i, []).append(f"fold {f_i}: {exc}")
                log.warning("config %d fold %d failed: %s", i, f_i, exc)
                score = np.inf
            per_fold.append(score)
        fold_scores.append(per_fold)
        scores.append(float(np.mean(per_fold)))

    best_index = min(range(len(grid)), key=lambda i: (scores[i], _l1_total(grid[i]), i))
    return CVResult(
        best=grid[best_index], best_index=best_index, scores=scores,
        fold_scores=fold_scores, failures=failures, grid=list(grid),
    )


@dataclass
class Diagnostics:
    monthly: pd.DataFrame
    distance: pd.DataFrame
    n_pairs: int


def continuity_diagnostics(ds: ChemDataset, n_bins: int = 20, max_pairs: int = 1_000_000, seed: int = 0) -> Diagnostics:
    """Monthly target quartiles and binned mean ``|y_i - y_j|`` against pair distance."""
    y = ds.target
    months = pd.DatetimeIndex(ds.timestamp).month.to_numpy()
    rows = []
    for mo in range(1, 13):
        v = y[months == mo]
        if v.size:
            q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        else:
            q25 = q50 = q75 = np.nan
        rows.append({"month": mo, "n": int(v.size), "q25": q25, "median": q50, "q75": q75})
    monthly = pd.DataFrame(rows)

    n = ds.n_samples
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(n, size=max_pairs)
        j = rng.integers(n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)
    d = haversine(ds.latitude[i], ds.longitude[i], ds.latitude[j], ds.longitude[j])
    diff = np.abs(y[i] - y[j])
    top = float(d.max()) if d.size else 0.0
    edges = np.linspace(0.0, top if top > 0 else 1.0, n_bins + 1)
    which = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=diff, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    distance = pd.DataFrame(
        {"bin_lo_m": edges[:-1], "bin_hi_m": edges[1:], "n_pairs": counts, "mean_abs_diff": means}
    )
    return Diagnostics(monthly=monthly, distance=distance, n_pairs=int(i.size))


def compare_methods(
    ds: ChemDataset,
    methods=METHODS,
    h_map: dict | None = None,
    test_fraction: float = 0.2,
    seed: int = 0,
    graph: GraphParams | None = None,
) -> pd.DataFrame:
    """Train/test RMSE of each method on one shared seeded split.

    ``h_map`` maps ``"tsd"`` to :class:`Hyperparams` and baseline names to
    keyword dicts. A failing method scores ``inf`` and the run continues.
    """
    h_map = dict(h_map or {})
    h_tsd = h_map.get("tsd", Hyperparams(seed=seed))
    train_idx, test_idx = train_test_split(ds.n_samples, test_fraction, seed)
    tr, te = ds.subset(train_idx), ds.subset(test_idx)
    rows = []
    for method in methods:
        row = {"method": method, "train_rmse": np.inf, "test_rmse": np.inf, "status": "ok"}
        try:
            if method == "tsd":
                _, report, _ = fit_and_score(tr, te, h_tsd, graph)
                row["train_rmse"], row["test_rmse"] = report.train_rmse, report.test_rmse
                if not report.converged:
                    row["status"] = "ok (max_iters)"
            elif method in ("lr_nmf", "dksvd"):
                kw = {"k": h_tsd.k_sources, "seed": seed, **h_map.get(method, {})}
                model = fit_stacked(tr.features, tr.target, mode=method, **kw)
                row["train_rmse"] = rmse(model.train_predictions(), tr.target)
                row["test_rmse"] = rmse(model.predict(te.features), te.target)
            elif method == "ridge":
                model = fit_ridge(tr.features, tr.target, **h_map.get(method, {}))
                row["train_rmse"] = rmse(model.predict(tr.features), tr.target)
                row["test_rmse"] = rmse(model.predict(te.features), te.target)
            else:
                raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        except (SolverDivergence, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            row["status"] = f"failed: {exc}"
            log.warning("method %s failed: %s", method, exc)
        rows.append(row)
    return pd.DataFrame(rows, columns=["method", "train_rmse", "test_rmse", "status"])
