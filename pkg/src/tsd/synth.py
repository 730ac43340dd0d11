"""Synthetic mixtures with known sources, for recovery and solver checks."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from tsd.core import ChemDataset

# the unit square is mapped to a 0.5 x 0.5 degree box
LAT0, LON0, BOX_DEG = 40.0, -77.0, 0.5
YEAR_START = np.datetime64("2011-01-01")


@dataclass(frozen=True)
class SynthSpec:
    n: int = 500
    m: int = 20
    k: int = 3
    noise_std: float = 0.01
    length_scale: float = 0.2
    seasonal_amplitude: float = 0.5
    n_bumps: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 1 <= self.k <= min(self.n, self.m):
            raise ValueError(f"need 1 <= K <= min(N, M); got K={self.k}, N={self.n}, M={self.m}")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be > 0")


@dataclass(frozen=True, eq=False)
class SynthTruth:
    A: np.ndarray
    D: np.ndarray
    W: np.ndarray
    unit_xy: np.ndarray


def softplus(x):
    return np.logaddexp(0.0, x)


def seasonal_factor(doy, amplitude: float):
    """Multiplier applied to source 0; peaks at day ~91 (start of April)."""
    return 1.0 + amplitude * np.sin(2 * np.pi * np.asarray(doy, dtype=float) / 365.0)


def _dictionary(rng, m: int, k: int) -> np.ndarray:
    D = rng.uniform(0.0, 0.1, size=(k, m))
    blocks = np.array_split(np.arange(m), k)
    for row, cols in enumerate(blocks):
        D[row, cols] = rng.uniform(1.0, 2.0, size=cols.size)
    return D


def _fields(rng, xy: np.ndarray, k: int, n_bumps: int, length_scale: float) -> np.ndarray:
    out = np.empty((xy.shape[0], k))
    for j in range(k):
        centers = rng.uniform(0, 1, size=(n_bumps, 2))
        heights = rng.normal(0.0, 1.5, size=n_bumps)
        d2 = np.sum((xy[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        out[:, j] = np.exp(-d2 / (2 * length_scale**2)) @ heights
    return out


def generate(spec: SynthSpec) -> tuple[ChemDataset, np.ndarray, np.ndarray, np.ndarray]:
    """Draw a dataset whose features are ``A* D*`` plus noise and whose
    target is ``A* W*`` plus noise.

    Returns ``(dataset, A*, D*, W*)``. The dataset is unscaled (no
    preprocessing record); features below zero after noise are clipped.
    """
    ds, truth = generate_with_truth(spec)
    return ds, truth.A, truth.D, truth.W


def generate_with_truth(spec: SynthSpec) -> tuple[ChemDataset, SynthTruth]:
    rng = np.random.default_rng(spec.seed)
    n, m, k = spec.n, spec.m, spec.k
    xy = rng.uniform(0, 1, size=(n, 2))
    doy = rng.integers(0, 365, size=n)
    dates = YEAR_START + doy.astype("timedelta64[D]")
    D = _dictionary(rng, m, k)
    A = softplus(_fields(rng, xy, k, spec.n_bumps, spec.length_scale))
    A[:, 0] *= seasonal_factor(doy + 1, spec.seasonal_amplitude)
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    W = signs * rng.uniform(0.5, 1.5, size=k)
    X = A @ D
    y = A @ W
    if spec.noise_std > 0:
        X = X + spec.noise_std * rng.standard_normal(X.shape)
        y = y + spec.noise_std * rng.standard_normal(n)
    X = np.maximum(X, 0.0)
    ds = ChemDataset(
        features=X,
        target=y,
        latitude=LAT0 + BOX_DEG * xy[:, 1],
        longitude=LON0 + BOX_DEG * xy[:, 0],
        timestamp=dates,
        analyte_names=tuple(f"a{j:02d}" for j in range(m)),
        target_name="target",
        sample_ids=tuple(f"s{i:05d}" for i in range(n)),
    )
    return ds, SynthTruth(A=A, D=D, W=W, unit_xy=xy)


def cosine_matrix(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-by-row cosine similarities; zero-norm rows score 0."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    pn = np.linalg.norm(P, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    denom = np.outer(pn, qn)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(denom > 0, (P @ Q.T) / denom, 0.0)
    return C


def match_sources(D_learned: np.ndarray, D_true: np.ndarray, exhaustive_max_k: int = 6):
    """One-to-one matching of learned to true sources maximizing total cosine.

    Returns ``(perm, sims)`` where learned row ``perm[j]`` is matched to true
    row ``j`` with cosine ``sims[j]``. Exhaustive for K <= 6, Hungarian above.
    """
    D_learned = np.asarray(D_learned, dtype=float)
    D_true = np.asarray(D_true, dtype=float)
    if D_learned.shape[0] != D_true.shape[0]:
        raise ValueError("D_learned and D_true must have the same number of rows")
    C = cosine_matrix(D_learned, D_true)
    k = C.shape[0]
    if k <= exhaustive_max_k:
        best, best_perm = -np.inf, None
        for perm in itertools.permutations(range(k)):
            total = sum(C[perm[j], j] for j in range(k))
            if total > best + 1e-15:
                best, best_perm = total, perm
        perm = np.array(best_perm)
    else:
        rows, cols = linear_sum_assignment(-C)
        perm = np.empty(k, dtype=int)
        perm[cols] = rows
    return perm, C[perm, np.arange(k)]


def write_truth(truth: SynthTruth, ds: ChemDataset, outdir: Path, writer) -> list[Path]:
    """Ground-truth sidecar CSVs next to a generated dataset; ``writer(path, frame)``
    does the actual write."""
    import pandas as pd

    outdir = Path(outdir)
    k = truth.D.shape[0]
    src = [f"source_{j}" for j in range(k)]
    files = {
        "truth_D.csv": pd.DataFrame(truth.D, columns=list(ds.analyte_names)).assign(source=src)[["source", *ds.analyte_names]],
        "truth_A.csv": pd.DataFrame(truth.A, columns=src).assign(sample_id=list(ds.sample_ids))[["sample_id", *src]],
        "truth_W.csv": pd.DataFrame({"source": src, "weight": truth.W}),
    }
    paths = []
    for name, frame in files.items():
        paths.append(writer(outdir / name, frame))
    return paths


def spec_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
