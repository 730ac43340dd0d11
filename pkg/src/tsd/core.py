"""Dataset container, hyperparameters, preprocessing and the joint objective."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from tsd.graph import GraphLaplacian, laplacian_quadratic

REQUIRED_COLUMNS = ("sample_id", "latitude", "longitude", "date")
SCALING_MODES = ("minmax", "log1p_minmax", "none")
MISSING_POLICIES = ("drop", "median")


class DataError(ValueError):
    """Raised when raw input cannot be turned into a valid dataset."""


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class ChemDataset:
    """Samples by analytes, plus per-sample location, date and target value.

    ``features`` holds the scaled analyte concentrations (target excluded);
    ``target`` may be all-NaN for unlabelled data.
    """

    features: np.ndarray
    target: np.ndarray
    latitude: np.ndarray
    longitude: np.ndarray
    timestamp: np.ndarray
    analyte_names: tuple
    target_name: str | None = None
    sample_ids: tuple | None = None
    preprocess: PreprocessSpec | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        n, m = X.shape
        if n < 2 or m < 1:
            raise DataError(f"need N >= 2 samples and M >= 1 analytes, got N={n}, M={m}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if X.min() < 0:
            raise DataError("features must be nonnegative")
        fields = {
            "features": X,
            "target": np.asarray(self.target, dtype=float),
            "latitude": np.asarray(self.latitude, dtype=float),
            "longitude": np.asarray(self.longitude, dtype=float),
            "timestamp": np.asarray(self.timestamp, dtype="datetime64[D]"),
            "analyte_names": tuple(str(a) for a in self.analyte_names),
            "sample_ids": tuple(str(s) for s in self.sample_ids)
            if self.sample_ids is not None
            else tuple(str(i) for i in range(n)),
        }
        for name in ("target", "latitude", "longitude", "timestamp", "sample_ids"):
            if len(fields[name]) != n:
                raise DataError(f"{name} has length {len(fields[name])}, expected {n}")
        if len(fields["analyte_names"]) != m:
            raise DataError(f"{m} feature columns but {len(fields['analyte_names'])} analyte names")
        if self.target_name is not None and self.target_name in fields["analyte_names"]:
            raise DataError(f"target {self.target_name!r} appears among the features")
        for name, value in fields.items():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_analytes(self) -> int:
        return self.features.shape[1]

    @property
    def has_target(self) -> bool:
        return bool(np.all(np.isfinite(self.target)))

    def subset(self, index) -> ChemDataset:
        index = np.asarray(index)
        return dataclasses.replace(
            self,
            features=self.features[index],
            target=self.target[index],
            latitude=self.latitude[index],
            longitude=self.longitude[index],
            timestamp=self.timestamp[index],
            sample_ids=tuple(self.sample_ids[i] for i in index),
        )

    def to_frame(self, raw: bool = True) -> pd.DataFrame:
        """Back to the ingestion schema; ``raw`` undoes the feature scaling."""
        X = self.features
        if raw and self.preprocess is not None:
            X = self.preprocess.inverse_transform(X)
        df = pd.DataFrame(
            {
                "sample_id": list(self.sample_ids),
                "latitude": self.latitude,
                "longitude": self.longitude,
                "date": pd.to_datetime(self.timestamp).strftime("%Y-%m-%d"),
            }
        )
        feats = pd.DataFrame(X, columns=list(self.analyte_names))
        parts = [df, feats]
        if self.target_name is not None:
            parts.append(pd.DataFrame({self.target_name: self.target}))
        return pd.concat(parts, axis=1)


@dataclass(frozen=True)
class Hyperparams:
    lambda_x: float = 1.0
    lambda_w_l1: float = 0.0
    lambda_w_l2: float = 1e-3
    lambda_a_l1: float = 0.0
    lambda_a_l2: float = 1e-3
    lambda_d_l1: float = 0.0
    lambda_d_l2: float = 1e-3
    lambda_s: float = 1e-2
    lambda_t: float = 1e-2
    rho_w: float = 1e-3
    rho_d1: float = 1e-3
    rho_d2: float = 1e-3
    rho_a1: float = 1e-3
    rho_a2: float = 1e-3
    k_sources: int = 3
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0
    # weight on the prediction term; 0 gives the "no target" decomposition
    lambda_y: float = 1.0

    LAMBDAS = (
        "lambda_x", "lambda_w_l1", "lambda_w_l2", "lambda_a_l1", "lambda_a_l2",
        "lambda_d_l1", "lambda_d_l2", "lambda_s", "lambda_t",
    )
    RHOS = ("rho_w", "rho_d1", "rho_d2", "rho_a1", "rho_a2")

    def __post_init__(self):
        for name in self.LAMBDAS + ("lambda_y",):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in self.RHOS:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v}")
        if int(self.k_sources) < 1:
            raise ValueError("k_sources must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")

    def replace(self, **changes) -> Hyperparams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Factorization:
    D: np.ndarray
    A: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        A = np.asarray(self.A, dtype=float)
        W = np.asarray(self.W, dtype=float).ravel()
        if D.ndim != 2 or A.ndim != 2:
            raise ValueError("D and A must be 2-d")
        if A.shape[1] != D.shape[0] or W.size != D.shape[0]:
            raise ValueError(f"inconsistent shapes A{A.shape} D{D.shape} W{W.shape}")
        for name, v in (("D", D), ("A", A), ("W", W)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def k(self) -> int:
        return self.D.shape[0]


@dataclass
class FitReport:
    """Outcome of a fit: convergence trace, residuals and scores."""

    objective_trace: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    wall_time: float = 0.0
    train_rmse: float | None = None
    test_rmse: float | None = None
    similarities: list | None = None
    hyperparams: dict | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


@dataclass(frozen=True)
class PreprocessSpec:
    """Scaling and missing-value policy, plus the per-analyte parameters once fit.

    ``offset``/``scale`` map a (possibly log1p-transformed) value ``v`` to
    ``(v - offset) / scale``; ``medians`` hold imputation values in raw units.
    """

    scaling: str = "minmax"
    missing: str = "drop"
    analytes: tuple | None = None
    offset: tuple | None = None
    scale: tuple | None = None
    medians: tuple | None = None

    def __post_init__(self):
        if self.scaling not in SCALING_MODES:
            raise ValueError(f"scaling must be one of {SCALING_MODES}, got {self.scaling!r}")
        if self.missing not in MISSING_POLICIES:
            raise ValueError(f"missing must be one of {MISSING_POLICIES}, got {self.missing!r}")

    @property
    def fitted(self) -> bool:
        return self.analytes is not None

    def fit(self, raw: np.ndarray, analytes) -> PreprocessSpec:
        raw = np.asarray(raw, dtype=float)
        v = self._forward(raw)
        if self.scaling == "none":
            lo = np.zeros(raw.shape[1])
            span = np.ones(raw.shape[1])
        else:
            lo = np.nanmin(v, axis=0)
            span = np.nanmax(v, axis=0) - lo
            span = np.where(span > 0, span, 1.0)
        med = np.nanmedian(raw, axis=0)
        return dataclasses.replace(
            self,
            analytes=tuple(analytes),
            offset=tuple(float(x) for x in lo),
            scale=tuple(float(x) for x in span),
            medians=tuple(float(x) for x in med),
        )

    def _forward(self, raw):
        if self.scaling == "log1p_minmax":
            if np.nanmin(raw) <= -1:
                raise DataError("log1p scaling needs values > -1")
            return np.log1p(raw)
        return raw

    def transform(self, raw: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("PreprocessSpec has not been fit")
        return (self._forward(np.asarray(raw, dtype=float)) - np.array(self.offset)) / np.array(self.scale)

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("PreprocessSpec has not been fit")
        v = np.asarray(scaled, dtype=float) * np.array(self.scale) + np.array(self.offset)
        if self.scaling == "log1p_minmax":
            return np.expm1(v)
        return v

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> PreprocessSpec:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def read_table(path) -> pd.DataFrame:
    """Read an ingestion CSV; ``sample_id`` is kept as text."""
    try:
        return pd.read_csv(path, dtype={"sample_id": str}, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: file is empty (a header row is required)") from exc


def preprocess(
    raw_table: pd.DataFrame,
    spec: PreprocessSpec | None = None,
    target_name: str | None = None,
    require_target: bool = True,
) -> ChemDataset:
    """Validate and scale a raw table into a :class:`ChemDataset`.

    With an unfitted ``spec`` the scaling parameters are estimated from this
    table; a fitted ``spec`` (from training data) is applied as-is, matching
    analytes by name. Negative values produced by applying training
    parameters to new data are clipped to 0.
    """
    spec = spec or PreprocessSpec()
    df = raw_table.copy()
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    if target_name is not None and target_name not in df.columns and require_target:
        raise DataError(f"target column {target_name!r} not found in input")

    if spec.fitted:
        analytes = list(spec.analytes)
        absent = [a for a in analytes if a not in df.columns]
        extra = [c for c in df.columns if c not in REQUIRED_COLUMNS and c not in analytes and c != target_name]
        if absent or extra:
            raise DataError(f"analyte schema mismatch; missing: {absent or 'none'}; extra: {extra or 'none'}")
    else:
        analytes = [c for c in df.columns if c not in REQUIRED_COLUMNS and c != target_name]
    if not analytes:
        raise DataError("no analyte columns besides the target")

    for col in analytes + ([target_name] if target_name in df.columns else []) + ["latitude", "longitude"]:
        try:
            df[col] = pd.to_numeric(df[col], errors="raise").astype(float)
        except (ValueError, TypeError) as exc:
            raise DataError(f"column {col!r} is not numeric: {exc}") from exc
    try:
        dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="raise")
    except (ValueError, TypeError) as exc:
        raise DataError(f"column 'date' has non-parseable dates (expected YYYY-MM-DD): {exc}") from exc
    if dates.isna().any():
        bad = list(df.index[dates.isna()][:5])
        raise DataError(f"column 'date' has missing dates at rows {bad}")

    keep = df[["latitude", "longitude"]].notna().all(axis=1).to_numpy()
    if target_name in df.columns and require_target:
        keep &= df[target_name].notna().to_numpy()
    if spec.missing == "drop":
        keep &= df[analytes].notna().all(axis=1).to_numpy()
    df = df.loc[keep].reset_index(drop=True)
    dates = dates[keep].reset_index(drop=True)
    if len(df) == 0:
        raise DataError("all rows were dropped by the missing-value policy")

    raw = df[analytes].to_numpy(dtype=float)
    if spec.scaling == "none" and np.nanmin(raw) < 0:
        raise DataError("negative concentrations need a scaling mode other than 'none'")
    if not spec.fitted:
        spec = spec.fit(raw, analytes)
    if spec.missing == "median":
        med = np.array(spec.medians)
        raw = np.where(np.isnan(raw), med[None, :], raw)
    X = spec.transform(raw)
    X = np.maximum(X, 0.0)

    if target_name in df.columns:
        y = df[target_name].to_numpy(dtype=float)
    else:
        y = np.full(len(df), np.nan)
    return ChemDataset(
        features=X,
        target=y,
        latitude=df["latitude"].to_numpy(),
        longitude=df["longitude"].to_numpy(),
        timestamp=dates.to_numpy().astype("datetime64[D]"),
        analyte_names=tuple(analytes),
        target_name=target_name,
        sample_ids=tuple(df["sample_id"].astype(str)),
        preprocess=spec,
    )


def _check_shapes(X, y, f: Factorization):
    n, m = X.shape
    if f.A.shape[0] != n or f.D.shape[1] != m or y.shape[0] != n:
        raise ValueError(f"shape mismatch: X{X.shape}, y{y.shape}, A{f.A.shape}, D{f.D.shape}")


def objective_terms(
    X, y, f: Factorization, h: Hyperparams, Ls: GraphLaplacian | None = None, Lt: GraphLaplacian | None = None
) -> dict:
    """The ten weighted terms of the joint loss, keyed by name."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_shapes(X, y, f)
    for name, v in (("X", X), ("y", y), ("A", f.A), ("D", f.D), ("W", f.W)):
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} contains non-finite values")
    A, D, W = f.A, f.D, f.W
    r_y = A @ W - y
    r_x = A @ D - X
    return {
        "prediction": 0.5 * h.lambda_y * float(r_y @ r_y),
        "reconstruction": 0.5 * h.lambda_x * float(np.sum(r_x * r_x)),
        "w_l1": h.lambda_w_l1 * float(np.abs(W).sum()),
        "w_l2": 0.5 * h.lambda_w_l2 * float(W @ W),
        "a_l1": h.lambda_a_l1 * float(np.abs(A).sum()),
        "a_l2": 0.5 * h.lambda_a_l2 * float(np.sum(A * A)),
        "d_l1": h.lambda_d_l1 * float(np.abs(D).sum()),
        "d_l2": 0.5 * h.lambda_d_l2 * float(np.sum(D * D)),
        "spatial": h.lambda_s * laplacian_quadratic(Ls, A) if h.lambda_s else 0.0,
        "temporal": h.lambda_t * laplacian_quadratic(Lt, A) if h.lambda_t else 0.0,
    }


def objective(
    ds: ChemDataset, f: Factorization, h: Hyperparams,
    Ls: GraphLaplacian | None = None, Lt: GraphLaplacian | None = None,
) -> float:
    """Full regularized loss of a factorization on a dataset."""
    for name, L in (("Ls", Ls), ("Lt", Lt)):
        if L is not None and L.n != ds.n_samples:
            raise ValueError(f"{name} is {L.n}x{L.n}, dataset has {ds.n_samples} samples")
    return sum(objective_terms(ds.features, ds.target, f, h, Ls, Lt).values())


def predict(f: Factorization, A_new: np.ndarray) -> np.ndarray:
    A_new = np.asarray(A_new, dtype=float)
    if A_new.ndim != 2 or A_new.shape[1] != f.k:
        raise ValueError(f"A_new must have {f.k} columns, got shape {A_new.shape}")
    return A_new @ f.W


def encode_features(
    X: np.ndarray,
    D: np.ndarray,
    lambda_x: float = 1.0,
    lambda_l1: float = 0.0,
    lambda_l2: float = 0.0,
    tol: float = 1e-6,
    max_iters: int = 20000,
    nonneg: bool = True,
) -> np.ndarray:
    """Per-row regularized least-squares codes against a fixed dictionary.

    Minimizes ``lambda_x/2 |a D - x|^2 + lambda_l1 |a|_1 + lambda_l2/2 |a|^2``
    for every row ``x`` of ``X``, subject to ``a >= 0`` when ``nonneg``.
    Cyclic coordinate descent, vectorized across rows; stops when the
    projected-gradient (KKT) residual is below ``tol``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = np.asarray(D, dtype=float)
    k = D.shape[0]
    if X.shape[1] != D.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns, D has {D.shape[1]}")
    G = lambda_x * (D @ D.T) + lambda_l2 * np.eye(k)
    B = lambda_x * (X @ D.T)
    diag = np.diag(G).copy()
    if not nonneg:
        if lambda_l1 > 0:
            raise ValueError("the l1 term is only supported together with nonnegativity")
        return np.linalg.lstsq(G, B.T, rcond=None)[0].T
    B = B - lambda_l1
    a = np.zeros((X.shape[0], k))
    resid = np.inf
    for it in range(max_iters):
        for j in range(k):
            if diag[j] <= 0:
                a[:, j] = 0.0
                continue
            partial = B[:, j] - a @ G[:, j] + a[:, j] * diag[j]
            a[:, j] = np.maximum(partial / diag[j], 0.0)
        if it % 5 == 4 or k == 1:
            resid = kkt_residual(a, G, B)
            if resid <= tol:
                break
    else:
        warnings.warn(
            f"encode did not reach KKT residual {tol:g} in {max_iters} sweeps (residual {resid:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return a


def kkt_residual(a, G, B) -> float:
    """Projected-gradient norm of ``1/2 a G a^T - B a^T`` over ``a >= 0``."""
    grad = a @ G - B
    return float(np.max(np.abs(a - np.maximum(a - grad, 0.0)), initial=0.0))


def encode(ds_new: ChemDataset, f: Factorization, h: Hyperparams) -> np.ndarray:
    """Nonnegative codes of new samples against a trained dictionary (no graph terms)."""
    return encode_features(
        ds_new.features, f.D, lambda_x=h.lambda_x, lambda_l1=h.lambda_a_l1, lambda_l2=h.lambda_a_l2
    )
