"""Linear baselines: NMF, stacked LR+NMF, a DK-SVD-style stacked factorization, ridge."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from tsd.core import encode_features
from tsd.solver import farthest_point_rows

EPS = 1e-12
KINDS = ("nmf", "lr_nmf", "dksvd", "ridge")


class NMFResult(NamedTuple):
    A: np.ndarray
    D: np.ndarray
    errors: list


def nmf(X, k: int, max_iters: int = 500, tol: float = 1e-6, seed: int = 0) -> NMFResult:
    """Lee-Seung multiplicative updates for ``min |X - A D|_F`` with A, D >= 0.

    ``errors`` holds the Frobenius reconstruction error after each sweep.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.size and X.min() < 0:
        raise ValueError("nmf needs a nonnegative matrix")
    n, m = X.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(X.mean(), EPS) / k)
    A = scale * rng.uniform(0.1, 1.0, size=(n, k))
    D = scale * rng.uniform(0.1, 1.0, size=(k, m))
    errors = []
    prev = np.linalg.norm(X - A @ D)
    for _ in range(max_iters):
        D *= (A.T @ X) / np.maximum(A.T @ A @ D, EPS)
        A *= (X @ D.T) / np.maximum(A @ (D @ D.T), EPS)
        err = float(np.linalg.norm(X - A @ D))
        errors.append(err)
        if err == 0 or abs(prev - err) <= tol * max(prev, EPS):
            break
        prev = err
    return NMFResult(A, D, errors)


def ridge(X, y, lambda_l2: float = 0.0) -> np.ndarray:
    """``(X^T X + lambda I)^{-1} X^T y``; a 1e-12 jitter is added for a singular
    unregularized system."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lambda_l2 < 0:
        raise ValueError("lambda_l2 must be >= 0")
    G = X.T @ X
    lam = lambda_l2
    if lam == 0 and np.linalg.matrix_rank(G) < G.shape[0]:
        warnings.warn("rank-deficient design with lambda=0; adding 1e-12 jitter", RuntimeWarning, stacklevel=2)
        lam = 1e-12
    return np.linalg.solve(G + lam * np.eye(G.shape[0]), X.T @ y)


@dataclass
class BaselineModel:
    kind: str
    D: np.ndarray | None = None
    A: np.ndarray | None = None
    W: np.ndarray | None = None
    y_offset: float = 0.0
    y_scale: float = 1.0
    intercept_column: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if self.intercept_column:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def train_predictions(self) -> np.ndarray:
        if self.kind == "ridge":
            raise ValueError("ridge keeps no training codes; call predict(X)")
        return self.y_offset + self.y_scale * (self.A @ self.W)

    def encode(self, X) -> np.ndarray:
        Xd = self._design(X)
        if self.kind == "dksvd":
            return encode_features(Xd, self.D, lambda_l2=self.meta.get("l2", 1e-8), nonneg=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return encode_features(Xd, self.D, max_iters=5000)

    def predict(self, X) -> np.ndarray:
        if self.kind == "ridge":
            return self._design(X) @ self.W
        if self.kind == "nmf":
            raise ValueError("plain nmf has no prediction head")
        return self.y_offset + self.y_scale * (self.encode(X) @ self.W)


def _stack(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = float(y.min())
    span = float(y.max() - lo)
    span = span if span > 0 else 1.0
    Z = np.hstack([((y - lo) / span)[:, None], X, np.ones((X.shape[0], 1))])
    return Z, lo, span


def _dksvd(Z, k: int, l2: float, max_iters: int, tol: float, seed: int):
    """Alternating ridge solves with unit-norm atoms, no sign constraints."""
    Dt = Z[farthest_point_rows(Z, k, seed)].copy()
    Dt /= np.maximum(np.linalg.norm(Dt, axis=1, keepdims=True), EPS)
    errors = []
    prev = None
    eye = np.eye(k)
    for _ in range(max_iters):
        A = np.linalg.solve(Dt @ Dt.T + l2 * eye, Dt @ Z.T).T
        Dt = np.linalg.solve(A.T @ A + l2 * eye, A.T @ Z)
        norms = np.linalg.norm(Dt, axis=1)
        norms = np.where(norms > EPS, norms, 1.0)
        Dt /= norms[:, None]
        A *= norms[None, :]
        err = float(np.linalg.norm(Z - A @ Dt))
        errors.append(err)
        if prev is not None and abs(prev - err) <= tol * max(prev, EPS):
            break
        prev = err
    return A, Dt, errors


def fit_stacked(X, y, k: int, mode: str = "lr_nmf", max_iters: int = 500, tol: float = 1e-8,
                seed: int = 0, l2: float = 1e-8) -> BaselineModel:
    """Factorize the stacked matrix ``[y_scaled | X | 1]`` and read the first
    dictionary column as regression weights.

    ``y`` is min-max rescaled before stacking; the trailing constant column
    lets the factorization carry an intercept.
    """
    Z, lo, span = _stack(X, y)
    if mode == "lr_nmf":
        A, Dt, errors = nmf(Z, k, max_iters=max_iters, tol=tol, seed=seed)
    elif mode == "dksvd":
        A, Dt, errors = _dksvd(Z, k, l2, max_iters, tol, seed)
    else:
        raise ValueError(f"mode must be 'lr_nmf' or 'dksvd', got {mode!r}")
    return BaselineModel(
        kind=mode,
        D=Dt[:, 1:],
        A=A,
        W=Dt[:, 0],
        y_offset=lo,
        y_scale=span,
        meta={"iterations": len(errors), "final_error": errors[-1] if errors else 0.0, "l2": l2},
    )


def fit_ridge(X, y, lambda_l2: float = 1e-6) -> BaselineModel:
    model = BaselineModel(kind="ridge")
    model.W = ridge(model._design(X), y, lambda_l2)
    return model
