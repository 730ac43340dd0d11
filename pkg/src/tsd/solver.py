"""Block ADMM for the joint prediction / nonnegative dictionary objective.

Each outer iteration updates W, then D, then A. Every block carries
auxiliary copies with scaled duals:

* W: ``Z_W`` (l1 split, penalty ``rho_w``)
* D: ``Z_D1`` (nonnegativity, ``rho_d1``) and ``Z_D2`` (l1, ``rho_d2``)
* A: ``Z_A1`` (nonnegativity, ``rho_a1``) and ``Z_A2`` (l1, ``rho_a2``)

The A step couples rows through the graph Laplacians and columns through
``W W^T + lambda_x D D^T``; it is solved as a Sylvester equation by
diagonalizing the K x K column operator and running one sparse CG solve
per source.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tsd.core import (
    ChemDataset,
    ConvergenceWarning,
    Factorization,
    FitReport,
    Hyperparams,
    encode_features,
    objective_terms,
)
from tsd.graph import GraphLaplacian, laplacian_quadratic_columns

log = logging.getLogger(__name__)

COND_WARN = 1e12
CG_RTOL = 1e-10
PRIMAL_RTOL = 1e-4
PATIENCE = 3


class SolverDivergence(RuntimeError):
    """The objective became non-finite during a fit."""


def soft_threshold(v, t: float):
    """Proximal operator of ``t * |.|_1``: ``sign(v) * max(|v| - t, 0)``."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@dataclass
class AdmmState:
    W: np.ndarray
    D: np.ndarray
    A: np.ndarray
    Z_W: np.ndarray
    Z_D1: np.ndarray
    Z_D2: np.ndarray
    Z_A1: np.ndarray
    Z_A2: np.ndarray
    U_W: np.ndarray
    U_D1: np.ndarray
    U_D2: np.ndarray
    U_A1: np.ndarray
    U_A2: np.ndarray
    iteration: int = 0
    trace: list = field(default_factory=list)
    primal_residuals: dict = field(default_factory=dict)
    dual_residuals: dict = field(default_factory=dict)

    @classmethod
    def start(cls, W, D, A) -> AdmmState:
        """Auxiliaries equal to the primals, duals zero."""
        W, D, A = (np.array(v, dtype=float) for v in (W, D, A))
        return cls(
            W=W, D=D, A=A,
            Z_W=W.copy(), Z_D1=D.copy(), Z_D2=D.copy(), Z_A1=A.copy(), Z_A2=A.copy(),
            U_W=np.zeros_like(W), U_D1=np.zeros_like(D), U_D2=np.zeros_like(D),
            U_A1=np.zeros_like(A), U_A2=np.zeros_like(A),
        )

    def pairs(self):
        """(name, primal, auxiliary) for every split constraint."""
        return (
            ("W", self.W, self.Z_W),
            ("D1", self.D, self.Z_D1),
            ("D2", self.D, self.Z_D2),
            ("A1", self.A, self.Z_A1),
            ("A2", self.A, self.Z_A2),
        )

    def max_relative_primal_residual(self) -> float:
        """Largest ``|x - z| / (1 + |x|)`` over the five splits."""
        return max(np.linalg.norm(x - z) / (1.0 + np.linalg.norm(x)) for _, x, z in self.pairs())


def _check_conditioning(M: np.ndarray, what: str):
    c = np.linalg.cond(M)
    if c > COND_WARN:
        warnings.warn(f"{what} system is ill-conditioned (cond ~ {c:.2e})", RuntimeWarning, stacklevel=3)


def update_w(state: AdmmState, A: np.ndarray, y: np.ndarray, h: Hyperparams) -> np.ndarray:
    """Ridge-type closed form for W, then l1 prox on ``Z_W`` and dual ascent."""
    k = A.shape[1]
    lhs = h.lambda_y * (A.T @ A) + (h.lambda_w_l2 + h.rho_w) * np.eye(k)
    rhs = h.lambda_y * (A.T @ y) + h.rho_w * (state.Z_W - state.U_W)
    _check_conditioning(lhs, "W")
    W = sla.solve(lhs, rhs, assume_a="pos")
    state.W = W
    state.Z_W = soft_threshold(W + state.U_W, h.lambda_w_l1 / h.rho_w)
    state.U_W = state.U_W + W - state.Z_W
    return W


def update_d(state: AdmmState, A: np.ndarray, X: np.ndarray, h: Hyperparams) -> np.ndarray:
    """Closed form for D sharing one K x K Cholesky factor across all analytes,
    then the nonnegative and l1 auxiliaries."""
    k = A.shape[1]
    lhs = h.lambda_x * (A.T @ A) + (h.lambda_d_l2 + h.rho_d1 + h.rho_d2) * np.eye(k)
    rhs = (
        h.lambda_x * (A.T @ X)
        + h.rho_d1 * (state.Z_D1 - state.U_D1)
        + h.rho_d2 * (state.Z_D2 - state.U_D2)
    )
    _check_conditioning(lhs, "D")
    D = sla.cho_solve(sla.cho_factor(lhs), rhs)
    state.D = D
    state.Z_D1 = np.maximum(D + state.U_D1, 0.0)
    state.Z_D2 = soft_threshold(D + state.U_D2, h.lambda_d_l1 / h.rho_d2)
    state.U_D1 = state.U_D1 + D - state.Z_D1
    state.U_D2 = state.U_D2 + D - state.Z_D2
    return D


def graph_operator(n: int, h: Hyperparams, Ls: GraphLaplacian | None, Lt: GraphLaplacian | None):
    """``2 lambda_s L_s + 2 lambda_t L_t`` as sparse CSR, or None when both vanish."""
    P = None
    for lam, L in ((h.lambda_s, Ls), (h.lambda_t, Lt)):
        if lam and L is not None and L.n_edges:
            if L.n != n:
                raise ValueError(f"Laplacian is {L.n}x{L.n}, expected {n}x{n}")
            term = 2.0 * lam * L.matrix
            P = term if P is None else P + term
    return None if P is None else P.tocsr()


def a_system(state: AdmmState, D, W, X, y, h: Hyperparams):
    """Column operator ``M_right`` and right-hand side of the A stationarity equation."""
    k = D.shape[0]
    M_right = (
        h.lambda_y * np.outer(W, W)
        + h.lambda_x * (D @ D.T)
        + (h.lambda_a_l2 + h.rho_a1 + h.rho_a2) * np.eye(k)
    )
    rhs = (
        h.lambda_y * np.outer(y, W)
        + h.lambda_x * (X @ D.T)
        + h.rho_a1 * (state.Z_A1 - state.U_A1)
        + h.rho_a2 * (state.Z_A2 - state.U_A2)
    )
    return M_right, rhs


def solve_sylvester(P, M_right: np.ndarray, rhs: np.ndarray, x0=None, rtol: float = CG_RTOL) -> np.ndarray:
    """Solve ``P A + A M_right = rhs`` for symmetric PSD sparse ``P`` and SPD ``M_right``.

    ``M_right = Q diag(lam) Q^T`` decouples the columns of ``A Q``; each is
    a sparse SPD system ``(P + lam_k I) a_k = (rhs Q)_k`` solved by
    Jacobi-preconditioned CG.
    """
    lam, Q = np.linalg.eigh(M_right)
    if lam.min() <= 0:
        raise ValueError("M_right must be positive definite")
    R = rhs @ Q
    if P is None:
        return (R / lam[None, :]) @ Q.T
    n = rhs.shape[0]
    X0 = None if x0 is None else x0 @ Q
    pdiag = P.diagonal()
    out = np.empty_like(R)
    for j, lam_j in enumerate(lam):
        shift = lam_j
        for attempt in range(2):
            op = spla.LinearOperator((n, n), matvec=lambda v, s=shift: P @ v + s * v, dtype=float)
            precond = spla.LinearOperator((n, n), matvec=lambda v, d=pdiag + shift: v / d, dtype=float)
            guess = None if X0 is None else X0[:, j]
            sol, info = spla.cg(op, R[:, j], x0=guess, rtol=rtol, atol=0.0, maxiter=10 * n + 100, M=precond)
            if info == 0:
                break
            warnings.warn(
                f"CG did not converge for source {j} (info={info}); retrying with diagonal shift +1e-10",
                ConvergenceWarning,
                stacklevel=2,
            )
            shift = shift + 1e-10
        out[:, j] = sol
    return out @ Q.T


def update_a(
    state: AdmmState, D, W, X, y, Ls: GraphLaplacian | None, Lt: GraphLaplacian | None, h: Hyperparams,
    rtol: float = CG_RTOL, P=None,
) -> np.ndarray:
    """Sylvester-form solve for A, then nonnegative and l1 auxiliaries.

    ``P`` may carry a precomputed :func:`graph_operator`.
    """
    M_right, rhs = a_system(state, D, W, X, y, h)
    _check_conditioning(M_right, "A")
    if P is None:
        P = graph_operator(X.shape[0], h, Ls, Lt)
    A = solve_sylvester(P, M_right, rhs, x0=state.A, rtol=rtol)
    state.A = A
    state.Z_A1 = np.maximum(A + state.U_A1, 0.0)
    state.Z_A2 = soft_threshold(A + state.U_A2, h.lambda_a_l1 / h.rho_a2)
    state.U_A1 = state.U_A1 + A - state.Z_A1
    state.U_A2 = state.U_A2 + A - state.Z_A2
    return A


def _balance_factor(c2: float, c1: float, e1: float, e2: float) -> float:
    """Minimizer over ``s > 0`` of ``c2 s^2 + c1 s + e1 / s + e2 / s^2``."""
    if c2 + c1 <= 0 or e1 + e2 <= 0:
        return 1.0

    def slope(s):
        return 2 * c2 * s + c1 - e1 / s**2 - 2 * e2 / s**3

    lo, hi = 1.0, 1.0
    while slope(lo) > 0:
        lo /= 2
    while slope(hi) < 0:
        hi *= 2
    for _ in range(80):
        mid = np.sqrt(lo * hi)
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def rebalance(state: AdmmState, h: Hyperparams, Ls: GraphLaplacian | None = None, Lt: GraphLaplacian | None = None):
    """Rescale each source ``(A_k s, D_k / s, W_k / s)`` to minimize the penalty terms.

    The data-fit terms are invariant under this rescaling, so the objective at
    the primal iterate can only decrease. Auxiliaries and scaled duals are
    rescaled alongside their primals.
    """
    A, D, W = state.A, state.D, state.W
    c2 = 0.5 * h.lambda_a_l2 * np.sum(A * A, axis=0)
    if h.lambda_s and Ls is not None:
        c2 = c2 + h.lambda_s * laplacian_quadratic_columns(Ls, A)
    if h.lambda_t and Lt is not None:
        c2 = c2 + h.lambda_t * laplacian_quadratic_columns(Lt, A)
    c1 = h.lambda_a_l1 * np.abs(A).sum(axis=0)
    e1 = h.lambda_d_l1 * np.abs(D).sum(axis=1) + h.lambda_w_l1 * np.abs(W)
    e2 = 0.5 * h.lambda_d_l2 * np.sum(D * D, axis=1) + 0.5 * h.lambda_w_l2 * W * W
    scales = np.array([_balance_factor(*coef) for coef in zip(c2, c1, e1, e2)])
    if np.all(scales == 1.0):
        return scales
    for name in ("A", "Z_A1", "Z_A2", "U_A1", "U_A2"):
        setattr(state, name, getattr(state, name) * scales[None, :])
    for name in ("D", "Z_D1", "Z_D2", "U_D1", "U_D2"):
        setattr(state, name, getattr(state, name) / scales[:, None])
    for name in ("W", "Z_W", "U_W"):
        setattr(state, name, getattr(state, name) / scales)
    return scales


def farthest_point_rows(X: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Pick ``k`` distinct rows: a seeded random first row, then repeatedly the
    row farthest from those chosen (lowest index on ties)."""
    n = X.shape[0]
    if k > n:
        raise ValueError(f"cannot pick {k} rows from {n}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    mind = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    mind[chosen[0]] = -1.0
    while len(chosen) < k:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.sum((X - X[nxt]) ** 2, axis=1))
        mind[chosen] = -1.0
    return np.array(chosen)


def initialize(X: np.ndarray, k: int, seed: int):
    """D from farthest-point rows of X, A by nonnegative least squares, W = 0."""
    D = X[farthest_point_rows(X, k, seed)].copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        A = encode_features(X, D, max_iters=2000)
    return np.zeros(k), D, A


def augmented_lagrangian(state: AdmmState, X, y, h: Hyperparams, Ls=None, Lt=None) -> float:
    """Smooth loss plus the scaled-dual penalty terms, auxiliaries held fixed.

    Each primal block update minimizes this function over its own block.
    """
    f = Factorization(D=state.D, A=state.A, W=state.W)
    terms = objective_terms(X, y, f, h, Ls, Lt)
    smooth = sum(v for key, v in terms.items() if key not in ("w_l1", "a_l1", "d_l1"))
    pen = 0.0
    for rho, x, z, u in (
        (h.rho_w, state.W, state.Z_W, state.U_W),
        (h.rho_d1, state.D, state.Z_D1, state.U_D1),
        (h.rho_d2, state.D, state.Z_D2, state.U_D2),
        (h.rho_a1, state.A, state.Z_A1, state.U_A1),
        (h.rho_a2, state.A, state.Z_A2, state.U_A2),
    ):
        pen += 0.5 * rho * float(np.sum((x - z + u) ** 2))
    return smooth + pen


def block_gradients(state: AdmmState, X, y, h: Hyperparams, Ls=None, Lt=None) -> dict:
    """Gradients of :func:`augmented_lagrangian` with respect to W, D and A."""
    A, D, W = state.A, state.D, state.W
    r_y = A @ W - y
    r_x = A @ D - X
    gW = h.lambda_y * (A.T @ r_y) + h.lambda_w_l2 * W + h.rho_w * (W - state.Z_W + state.U_W)
    gD = (
        h.lambda_x * (A.T @ r_x) + h.lambda_d_l2 * D
        + h.rho_d1 * (D - state.Z_D1 + state.U_D1) + h.rho_d2 * (D - state.Z_D2 + state.U_D2)
    )
    gA = (
        h.lambda_y * np.outer(r_y, W) + h.lambda_x * (r_x @ D.T) + h.lambda_a_l2 * A
        + h.rho_a1 * (A - state.Z_A1 + state.U_A1) + h.rho_a2 * (A - state.Z_A2 + state.U_A2)
    )
    P = graph_operator(A.shape[0], h, Ls, Lt)
    if P is not None:
        gA = gA + P @ A
    return {"W": gW, "D": gD, "A": gA}


def fit(
    ds: ChemDataset,
    h: Hyperparams,
    Ls: GraphLaplacian | None = None,
    Lt: GraphLaplacian | None = None,
    init: tuple | None = None,
    callback=None,
    balance: bool = True,
) -> tuple[Factorization, FitReport]:
    """Run block ADMM to convergence.

    Stops once the relative objective change stays below ``h.tol`` for three
    consecutive iterations and every split residual satisfies
    ``|x - z| <= 1e-4 (1 + |x|)``, or at ``h.max_iters``. The returned A and D
    are the nonnegative auxiliary copies, so they are exactly feasible.

    With ``balance`` each iteration ends with :func:`rebalance`, which removes
    the per-source scale ambiguity that otherwise makes the alternating
    updates crawl.
    """
    t0 = time.perf_counter()
    X = ds.features
    y = ds.target if h.lambda_y > 0 else np.zeros(ds.n_samples)
    if not np.all(np.isfinite(y)):
        raise ValueError("target has non-finite values; use lambda_y=0 for an unlabelled fit")
    k = int(h.k_sources)
    if k > ds.n_samples:
        raise ValueError(f"k_sources={k} exceeds the number of samples {ds.n_samples}")
    for name, L in (("Ls", Ls), ("Lt", Lt)):
        if L is not None and L.n != ds.n_samples:
            raise ValueError(f"{name} is {L.n}x{L.n}, dataset has {ds.n_samples} samples")

    W0, D0, A0 = init if init is not None else initialize(X, k, h.seed)
    state = AdmmState.start(W0, D0, A0)
    P = graph_operator(ds.n_samples, h, Ls, Lt)
    calm = 0
    prev = None
    stop_reason = "max_iters"
    converged = False
    for it in range(1, int(h.max_iters) + 1):
        old = {"W": state.Z_W, "D1": state.Z_D1, "D2": state.Z_D2, "A1": state.Z_A1, "A2": state.Z_A2}
        update_w(state, state.A, y, h)
        update_d(state, state.A, X, h)
        update_a(state, state.D, state.W, X, y, Ls, Lt, h, P=P)
        if balance:
            rebalance(state, h, Ls, Lt)
        state.iteration = it

        value = sum(objective_terms(X, y, Factorization(state.D, state.A, state.W), h, Ls, Lt).values()) \
            if _all_finite(state) else np.nan
        if not np.isfinite(value):
            raise SolverDivergence(f"objective became non-finite at iteration {it}")
        state.trace.append(value)
        rhos = {"W": h.rho_w, "D1": h.rho_d1, "D2": h.rho_d2, "A1": h.rho_a1, "A2": h.rho_a2}
        for name, x, z in state.pairs():
            state.primal_residuals.setdefault(name, []).append(float(np.linalg.norm(x - z)))
            state.dual_residuals.setdefault(name, []).append(float(rhos[name] * np.linalg.norm(z - old[name])))
        if callback is not None:
            callback(state)

        if prev is not None and abs(prev - value) <= h.tol * max(abs(prev), 1e-300):
            calm += 1
        else:
            calm = 0
        prev = value
        if calm >= PATIENCE and state.max_relative_primal_residual() <= PRIMAL_RTOL:
            converged = True
            stop_reason = "converged"
            break

    if not converged:
        log.info("stopped at max_iters=%d without meeting the convergence test", h.max_iters)
    model = Factorization(D=state.Z_D1.copy(), A=state.Z_A1.copy(), W=state.W.copy())
    report = FitReport(
        objective_trace=[float(v) for v in state.trace],
        residuals={
            "primal": {k_: v for k_, v in state.primal_residuals.items()},
            "dual": {k_: v for k_, v in state.dual_residuals.items()},
            "max_relative_primal": float(state.max_relative_primal_residual()),
        },
        iterations=state.iteration,
        converged=converged,
        stop_reason=stop_reason,
        wall_time=time.perf_counter() - t0,
        hyperparams=h.to_dict(),
    )
    if h.lambda_y > 0:
        r = model.A @ model.W - ds.target
        report.train_rmse = float(np.sqrt(np.mean(r * r)))
    return model, report


def _all_finite(state: AdmmState) -> bool:
    return all(np.all(np.isfinite(v)) for v in (state.W, state.D, state.A))
