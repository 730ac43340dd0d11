"""Sparse spatial and temporal graph Laplacians over samples.

Both builders return a :class:`GraphLaplacian` holding the symmetric
adjacency; the Laplacian ``L = Deg - Adj`` is derived on demand.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True)
class GraphLaplacian:
    """Weighted undirected graph over ``n`` samples.

    ``adjacency`` is a symmetric CSR matrix with nonnegative weights and an
    empty diagonal.
    """

    adjacency: sp.csr_matrix

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=float)
        if adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        adj.setdiag(0.0)
        adj.eliminate_zeros()
        adj.sort_indices()
        if adj.nnz and adj.data.min() < 0:
            raise ValueError("adjacency weights must be nonnegative")
        if abs(adj - adj.T).sum() > 1e-12 * max(1.0, abs(adj).sum()):
            raise ValueError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @cached_property
    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """The Laplacian ``Deg - Adj`` as a CSR matrix."""
        return (sp.diags(self.degree) - self.adjacency).tocsr()

    @cached_property
    def edges(self):
        """Undirected edges ``(i, j, w)`` with ``i < j``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return coo.row, coo.col, coo.data

    def subgraph(self, index) -> GraphLaplacian:
        index = np.asarray(index)
        return GraphLaplacian(self.adjacency[index][:, index])

    @classmethod
    def empty(cls, n: int) -> GraphLaplacian:
        return cls(sp.csr_matrix((n, n)))

    def to_text(self) -> str:
        """Coordinate-list dump of the adjacency: one ``i j weight`` per line."""
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        out = io.StringIO()
        out.write(f"# n={self.n}\n")
        for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
            out.write(f"{i} {j} {w:.17g}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str, n: int | None = None) -> GraphLaplacian:
        rows, cols, vals = [], [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("n=") and n is None:
                    n = int(line[1:].strip()[2:])
                continue
            i, j, w = line.split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(w))
        if n is None:
            n = max(max(rows, default=-1), max(cols, default=-1)) + 1
        return cls(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def haversine(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in meters; inputs in decimal degrees, broadcastable."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def knn_haversine(lat, lon, k: int, chunk: int = 512):
    """Indices and distances of the ``k`` nearest other samples of each sample.

    Ties are broken by lowest index so the result depends only on input order.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = lat.size
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = haversine(lat[start:stop, None], lon[start:stop, None], lat[None, :], lon[None, :])
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def spatial_laplacian(lat, lon, k_neighbors: int = 10, kernel_bandwidth: float | None = None) -> GraphLaplacian:
    """k-nearest-neighbour graph under haversine distance with a Gaussian kernel.

    Edge weights are ``exp(-d**2 / sigma**2)`` where ``sigma`` defaults to the
    median neighbour distance. Directed kNN edges are symmetrized by ``max``.
    If every neighbour distance is zero the kernel is undefined and all kNN
    edges get weight 1.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if lat.shape != lon.shape or lat.ndim != 1:
        raise ValueError("latitude and longitude must be 1-d vectors of equal length")
    n = lat.size
    if not 1 <= k_neighbors < n:
        raise ValueError(f"k_neighbors must satisfy 1 <= k < N (k={k_neighbors}, N={n})")
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ValueError("coordinates must be finite")

    idx, dist = knn_haversine(lat, lon, k_neighbors)
    sigma = float(np.median(dist)) if kernel_bandwidth is None else float(kernel_bandwidth)
    if sigma > 0:
        w = np.exp(-((dist / sigma) ** 2))
    else:
        w = np.ones_like(dist)
    rows = np.repeat(np.arange(n), k_neighbors)
    directed = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    return GraphLaplacian(directed.maximum(directed.T))


def day_of_year(dates) -> np.ndarray:
    """Day of year in 1..365; the leap day 366 is folded onto 365."""
    d = np.asarray(dates, dtype="datetime64[D]")
    years = d.astype("datetime64[Y]")
    doy = (d - years).astype(np.int64) + 1
    return np.minimum(doy, 365)


def circular_day_distance(d1, d2, period_days: int = 365) -> np.ndarray:
    """Day-of-year gap wrapped at ``period_days`` (Dec 31 and Jan 1 are 1 day apart)."""
    gap = np.abs(day_of_year(d1) - day_of_year(d2))
    gap = np.mod(gap, period_days)
    return np.minimum(gap, period_days - gap)


def temporal_laplacian(dates, window_days: int = 30, period_days: int = 365, chunk: int = 1024) -> GraphLaplacian:
    """Circular-calendar graph: samples within ``window_days`` of each other by
    day of year are joined with weight ``1 - gap / window_days``."""
    if window_days <= 0 or not window_days < period_days / 2:
        raise ValueError(f"window_days must be in (0, period/2); got {window_days} with period {period_days}")
    dates = np.asarray(dates, dtype="datetime64[D]")
    if np.any(np.isnat(dates)):
        raise ValueError("dates contain NaT")
    doy = day_of_year(dates)
    n = doy.size
    rows, cols, vals = [], [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        gap = np.abs(doy[start:stop, None] - doy[None, :]) % period_days
        gap = np.minimum(gap, period_days - gap)
        w = 1.0 - gap / window_days
        w[np.arange(stop - start), np.arange(start, stop)] = 0.0
        r, c = np.nonzero(w > 0)
        rows.append(r + start)
        cols.append(c)
        vals.append(w[r, c])
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    if vals.size == 0:
        warnings.warn("temporal graph has no edges within the window; Laplacian is zero", RuntimeWarning, stacklevel=2)
    return GraphLaplacian(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def laplacian_quadratic_columns(L: GraphLaplacian, A: np.ndarray) -> np.ndarray:
    """Per-column ``a_k^T L a_k`` as edge sums ``sum_{i<j} w_ij (A_ik - A_jk)^2``."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if L.n != A.shape[0]:
        raise ValueError(f"Laplacian is {L.n}x{L.n} but A has {A.shape[0]} rows")
    rows, cols, w = L.edges
    diff = A[rows] - A[cols]
    return w @ (diff * diff)


def laplacian_quadratic(L: GraphLaplacian | None, A: np.ndarray) -> float:
    """``Tr(A^T L A)`` computed as the edge sum ``sum_ij w_ij |A_i - A_j|^2 / 2``."""
    if L is None:
        return 0.0
    return float(np.sum(laplacian_quadratic_columns(L, A)))


@dataclass(frozen=True)
class GraphParams:
    k_neighbors: int = 10
    window_days: int = 30
    period_days: int = 365
    bandwidth: float | None = None


def build_laplacians(latitude, longitude, dates, params: GraphParams | None = None):
    """Spatial and temporal Laplacians for one set of samples.

    ``k_neighbors`` is capped at ``N - 1`` so small folds stay valid.
    """
    params = params or GraphParams()
    n = len(latitude)
    k = min(params.k_neighbors, n - 1)
    Ls = spatial_laplacian(latitude, longitude, k, params.bandwidth)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        Lt = temporal_laplacian(dates, params.window_days, params.period_days)
    return Ls, Lt
