import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from tsd.graph import (
    GraphLaplacian,
    build_laplacians,
    circular_day_distance,
    day_of_year,
    haversine,
    laplacian_quadratic,
    laplacian_quadratic_columns,
    spatial_laplacian,
    temporal_laplacian,
)


def random_coords(rng, n):
    return 40 + rng.uniform(0, 1, n), -77 + rng.uniform(0, 1, n)


def random_dates(rng, n):
    return np.datetime64("2010-01-01") + rng.integers(0, 4 * 365, n).astype("timedelta64[D]")


def components(adj):
    return sp.csgraph.connected_components(adj, directed=False)[0]


# spatial builder

def test_identical_points_get_unit_weight():
    L = spatial_laplacian(np.array([40.0, 40.0]), np.array([-77.0, -77.0]), k_neighbors=1)
    np.testing.assert_array_equal(L.matrix.toarray(), [[1, -1], [-1, 1]])


def test_collinear_middle_node_links_both_ends():
    lat = np.array([40.0, 40.0, 40.0])
    lon = np.array([-77.0, -76.99, -76.98])
    A = spatial_laplacian(lat, lon, k_neighbors=1).adjacency.toarray()
    # hand-built: 0->1, 1->0 (tie goes to lower index), 2->1; symmetrized by max
    expected = (np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) > 0)
    np.testing.assert_array_equal(A > 0, expected)


def test_spatial_kernel_weights_match_hand_formula():
    lat = np.array([40.0, 40.0, 40.1])
    lon = np.array([-77.0, -76.9, -77.0])
    L = spatial_laplacian(lat, lon, k_neighbors=2, kernel_bandwidth=5000.0)
    d01 = haversine(lat[0], lon[0], lat[1], lon[1])
    assert L.adjacency[0, 1] == pytest.approx(np.exp(-(d01 / 5000.0) ** 2), rel=1e-12)


def test_spatial_rejects_bad_k():
    with pytest.raises(ValueError):
        spatial_laplacian(np.zeros(3), np.zeros(3), k_neighbors=3)


def test_haversine_one_degree_latitude():
    # 1 degree of arc on the mean-radius sphere
    assert haversine(0.0, 0.0, 1.0, 0.0) == pytest.approx(6_371_008.8 * np.pi / 180, rel=1e-12)


# temporal builder

def test_new_year_wraps_to_one_day():
    assert circular_day_distance(np.datetime64("2013-12-31"), np.datetime64("2014-01-01")) == 1


def test_leap_day_folds_onto_365():
    assert day_of_year(np.array(["2012-12-31"], dtype="datetime64[D]"))[0] == 365
    assert circular_day_distance(np.datetime64("2012-12-30"), np.datetime64("2012-12-31")) == 0


def test_temporal_weights_at_window_boundary():
    d = np.array(["2011-03-01", "2011-03-31", "2011-03-01", "2011-03-16"], dtype="datetime64[D]")
    A = temporal_laplacian(d, window_days=30).adjacency.toarray()
    assert A[0, 1] == 0.0  # gap equals the window: no edge
    assert A[0, 2] == 1.0  # same day
    assert A[0, 3] == pytest.approx(0.5)


def test_temporal_window_must_be_under_half_period():
    with pytest.raises(ValueError):
        temporal_laplacian(np.array(["2011-01-01", "2011-02-01"], dtype="datetime64[D]"), window_days=183)


def test_temporal_warns_when_empty():
    d = np.array(["2011-01-01", "2011-07-01"], dtype="datetime64[D]")
    with pytest.warns(RuntimeWarning):
        L = temporal_laplacian(d, window_days=30)
    assert L.n_edges == 0


@given(st.integers(0, 3000), st.integers(0, 3000))
def test_circular_distance_symmetric_and_bounded(a, b):
    d1 = np.datetime64("2005-01-01") + np.timedelta64(a, "D")
    d2 = np.datetime64("2005-01-01") + np.timedelta64(b, "D")
    g = circular_day_distance(d1, d2)
    assert g == circular_day_distance(d2, d1)
    assert 0 <= g <= 365 / 2


# Laplacian algebra

@pytest.mark.filterwarnings("ignore:temporal graph has no edges")
@given(st.integers(0, 10_000), st.integers(3, 25))
def test_laplacian_properties(seed, n):
    rng = np.random.default_rng(seed)
    lat, lon = random_coords(rng, n)
    for L in (spatial_laplacian(lat, lon, k_neighbors=min(4, n - 1)),
              temporal_laplacian(random_dates(rng, n), window_days=60)):
        M = L.matrix.toarray()
        np.testing.assert_allclose(M, M.T, atol=0)
        assert np.abs(M.sum(axis=1)).max() <= 1e-10
        x = rng.normal(size=(n, 20))
        assert np.min(np.einsum("ik,ij,jk->k", x, M, x)) >= -1e-10


def test_quadratic_examples():
    L = GraphLaplacian(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert laplacian_quadratic(L, np.array([[0.0], [1.0]])) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    Ls = spatial_laplacian(*random_coords(rng, 10), k_neighbors=3)
    assert laplacian_quadratic(Ls, np.full((10, 3), 2.5)) == pytest.approx(0.0, abs=1e-12)
    assert laplacian_quadratic(None, np.ones((10, 3))) == 0.0


@given(st.integers(0, 10_000))
def test_edge_sum_matches_dense_trace(seed):
    rng = np.random.default_rng(seed)
    Ls = spatial_laplacian(*random_coords(rng, 10), k_neighbors=3)
    A = rng.normal(size=(10, 3))
    dense = np.trace(A.T @ Ls.matrix.toarray() @ A)
    assert abs(laplacian_quadratic(Ls, A) - dense) <= 1e-10 * max(1.0, abs(dense))
    cols = laplacian_quadratic_columns(Ls, A)
    np.testing.assert_allclose(cols, np.diag(A.T @ Ls.matrix.toarray() @ A), rtol=1e-10, atol=1e-12)


def _null_dim_inverse_iteration(M, eps=1e-8, iters=30, seed=0):
    """Dimension of the near-nullspace of ``M`` by block inverse iteration on ``M + eps I``."""
    n = M.shape[0]
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(n, n))
    S = M + eps * np.eye(n)
    for _ in range(iters):
        V, _ = np.linalg.qr(np.linalg.solve(S, V))
    rayleigh = np.diag(V.T @ M @ V)
    return int(np.sum(rayleigh < 1e-6))


@given(st.integers(0, 10_000))
def test_components_equal_nullspace_dimension(seed):
    rng = np.random.default_rng(seed)
    n = 9
    # union of a few random cliques plus isolated nodes
    labels = rng.integers(0, 4, n)
    adj = (labels[:, None] == labels[None, :]).astype(float) * rng.uniform(0.5, 1.5, (n, n))
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    L = GraphLaplacian(sp.csr_matrix(adj))
    assert _null_dim_inverse_iteration(L.matrix.toarray()) == components(L.adjacency)


def test_text_round_trip_and_subgraph():
    rng = np.random.default_rng(1)
    L = spatial_laplacian(*random_coords(rng, 15), k_neighbors=4)
    back = GraphLaplacian.from_text(L.to_text())
    assert (back.adjacency != L.adjacency).nnz == 0
    sub = L.subgraph([0, 3, 5])
    np.testing.assert_array_equal(sub.adjacency.toarray(), L.adjacency.toarray()[np.ix_([0, 3, 5], [0, 3, 5])])


def test_rejects_asymmetric_or_negative():
    with pytest.raises(ValueError):
        GraphLaplacian(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))
    with pytest.raises(ValueError):
        GraphLaplacian(sp.csr_matrix(np.array([[0.0, -1.0], [-1.0, 0.0]])))


def test_build_laplacians_caps_k():
    rng = np.random.default_rng(2)
    lat, lon = random_coords(rng, 4)
    Ls, Lt = build_laplacians(lat, lon, random_dates(rng, 4))
    assert Ls.n == Lt.n == 4
    assert Ls.n_edges == 6
