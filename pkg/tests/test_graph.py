import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmc.graph import (
    CapacityError,
    Graph,
    GraphError,
    build_knn_graph,
    dirichlet_energy,
    eigendecompose,
    laplacian,
    read_edge_list,
    write_edge_list,
)

from conftest import random_graph, ring


class TestGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(GraphError):
            Graph.from_edges(3, [(1, 1, 1.0)])

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(GraphError):
            Graph.from_edges(3, [(0, 1, 0.0)])

    def test_rejects_asymmetric_duplicate(self):
        with pytest.raises(GraphError):
            Graph.from_edges(3, [(0, 1, 1.0), (1, 0, 2.0)])

    def test_both_orientations_merge(self):
        g = Graph.from_edges(3, [(0, 1, 1.5), (1, 0, 1.5)])
        assert g.n_edges == 1
        A = g.adjacency()
        assert A[0, 1] == A[1, 0] == 1.5

    def test_permuted_relabels(self, rng):
        g = random_graph(rng, 7)
        perm = rng.permutation(7)
        A = g.adjacency()
        np.testing.assert_array_equal(g.permuted(perm).adjacency(), A[np.ix_(perm, perm)])


class TestKnn:
    def test_collinear_points(self):
        g = build_knn_graph([[0.0], [1.0], [10.0]], k=1)
        assert sorted((i, j) for i, j, _ in g.edges()) == [(0, 1), (1, 2)]

    def test_all_neighbours_is_complete(self, rng):
        n = 6
        g = build_knn_graph(rng.standard_normal((n, 3)), k=n - 1)
        assert g.n_edges == n * (n - 1) // 2
        assert np.all(g.weight == 1.0)

    def test_against_brute_force(self, rng):
        X = rng.standard_normal((20, 2))
        k = 3
        g = build_knn_graph(X, k)
        A = g.adjacency() > 0
        expected = np.zeros_like(A)
        for i in range(20):
            d = [(np.sum((X[i] - X[j]) ** 2), j) for j in range(20) if j != i]
            for _, j in sorted(d)[:k]:
                expected[i, j] = expected[j, i] = True
        np.testing.assert_array_equal(A, expected)
        assert np.all(A.sum(axis=1) >= k)

    def test_errors(self):
        with pytest.raises(GraphError):
            build_knn_graph([[1.0]], 1)
        with pytest.raises(GraphError):
            build_knn_graph([[0.0], [np.nan]], 1)
        with pytest.raises(GraphError):
            build_knn_graph([[0.0], [1.0]], 2)


class TestLaplacian:
    def test_single_edge(self):
        L = laplacian(Graph.from_edges(2, [(0, 1, 1.0)]))
        np.testing.assert_allclose(L.matrix, [[1, -1], [-1, 1]], atol=1e-15)
        assert L.lambda_max == pytest.approx(2.0)
        np.testing.assert_allclose(L.rescaled, [[0, -1], [-1, 0]], atol=1e-15)

    def test_isolated_vertex_row_is_identity(self):
        L = laplacian(Graph.from_edges(3, [(0, 1, 1.0)]))
        np.testing.assert_array_equal(L.matrix[2], [0, 0, 1])
        np.testing.assert_array_equal(L.matrix[:, 2], [0, 0, 1])

    def test_ring_spectrum_closed_form(self):
        lam = eigendecompose(laplacian(ring(10))).eigenvalues
        expected = np.sort(1 - np.cos(2 * np.pi * np.arange(10) / 10))
        np.testing.assert_allclose(lam, expected, atol=1e-8)

    def test_bound_flag_uses_two(self, rng):
        L = laplacian(random_graph(rng, 6), exact_lambda_max=False)
        assert L.lambda_max == 2.0
        np.testing.assert_allclose(L.rescaled, L.matrix - np.eye(6))

    def test_matches_direct_formula(self, rng):
        g = random_graph(rng, 9)
        W = g.adjacency()
        d = W.sum(axis=1)
        Dm = np.diag(np.where(d > 0, d, np.inf) ** -0.5)
        np.testing.assert_allclose(laplacian(g).matrix, np.eye(9) - Dm @ W @ Dm, atol=1e-14)

    def test_graph_caches_operator(self, rng):
        g = random_graph(rng, 5)
        assert g.laplacian() is g.laplacian()


class TestEigen:
    def test_identity_operator(self):
        eig = eigendecompose(laplacian(Graph.edgeless(4)))
        np.testing.assert_allclose(eig.eigenvalues, np.ones(4))
        np.testing.assert_allclose(eig.reconstruct(), np.eye(4), atol=1e-12)

    def test_two_vertices(self):
        eig = eigendecompose(laplacian(Graph.from_edges(2, [(0, 1, 1.0)])))
        np.testing.assert_allclose(eig.eigenvalues, [0, 2], atol=1e-14)
        v0 = eig.eigenvectors[:, 0] * np.sign(eig.eigenvectors[0, 0])
        v1 = eig.eigenvectors[:, 1] * np.sign(eig.eigenvectors[0, 1])
        np.testing.assert_allclose(v0, np.array([1, 1]) / np.sqrt(2), atol=1e-14)
        np.testing.assert_allclose(v1, np.array([1, -1]) / np.sqrt(2), atol=1e-14)

    def test_reconstruction_and_orthonormality(self, rng):
        L = laplacian(random_graph(rng, 8))
        eig = eigendecompose(L)
        Phi = eig.eigenvectors
        assert np.all(np.diff(eig.eigenvalues) >= 0)
        np.testing.assert_allclose(Phi.T @ Phi, np.eye(8), atol=1e-8)
        rel = np.linalg.norm(eig.reconstruct() - L.matrix) / np.linalg.norm(L.matrix)
        assert rel < 1e-8

    def test_capacity_limit(self, rng):
        with pytest.raises(CapacityError, match="Chebyshev"):
            eigendecompose(laplacian(random_graph(rng, 6)), max_size=5)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 14), p=st.floats(0.0, 1.0), seed=st.integers(0, 2**31 - 1))
def test_laplacian_properties(n, p, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p)
    L = laplacian(g)
    np.testing.assert_array_equal(L.matrix, L.matrix.T)
    for x in rng.standard_normal((100, n)):
        assert dirichlet_energy(L, x) >= -1e-9
    lam = np.linalg.eigvalsh(L.rescaled)
    assert lam.min() >= -1 - 1e-9 and lam.max() <= 1 + 1e-9


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 14), seed=st.integers(0, 2**31 - 1))
def test_sqrt_degree_null_space(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.3, connected=True)
    v = np.sqrt(g.degrees())
    np.testing.assert_allclose(laplacian(g).matrix @ v, 0, atol=1e-8)


@pytest.mark.parametrize("suffix", [".tsv", ".tsv.gz"])
def test_edge_list_round_trip(tmp_path, rng, suffix):
    g = random_graph(rng, 9)
    path = tmp_path / f"g{suffix}"
    write_edge_list(g, path)
    assert read_edge_list(path) == g
    if suffix == ".tsv":
        lines = path.read_text().splitlines()
        assert lines[0] == "#vertices=9"
        assert len(lines) == 1 + g.n_edges
        assert all(len(line.split("\t")) == 3 for line in lines[1:])


def test_edge_list_missing_header(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("0\t1\t1.0\n")
    with pytest.raises(GraphError, match="vertices"):
        read_edge_list(p)
