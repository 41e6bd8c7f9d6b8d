import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commdiar.core import DataError, ParameterError
from commdiar.graph import SparseGraph, exact_knn, knn_similarity_graph, write_edgelist
from conftest import two_blobs
from oracles import knn_bruteforce


def check_graph_invariants(g: SparseGraph):
    a = g.to_scipy().toarray()
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all(g.weights > 0) and np.all(np.isfinite(g.weights))
    np.testing.assert_allclose(g.degrees, a.sum(1), rtol=1e-12)
    assert g.total_edge_weight == pytest.approx(g.degrees.sum() / 2)


def test_identical_vectors_triangle():
    g = knn_similarity_graph(np.ones((3, 4)), 2)
    np.testing.assert_allclose(g.to_scipy().toarray(), np.ones((3, 3)) - np.eye(3))


def test_orthogonal_pair_empty():
    g = knn_similarity_graph(np.eye(2), 1)
    assert g.num_edges == 0


def test_two_blob_components_match_bruteforce(rng):
    x, labels = two_blobs(rng, n_per=10, sep=50.0)
    idx, _ = knn_bruteforce(x, 3)
    assert all(labels[i] == labels[j] for i in range(20) for j in idx[i])
    ncomp, comp = knn_similarity_graph(x, 3, "euclidean-gaussian").connected_components()
    assert ncomp == 2 and len(set(zip(comp, labels))) == 2


def test_exact_knn_line():
    idx, dist = exact_knn(np.array([[0.0], [1.0], [3.0]]), 1)
    assert idx[:, 0].tolist() == [1, 0, 1]
    assert dist[:, 0].tolist() == [1.0, 1.0, 2.0]


def test_exact_knn_full_rows(rng):
    x = rng.normal(size=(7, 3))
    idx, dist = exact_knn(x, 6)
    for i in range(7):
        assert sorted(idx[i]) == [j for j in range(7) if j != i]
    assert np.all(np.diff(dist, axis=1) >= 0)


def test_exact_knn_duplicates_tie_break():
    x = np.array([[1.0, 0], [1.0, 0], [1.0, 0], [5.0, 0]])
    idx, dist = exact_knn(x, 2)
    assert idx[0].tolist() == [1, 2] and idx[2].tolist() == [0, 1]
    assert dist[0].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_exact_knn_matches_bruteforce(rng, metric):
    x = rng.normal(size=(120, 6))
    for k in (1, 5, 17):
        idx, dist = exact_knn(x, k, metric)
        ref_idx, ref_dist = knn_bruteforce(x, k, metric)
        np.testing.assert_allclose(dist, ref_dist, atol=1e-9)
        assert np.array_equal(idx, ref_idx)


def test_knn_errors():
    with pytest.raises(ParameterError):
        knn_similarity_graph(np.ones((3, 2)), 3)
    with pytest.raises(ParameterError):
        exact_knn(np.ones((3, 2)), 0)
    with pytest.raises(DataError, match="row 2"):
        knn_similarity_graph(np.array([[1.0, 0], [0, 0], [0, 1.0]]), 1)


def test_complete_graph_at_n_minus_1(rng):
    x = np.abs(rng.normal(size=(9, 4))) + 0.1
    g = knn_similarity_graph(x, 8)
    assert g.num_edges == 9 * 8 // 2


def test_sim_threshold_drops_edges(rng):
    x = rng.normal(size=(30, 5))
    full = knn_similarity_graph(x, 5)
    cut = knn_similarity_graph(x, 5, sim_threshold=0.5)
    assert cut.num_edges < full.num_edges
    assert np.all(cut.weights >= 0.5)


@given(st.integers(3, 25), st.integers(1, 6), st.integers(0, 10_000),
       st.sampled_from(["cosine", "euclidean-gaussian"]))
def test_graph_invariants_random(n, k, seed, metric):
    k = min(k, n - 1)
    x = np.random.default_rng(seed).normal(size=(n, 4))
    check_graph_invariants(knn_similarity_graph(x, k, metric))


def test_edgelist_dump(tmp_path):
    g = SparseGraph.from_edges(3, [(0, 1, 0.5), (1, 2, 2.0)])
    write_edgelist(g, tmp_path / "g.txt")
    assert (tmp_path / "g.txt").read_text() == "0 1 0.5\n1 2 2\n"


def test_from_scipy_rejects_asymmetry():
    with pytest.raises(DataError):
        SparseGraph.from_dense(np.array([[0, 1.0], [0.5, 0]]))
    with pytest.raises(DataError):
        SparseGraph.from_edges(2, [(0, 0, 1.0)])
