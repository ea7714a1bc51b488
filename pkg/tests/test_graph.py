import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from gatbotnet.exceptions import ConfigError, DataError, DegenerateVectorError
from gatbotnet.graph import (KnnGraph, Metric, build_knn_graph, graph_stats, knn_indices,
                             pairwise_distance)


def brute_force_edges(points, k, metric):
    """All-pairs reference: k smallest distances per row, ties to the lower index."""
    d = cdist(points, points, metric="euclidean" if metric == "euclidean" else "cosine")
    n = len(points)
    edges = set()
    for i in range(n):
        order = sorted((d[i, j], j) for j in range(n) if j != i)
        for _, j in order[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def pad8(xs):
    p = np.zeros((len(xs), 8))
    p[:, 0] = xs
    return p


def test_pairwise_distance_examples():
    a = np.arange(8.0) + 1
    assert pairwise_distance(a, a, "euclidean") == 0.0
    assert pairwise_distance(a, a, "cosine") == pytest.approx(0.0, abs=1e-15)
    assert pairwise_distance(np.zeros(8), pad8([3])[0] + np.eye(8)[1] * 4, "euclidean") == 5.0
    assert pairwise_distance(np.eye(8)[0], np.eye(8)[3], "cosine") == 1.0


def test_pairwise_distance_zero_vector_cosine():
    with pytest.raises(DegenerateVectorError):
        pairwise_distance(np.zeros(8), np.ones(8), "cosine")


def test_one_dimensional_example():
    g = build_knn_graph(pad8([0, 1, 3, 10]), 1, "euclidean")
    assert knn_indices(pad8([0, 1, 3, 10]), 1).ravel().tolist() == [1, 0, 1, 2]
    assert g.undirected_edges() == {(0, 1), (1, 2), (2, 3)}


def test_ties_prefer_lower_index():
    pts = pad8([0.0, 1.0, -1.0, 2.0])
    assert knn_indices(pts, 1)[0, 0] == 1
    assert knn_indices(pts, 2)[0].tolist() == [1, 2]


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_complete_graph_when_k_is_n_minus_one(metric):
    pts = np.random.default_rng(0).normal(size=(6, 8))
    g = build_knn_graph(pts, 5, metric)
    assert graph_stats(g).edge_count == 15
    assert np.all(g.degrees() == 5)


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
@pytest.mark.parametrize("k", [3, 5])
def test_matches_brute_force_500(metric, k):
    pts = np.random.default_rng(k).normal(size=(500, 8))
    assert build_knn_graph(pts, k, metric).undirected_edges() == brute_force_edges(pts, k, metric)


def test_blocked_path_matches_single_block():
    pts = np.random.default_rng(1).normal(size=(300, 8))
    np.testing.assert_array_equal(knn_indices(pts, 4, block_size=7), knn_indices(pts, 4))


def test_duplicate_points_are_deterministic():
    pts = np.repeat(np.random.default_rng(2).normal(size=(20, 8)), 3, axis=0)
    idx = knn_indices(pts, 2)
    # each point's two twins are at distance 0 and the lowest indices win
    for i in range(60):
        twins = [j for j in range(3 * (i // 3), 3 * (i // 3) + 3) if j != i]
        assert idx[i].tolist() == twins


def test_errors():
    with pytest.raises(ConfigError):
        build_knn_graph(np.zeros((3, 8)), 3, "euclidean")
    pts = np.ones((10, 8))
    pts[[2, 7]] = 0
    with pytest.raises(DegenerateVectorError) as info:
        build_knn_graph(pts, 2, "cosine")
    assert info.value.rows == [2, 7]
    with pytest.raises(ConfigError):
        Metric.parse("manhattan")


def test_graph_stats_small_graphs():
    path = KnnGraph.from_edges(3, [(0, 1), (1, 2)])
    s = graph_stats(path)
    assert s.edge_count == 2 and path.degrees().tolist() == [1, 2, 1]
    k4 = KnnGraph.from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    s = graph_stats(k4)
    assert s.edge_count == 6 and s.min_degree == s.max_degree == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(8, 60), st.integers(1, 5), st.sampled_from(["euclidean", "cosine"]))
def test_structural_invariants(seed, n, k, metric):
    pts = np.random.default_rng(seed).normal(size=(n, 8))
    g = build_knn_graph(pts, k, metric)
    assert g.offsets[0] == 0 and g.offsets[-1] == g.neighbors.size
    assert np.all(np.diff(g.offsets) >= 0)
    directed = {tuple(e) for e in g.directed_edges().tolist()}
    assert all(u != v for u, v in directed)
    assert len(directed) == g.neighbors.size
    assert all((v, u) in directed for u, v in directed)
    deg = g.degrees()
    assert deg.min() >= k
    assert n * k <= g.neighbors.size <= 2 * n * k
    e = graph_stats(g).edge_count
    assert n * k / 2 <= e <= n * k
    for i in range(n):
        assert np.all(np.diff(g.neighbors_of(i)) > 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.125, 0.5, 2.0, 64.0]))
def test_euclidean_scale_invariance(seed, c):
    # powers of two scale every distance exactly, so rankings cannot drift
    pts = np.random.default_rng(seed).normal(size=(40, 8))
    a = build_knn_graph(pts, 3, "euclidean")
    b = build_knn_graph(pts * c, 3, "euclidean")
    np.testing.assert_array_equal(a.neighbors, b.neighbors)


def test_deterministic_bytes(tmp_path):
    pts = np.random.default_rng(4).normal(size=(200, 8))
    build_knn_graph(pts, 3, "cosine").save(tmp_path / "a.knng")
    build_knn_graph(pts, 3, "cosine").save(tmp_path / "b.knng")
    assert (tmp_path / "a.knng").read_bytes() == (tmp_path / "b.knng").read_bytes()


def test_file_round_trip_and_corruption(tmp_path):
    g = build_knn_graph(np.random.default_rng(5).normal(size=(50, 8)), 5, "cosine")
    g.save(tmp_path / "g.knng")
    h = KnnGraph.load(tmp_path / "g.knng")
    assert h.metric is Metric.COSINE and h.k == 5 and h.symmetrized
    np.testing.assert_array_equal(h.offsets, g.offsets)
    np.testing.assert_array_equal(h.neighbors, g.neighbors)
    raw = (tmp_path / "g.knng").read_bytes()
    (tmp_path / "bad.knng").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        KnnGraph.load(tmp_path / "bad.knng")
    (tmp_path / "short.knng").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        KnnGraph.load(tmp_path / "short.knng")


def test_edge_csv(tmp_path):
    g = build_knn_graph(pad8([0, 1, 3, 10]), 1)
    g.to_edge_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "u,v\n0,1\n1,2\n2,3\n"


def test_permute_relabels_nodes():
    g = KnnGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    p = g.permute([3, 2, 1, 0])
    assert p.undirected_edges() == {(2, 3), (1, 2), (0, 1)}
    assert p.neighbors_of(3).tolist() == [2]


def test_invalid_csr_rejected():
    with pytest.raises(DataError):
        KnnGraph(3, [0, 2, 1, 3], [1, 2, 0])
    with pytest.raises(DataError):
        KnnGraph(2, [0, 1, 2], [1, 5])
