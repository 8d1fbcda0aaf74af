import networkx as nx
import numpy as np
import pytest
from conftest import random_signed_graph
from hypothesis import given, settings
from hypothesis import strategies as st

from dcqaoa.features import (
    FEATURE_NAMES,
    StructuralFeatures,
    betweenness,
    compute_node_features,
    pagerank,
    raw_node_features,
    weighted_clustering,
)
from dcqaoa.graph import WeightedGraph


def to_nx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.num_nodes))
    for a, b, w in g.edges():
        G.add_edge(a, b, w=w, absw=abs(w))
    return G


def test_triangle_clustering_is_one():
    g = WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    np.testing.assert_allclose(weighted_clustering(g), 1.0)


def test_two_node_pagerank():
    g = WeightedGraph.from_edges(2, [(0, 1, 1.0)])
    np.testing.assert_allclose(pagerank(g), [0.5, 0.5], atol=1e-12)


def test_star_betweenness():
    g = WeightedGraph.from_edges(4, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)])
    np.testing.assert_allclose(betweenness(g), [3, 0, 0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_features_match_networkx(seed):
    g = random_signed_graph(14, p=0.35, seed=seed)
    G = to_nx(g)
    raw = raw_node_features(g)
    np.testing.assert_array_equal(raw[:, 0], [G.degree(i) for i in range(14)])
    np.testing.assert_allclose(raw[:, 1], [G.degree(i, weight="w") for i in range(14)], atol=1e-12)
    cl = nx.clustering(G, weight="absw")
    np.testing.assert_allclose(raw[:, 2], [cl[i] for i in range(14)], atol=1e-10)
    pr = nx.pagerank(G, alpha=0.85, weight="absw", tol=1e-13, max_iter=1000)
    np.testing.assert_allclose(raw[:, 3], [pr[i] for i in range(14)], atol=1e-7)
    bc = nx.betweenness_centrality(G, normalized=False, weight="absw")
    np.testing.assert_allclose(raw[:, 4], [bc[i] for i in range(14)], atol=1e-8)


def test_isolated_nodes_get_zero_clustering():
    g = WeightedGraph.from_edges(4, [(0, 1, 2.0)])
    np.testing.assert_array_equal(weighted_clustering(g), 0.0)
    assert np.isfinite(compute_node_features(g)).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_pagerank_is_a_distribution(n, seed):
    pr = pagerank(random_signed_graph(n, p=0.3, seed=seed))
    assert pr.sum() == pytest.approx(1.0, abs=1e-8)
    assert (pr >= 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**31 - 1))
def test_standardisation(n, seed):
    X = compute_node_features(random_signed_graph(n, p=0.4, seed=seed))
    assert X.shape == (n, len(FEATURE_NAMES))
    assert np.isfinite(X).all()
    for col in X.T:
        if np.any(col != 0):
            assert abs(col.mean()) < 1e-9
            assert abs(col.var() - 1.0) < 1e-6


def test_transformer_interface():
    graphs = [random_signed_graph(6, seed=s) for s in range(3)]
    tf = StructuralFeatures().fit(graphs)
    out = tf.transform(graphs)
    assert len(out) == 3 and out[0].shape == (6, 5)
    assert list(tf.get_feature_names_out()) == list(FEATURE_NAMES)
    raw = StructuralFeatures(standardize=False).fit_transform(graphs)
    np.testing.assert_array_equal(raw[1], raw_node_features(graphs[1]))
