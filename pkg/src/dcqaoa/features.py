"""Structural node descriptors fed to the graph encoders."""

from __future__ import annotations

import heapq

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .graph import WeightedGraph

FEATURE_NAMES = ("degree", "strength", "clustering", "pagerank", "betweenness")


def weighted_clustering(g: WeightedGraph) -> np.ndarray:
    """Geometric-mean (Onnela) clustering on ``|A| / max|A|``; nodes with degree < 2 get 0."""
    n = g.num_nodes
    if g.num_edges == 0:
        return np.zeros(n)
    W = np.abs(g.adjacency)
    W = np.cbrt(W / W.max())
    tri = np.einsum("ij,jk,ki->i", W, W, W)
    deg = (W > 0).sum(axis=1).astype(float)
    out = np.zeros(n)
    ok = deg >= 2
    out[ok] = tri[ok] / (deg[ok] * (deg[ok] - 1))
    return out


def pagerank(g: WeightedGraph, alpha: float = 0.85, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    """Power-iteration PageRank on absolute weights; dangling mass is spread uniformly."""
    n = g.num_nodes
    W = np.abs(g.adjacency)
    out_deg = W.sum(axis=1)
    dangling = out_deg == 0
    T = np.divide(W, out_deg[:, None], out=np.zeros_like(W), where=~dangling[:, None])
    pr = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = alpha * (pr @ T + pr[dangling].sum() / n) + (1.0 - alpha) / n
        change = np.abs(nxt - pr).sum()
        pr = nxt
        if change < tol:
            break
    return pr / pr.sum()


def betweenness(g: WeightedGraph, rel_tol: float = 1e-12) -> np.ndarray:
    """Brandes betweenness with Dijkstra distances ``|w|``; counts unordered endpoint pairs."""
    n = g.num_nodes
    nbrs = g.neighbors
    A = np.abs(g.adjacency)
    bc = np.zeros(n)
    for s in range(n):
        dist = np.full(n, np.inf)
        sigma = np.zeros(n)
        preds: list[list[int]] = [[] for _ in range(n)]
        order = []
        dist[s] = 0.0
        sigma[s] = 1.0
        heap = [(0.0, s)]
        done = np.zeros(n, dtype=bool)
        while heap:
            d, x = heapq.heappop(heap)
            if done[x]:
                continue
            done[x] = True
            order.append(x)
            for y in nbrs[x]:
                nd = d + A[x, y]
                tol = rel_tol * max(1.0, nd)
                if nd < dist[y] - tol:
                    dist[y] = nd
                    sigma[y] = sigma[x]
                    preds[y] = [x]
                    heapq.heappush(heap, (nd, y))
                elif abs(nd - dist[y]) <= tol and not done[y]:
                    sigma[y] += sigma[x]
                    preds[y].append(x)
        delta = np.zeros(n)
        for x in reversed(order):
            for p in preds[x]:
                delta[p] += sigma[p] / sigma[x] * (1.0 + delta[x])
            if x != s:
                bc[x] += delta[x]
    return bc / 2.0


def raw_node_features(g: WeightedGraph) -> np.ndarray:
    A = g.adjacency
    degree = (A != 0).sum(axis=1).astype(float)
    strength = A.sum(axis=1)
    return np.column_stack([degree, strength, weighted_clustering(g), pagerank(g), betweenness(g)])


def standardize_columns(X: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    out = np.zeros_like(X, dtype=float)
    ok = std > eps
    out[:, ok] = (X[:, ok] - mean[ok]) / std[ok]
    return out


def compute_node_features(g: WeightedGraph) -> np.ndarray:
    """The ``N x 5`` standardised feature matrix (degree, strength, clustering, PageRank, betweenness)."""
    return standardize_columns(raw_node_features(g))


class StructuralFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a sequence of graphs to their feature matrices."""

    def __init__(self, standardize=True):
        self.standardize = standardize

    def fit(self, graphs, y=None):
        self.n_features_out_ = len(FEATURE_NAMES)
        return self

    def transform(self, graphs):
        fn = compute_node_features if self.standardize else raw_node_features
        return [fn(g) for g in graphs]

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)
