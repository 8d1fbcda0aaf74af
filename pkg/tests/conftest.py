import numpy as np
import pytest

from dcqaoa.graph import WeightedGraph


def random_signed_graph(n, p=0.5, seed=0, name=""):
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    w = rng.uniform(0.1, 1.0, keep.sum()) * rng.choice([-1.0, 1.0], keep.sum())
    return WeightedGraph(n, iu[keep], iv[keep], w, name=name or f"rand{n}")


def clique_edges(nodes, w=1.0):
    nodes = list(nodes)
    return [(a, b, w) for i, a in enumerate(nodes) for b in nodes[i + 1 :]]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
