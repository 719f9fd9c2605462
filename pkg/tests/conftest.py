import numpy as np
import pytest
import scipy.sparse as sp

from graphshard.graphs import LabeledGraph


def graph_from_edges(n, edges, labels, features=None, h=None, weights=None):
    """Small-graph constructor for tests: edges as (u, v) pairs."""
    labels = np.asarray(labels, dtype=np.int64)
    if h is None:
        h = int(labels.max()) + 1 if n else 0
    if features is None:
        features = np.arange(n, dtype=np.float64)[:, None] + 1.0
    features = np.asarray(features, dtype=np.float64)
    if edges:
        rows = np.array([e[0] for e in edges] + [e[1] for e in edges])
        cols = np.array([e[1] for e in edges] + [e[0] for e in edges])
        if weights is None:
            data = np.ones(2 * len(edges))
        else:
            data = np.concatenate([weights, weights]).astype(np.float64)
        adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    else:
        adj = sp.csr_matrix((n, n))
    return LabeledGraph(n=n, adjacency=adj, features=features, labels=labels, h=h)


def random_labeled_graph(rng, n, h, p=0.3, d=3):
    """Erdos-Renyi graph with every class guaranteed present."""
    labels = rng.integers(0, h, size=n)
    labels[:h] = np.arange(h)  # force every class
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j))
    features = rng.standard_normal((n, d))
    return graph_from_edges(n, edges, labels, features=features, h=h)


def planted_fixture_8(seed):
    """Weighted two-block 8-node fixture with class-balanced blocks; the
    operating envelope of the guided partitioners (structure aligned with
    fairness and balance)."""
    rng = np.random.default_rng(seed)
    edges, weights = [], []
    for lo in (0, 4):
        for i in range(lo, lo + 4):
            for j in range(i + 1, lo + 4):
                edges.append((i, j))
                weights.append(rng.uniform(0.5, 2.0))
    if seed % 2 == 0:  # light bridge on half the fixtures
        edges.append((int(rng.integers(0, 4)), int(rng.integers(4, 8))))
        weights.append(0.3)
    labels = np.zeros(8, dtype=int)
    for lo in (0, 4):
        labels[lo : lo + 4] = rng.permutation([0, 0, 1, 1])
    return graph_from_edges(8, edges, labels.tolist(), weights=np.array(weights))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
