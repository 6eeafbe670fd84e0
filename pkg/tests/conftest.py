import numpy as np
import pytest

from gnnbandit.graph import generate_sbm
from gnnbandit.models import TrainConfig, fit


def dense_gcn(adj, x, weights, self_loops=True, relu_last=False):
    """Independent dense forward: explicit per-entry normalization, no sparse code."""
    n = adj.shape[0]
    a = adj + (np.eye(n) if self_loops else 0.0)
    deg = a.sum(axis=1)
    s = np.zeros((n, n))
    for u in range(n):
        for w in range(n):
            if a[u, w]:
                s[u, w] = 1.0 / (np.sqrt(deg[u]) * np.sqrt(deg[w]))
    h = x
    for k, w in enumerate(weights):
        h = s @ h @ w
        if k < len(weights) - 1 or relu_last:
            h = np.maximum(h, 0.0)
    return h


def dense_softmax(z):
    z = np.atleast_2d(z)
    out = np.empty_like(z, dtype=np.float64)
    for i, row in enumerate(z):
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out


@pytest.fixture(scope="session")
def sbm_victim():
    """SBM 3 x 100 with a trained two-layer GCN, shared across test modules."""
    g = generate_sbm([100, 100, 100], 0.1, 0.01, 16, 2.0, seed=0)
    res = fit(g, TrainConfig(lr=0.05, epochs=200, seed=0), "gcn", [16, 16, 3])
    return g, res
