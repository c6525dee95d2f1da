import numpy as np
import pytest
from scipy import sparse

from plaplearn import LabelSet, WeightedGraph


def random_connected_graph(rng, n, extra_edges=None, w_low=0.2, w_high=1.0):
    """Random connected graph: a random attachment tree plus extra edges.

    Weights are uniform in [w_low, w_high] (<= 1 so the game solvers accept
    the graph unscaled). sigma is set to 0.5 so scaled residuals are defined.
    """
    if extra_edges is None:
        extra_edges = 2 * n
    rows = list(range(1, n))
    cols = [int(rng.integers(0, i)) for i in range(1, n)]
    for _ in range(extra_edges):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            rows.append(int(max(i, j)))
            cols.append(int(min(i, j)))
    rows, cols = np.array(rows), np.array(cols)
    code = np.unique(rows * n + cols)
    rows, cols = code // n, code % n
    w = rng.uniform(w_low, w_high, size=rows.size)
    W = sparse.csr_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    return WeightedGraph(W, sigma=0.5, dim=2)


def random_labels(rng, n, m, value_range=(0.0, 1.0)):
    idx = rng.choice(n, size=m, replace=False)
    vals = rng.uniform(*value_range, size=m)
    return LabelSet(idx, vals)


def path_graph(weights):
    """Path graph 0-1-...-k with the given edge weights."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.size + 1
    rows = np.arange(n - 1)
    W = sparse.csr_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([rows, rows + 1]), np.concatenate([rows + 1, rows]))),
        shape=(n, n),
    )
    return WeightedGraph(W, sigma=0.5, dim=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
