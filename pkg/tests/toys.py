"""Shared toy problem builders for the test suite."""

import numpy as np

from vgcn.graph import (
    LabeledGraph,
    PerturbationSpec,
    SplitMasks,
    SymmetricBinaryAdjacency,
    perturb_graph,
)


def random_labeled_graph(n, d, c, seed, density=0.4, n_train=None):
    """Fully labeled random graph with train/val/test masks cycling over nodes."""
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    adj = SymmetricBinaryAdjacency.from_pairs(n, pairs)
    x = rng.normal(size=(n, d))
    y = np.zeros((n, c), dtype=np.int64)
    y[np.arange(n), rng.integers(0, c, size=n)] = 1
    n_train = max(2, n // 3) if n_train is None else n_train
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[:n_train] = True
    val[n_train:n_train + max(1, n // 4)] = True
    test[n_train + max(1, n // 4):] = True
    return LabeledGraph(n, x, adj, y, SplitMasks(train, val, test))


def make_sbm(n_per_block=30, p_in=0.3, p_out=0.02, d=8, feature_shift=0.6,
             labels_per_class=5, val_per_class=5, seed=0):
    """Two-block stochastic block model with weakly informative Gaussian features.

    The graph carries most of the class signal; features alone separate the
    classes only partially.
    """
    rng = np.random.default_rng(seed)
    n = 2 * n_per_block
    blocks = np.repeat([0, 1], n_per_block)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if blocks[i] == blocks[j] else p_out
            if rng.random() < p:
                pairs.append((i, j))
    adj = SymmetricBinaryAdjacency.from_pairs(n, pairs)
    means = np.vstack([np.full(d, -feature_shift), np.full(d, feature_shift)])
    x = means[blocks] + rng.normal(size=(n, d))
    y = np.zeros((n, 2), dtype=np.int64)
    y[np.arange(n), blocks] = 1
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for cls in (0, 1):
        members = rng.permutation(np.flatnonzero(blocks == cls))
        train[members[:labels_per_class]] = True
        val[members[labels_per_class:labels_per_class + val_per_class]] = True
        test[members[labels_per_class + val_per_class:]] = True
    return LabeledGraph(n, x, adj, y, SplitMasks(train, val, test))


def corrupt_adjacency(adj, flip_fraction, seed):
    """Add and remove flip_fraction * n_edges edges, uniformly at random."""
    k = int(round(flip_fraction * adj.n_edges))
    return perturb_graph(adj, PerturbationSpec(n_add=k, n_remove=k, seed=seed))
