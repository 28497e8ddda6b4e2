"""Graph data model, dataset I/O, KNN construction, normalization, perturbation.

Undirected graphs are stored as upper-triangle edge sets: every pair is kept
once as (i, j) with i < j and mirrored on demand. Self-loops are never part of
an edge set; normalization adds them deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import (
    AsymmetricInputError,
    InconsistentDimensionsError,
    IndexOutOfRangeError,
    InfeasibleSpecError,
    InvalidKError,
    MalformedFileError,
    NegativeEntryError,
    ZeroVectorError,
)

SPLIT_NAMES = ("train", "val", "test")


@lru_cache(maxsize=32)
def pair_indices(n_nodes):
    """Row/column index arrays of the strict upper triangle, in row-major order.

    This fixed ordering is the contract between adjacency matrices and every
    per-pair parameter vector in the package.
    """
    iu, ju = np.triu_indices(n_nodes, k=1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def n_pairs(n_nodes):
    return n_nodes * (n_nodes - 1) // 2


@dataclass(frozen=True)
class SymmetricBinaryAdjacency:
    """Undirected simple graph held as a frozen set of (i, j) pairs with i < j."""

    n_nodes: int
    edges: frozenset

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("graph needs at least one node")
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop ({i}, {j}) is not allowed")
            if not (0 <= i < j < self.n_nodes):
                raise IndexOutOfRangeError(f"edge ({i}, {j}) outside [0, {self.n_nodes})")

    @classmethod
    def from_pairs(cls, n_nodes, pairs):
        """Build from any iterable of (u, v); orientation and duplicates are normalized."""
        edges = set()
        for u, v in pairs:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop ({u}, {v}) is not allowed")
            edges.add((min(u, v), max(u, v)))
        return cls(n_nodes, frozenset(edges))

    @property
    def n_edges(self):
        return len(self.edges)

    def has_edge(self, u, v):
        return (min(u, v), max(u, v)) in self.edges

    def sorted_edges(self):
        return sorted(self.edges)

    def edge_mask(self):
        """Boolean vector over the canonical pair ordering: True where an edge exists."""
        iu, ju = pair_indices(self.n_nodes)
        mask = np.zeros(iu.shape[0], dtype=bool)
        if self.edges:
            e = np.array(self.sorted_edges())
            # Row-major upper-triangle rank of pair (i, j).
            lin = e[:, 0] * (2 * self.n_nodes - e[:, 0] - 1) // 2 + (e[:, 1] - e[:, 0] - 1)
            mask[lin] = True
        return mask

    def to_dense(self):
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def to_csr(self):
        if not self.edges:
            return sp.csr_matrix((self.n_nodes, self.n_nodes))
        e = np.array(self.sorted_edges())
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        vals = np.ones(rows.shape[0])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))


@dataclass(frozen=True)
class SplitMasks:
    """Boolean train/val/test masks over nodes; pairwise disjoint."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        n = self.train.shape[0]
        if self.val.shape[0] != n or self.test.shape[0] != n:
            raise InconsistentDimensionsError("split masks have differing lengths")
        overlap = (self.train & self.val) | (self.train & self.test) | (self.val & self.test)
        if overlap.any():
            raise ValueError("train/val/test masks must be pairwise disjoint")

    def as_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass(frozen=True)
class LabeledGraph:
    """Node features, observed adjacency, one-hot labels and split masks."""

    n_nodes: int
    features: np.ndarray
    adjacency: SymmetricBinaryAdjacency
    labels: np.ndarray
    masks: SplitMasks

    def __post_init__(self):
        n = self.n_nodes
        if self.features.shape[0] != n:
            raise InconsistentDimensionsError(
                f"feature rows {self.features.shape[0]} != n_nodes {n}")
        if self.labels.shape[0] != n:
            raise InconsistentDimensionsError(
                f"label rows {self.labels.shape[0]} != feature rows {n}")
        if self.adjacency.n_nodes != n:
            raise InconsistentDimensionsError("adjacency size != n_nodes")
        row_sums = self.labels.sum(axis=1)
        if not np.isin(row_sums, (0, 1)).all():
            raise ValueError("each label row must be all-zero or one-hot")
        labeled = row_sums == 1
        for name, mask in self.masks.as_dict().items():
            if mask.shape[0] != n:
                raise InconsistentDimensionsError(f"{name} mask length != n_nodes")
            if (mask & ~labeled).any():
                raise ValueError(f"{name} mask selects unlabeled nodes")

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return self.labels.shape[1]

    @property
    def labeled_mask(self):
        return self.labels.sum(axis=1) == 1

    def with_adjacency(self, adjacency):
        """Same data observed through a different graph."""
        return LabeledGraph(self.n_nodes, self.features, adjacency, self.labels, self.masks)


@dataclass(frozen=True)
class PerturbationSpec:
    """Edge add/remove instruction for poisoning experiments."""

    n_add: int = 0
    n_remove: int = 0
    seed: int = 0
    mode: str = "uniform-random"

    def __post_init__(self):
        if self.n_add < 0 or self.n_remove < 0:
            raise ValueError("perturbation counts must be non-negative")
        if self.mode not in ("uniform-random", "degree-preserving"):
            raise ValueError(f"unknown perturbation mode {self.mode!r}")


# --- dataset files ----------------------------------------------------------------
#
# features: header "N D", then N lines of D space-separated floats
# edges:    one "u<TAB>v" line per edge, 0-based
# labels:   "node_id<TAB>class_id"; nodes absent from the file are unlabeled
# splits:   "node_id<TAB>{train|val|test}"


def _read_lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MalformedFileError(path, 0, "file not found") from None
    return text.splitlines()


def read_features(path):
    lines = _read_lines(path)
    if not lines:
        raise MalformedFileError(path, 1, "missing 'N D' header")
    header = lines[0].split()
    if len(header) != 2:
        raise MalformedFileError(path, 1, f"expected 'N D' header, got {lines[0]!r}")
    try:
        n, d = int(header[0]), int(header[1])
    except ValueError:
        raise MalformedFileError(path, 1, f"non-integer header {lines[0]!r}") from None
    if len(lines) - 1 < n:
        raise MalformedFileError(path, len(lines), f"expected {n} feature rows, found {len(lines) - 1}")
    x = np.empty((n, d))
    for r in range(n):
        parts = lines[1 + r].split()
        if len(parts) != d:
            raise MalformedFileError(path, 2 + r, f"expected {d} values, found {len(parts)}")
        try:
            x[r] = [float(p) for p in parts]
        except ValueError:
            raise MalformedFileError(path, 2 + r, "non-numeric feature value") from None
    return x


def read_edges(path, n_nodes):
    pairs = set()
    for ln, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise MalformedFileError(path, ln, f"expected 'u<TAB>v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedFileError(path, ln, f"non-integer node id in {line!r}") from None
        if u == v:
            raise MalformedFileError(path, ln, f"self-loop {u} rejected")
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise IndexOutOfRangeError(f"{path}:{ln}: node id outside [0, {n_nodes})")
        pairs.add((min(u, v), max(u, v)))
    return SymmetricBinaryAdjacency(n_nodes, frozenset(pairs))


def read_labels(path, n_nodes):
    assigned = {}
    for ln, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise MalformedFileError(path, ln, f"expected 'node_id<TAB>class_id', got {line!r}")
        try:
            node, cls = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedFileError(path, ln, f"non-integer field in {line!r}") from None
        if not 0 <= node < n_nodes:
            raise IndexOutOfRangeError(f"{path}:{ln}: node id {node} outside [0, {n_nodes})")
        if cls < 0:
            raise MalformedFileError(path, ln, f"negative class id {cls}")
        if node in assigned and assigned[node] != cls:
            raise MalformedFileError(path, ln, f"node {node} labeled twice with different classes")
        assigned[node] = cls
    n_classes = max(assigned.values()) + 1 if assigned else 0
    y = np.zeros((n_nodes, n_classes), dtype=np.int64)
    for node, cls in assigned.items():
        y[node, cls] = 1
    return y


def read_splits(path, labels):
    n_nodes = labels.shape[0]
    labeled = labels.sum(axis=1) == 1
    masks = {name: np.zeros(n_nodes, dtype=bool) for name in SPLIT_NAMES}
    seen = {}
    for ln, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise MalformedFileError(path, ln, f"expected 'node_id<TAB>split', got {line!r}")
        try:
            node = int(parts[0])
        except ValueError:
            raise MalformedFileError(path, ln, f"non-integer node id in {line!r}") from None
        split = parts[1]
        if split not in SPLIT_NAMES:
            raise MalformedFileError(path, ln, f"unknown split {split!r}")
        if not 0 <= node < n_nodes:
            raise IndexOutOfRangeError(f"{path}:{ln}: node id {node} outside [0, {n_nodes})")
        if not labeled[node]:
            raise MalformedFileError(path, ln, f"node {node} is unlabeled and cannot be in a split")
        if node in seen and seen[node] != split:
            raise MalformedFileError(path, ln, f"node {node} assigned to two splits")
        seen[node] = split
        masks[split][node] = True
    return SplitMasks(**masks)


def load_dataset(features_path, edges_path, labels_path, splits_path):
    """Read the four dataset files into a validated LabeledGraph."""
    x = read_features(features_path)
    n = x.shape[0]
    adjacency = read_edges(edges_path, n)
    y = read_labels(labels_path, n)
    masks = read_splits(splits_path, y)
    return LabeledGraph(n, x, adjacency, y, masks)


def write_edges(path, adjacency):
    lines = [f"{i}\t{j}" for i, j in adjacency.sorted_edges()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def save_dataset(graph, features_path, edges_path, labels_path, splits_path):
    """Inverse of load_dataset; round-trips edges, labels and masks exactly."""
    n, d = graph.features.shape
    rows = [f"{n} {d}"]
    rows += [" ".join(format(v, ".17g") for v in row) for row in graph.features]
    Path(features_path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    write_edges(edges_path, graph.adjacency)
    label_lines = [
        f"{node}\t{int(np.argmax(graph.labels[node]))}"
        for node in range(n) if graph.labels[node].sum() == 1
    ]
    Path(labels_path).write_text("\n".join(label_lines) + ("\n" if label_lines else ""), encoding="utf-8")
    split_lines = []
    for name, mask in graph.masks.as_dict().items():
        split_lines += [f"{node}\t{name}" for node in np.flatnonzero(mask)]
    Path(splits_path).write_text("\n".join(split_lines) + ("\n" if split_lines else ""), encoding="utf-8")


# --- graph construction -------------------------------------------------------------

def build_knn_graph(x, k, metric="minkowski"):
    """Union-symmetrized k-nearest-neighbor graph over feature rows.

    Edge {i, j} exists iff j is among i's k nearest neighbors or vice versa.
    Equal distances are broken toward the smaller node index so the result is
    deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k < n:
        raise InvalidKError(f"k must be in [1, {n - 1}], got {k}")
    if metric == "minkowski":
        dist = cdist(x, x, metric="euclidean")
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ZeroVectorError(f"cosine distance undefined for all-zero feature row {zero[0]}")
        unit = x / norms[:, None]
        dist = 1.0 - unit @ unit.T
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(dist, np.inf)
    pairs = set()
    node_ids = np.arange(n)
    for i in range(n):
        # lexsort: distance is the primary key, node index breaks ties.
        order = np.lexsort((node_ids, dist[i]))
        for j in order[:k]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return SymmetricBinaryAdjacency(n, frozenset(pairs))


def normalize_adjacency(a):
    """Symmetric degree normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.

    Accepts binary adjacencies and relaxed ones with entries in [0, 1]; the
    self-loop makes every augmented degree at least 1, so the inverse square
    root is always defined.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise AsymmetricInputError(f"expected a square matrix, got shape {a.shape}")
    if np.abs(a - a.T).max(initial=0.0) > 1e-12:
        raise AsymmetricInputError("adjacency matrix is not symmetric")
    if (a < 0).any():
        raise NegativeEntryError("adjacency entries must be non-negative")
    a_tilde = a + np.eye(a.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def normalize_adjacency_csr(adjacency):
    """Sparse variant of normalize_adjacency for binary adjacencies."""
    a_tilde = (adjacency.to_csr() + sp.eye(adjacency.n_nodes, format="csr")).tocsr()
    inv_sqrt_deg = 1.0 / np.sqrt(np.asarray(a_tilde.sum(axis=1)).ravel())
    d = sp.diags(inv_sqrt_deg)
    return (d @ a_tilde @ d).tocsr()


def row_normalize_features(x):
    """Divide each row by its L1 norm; all-zero rows pass through unchanged."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.abs(x).sum(axis=1, keepdims=True)
    return np.divide(x, norms, out=x.copy(), where=norms > 0)


def perturb_graph(adjacency, spec):
    """Apply an edge perturbation, reproducibly under spec.seed.

    uniform-random: remove n_remove existing edges, then add n_add pairs drawn
    from the non-edges of the original graph, both without replacement.
    degree-preserving: perform n_add double-edge swaps (n_remove is ignored).
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "degree-preserving":
        return _double_edge_swaps(adjacency, spec.n_add, rng)
    n = adjacency.n_nodes
    edges = adjacency.sorted_edges()
    if spec.n_remove > len(edges):
        raise InfeasibleSpecError(
            f"cannot remove {spec.n_remove} of {len(edges)} edges")
    free = n_pairs(n) - len(edges)
    if spec.n_add > free:
        raise InfeasibleSpecError(
            f"cannot add {spec.n_add} edges, only {free} non-edges available")
    keep = set(edges)
    if spec.n_remove:
        removed_idx = rng.choice(len(edges), size=spec.n_remove, replace=False)
        keep -= {edges[i] for i in removed_idx}
    if spec.n_add:
        iu, ju = pair_indices(n)
        candidates = np.flatnonzero(~adjacency.edge_mask())
        chosen = rng.choice(candidates, size=spec.n_add, replace=False)
        keep |= {(int(iu[c]), int(ju[c])) for c in chosen}
    return SymmetricBinaryAdjacency(n, frozenset(keep))


def _double_edge_swaps(adjacency, n_swaps, rng, max_tries_per_swap=200):
    if n_swaps == 0:
        return adjacency
    if adjacency.n_edges < 2:
        raise InfeasibleSpecError("degree-preserving swaps need at least two edges")
    edges = adjacency.sorted_edges()
    edge_set = set(edges)
    done = 0
    tries = 0
    while done < n_swaps:
        tries += 1
        if tries > max_tries_per_swap * n_swaps:
            raise InfeasibleSpecError(
                f"could not find {n_swaps} double-edge swaps (graph too constrained)")
        e1, e2 = rng.choice(len(edges), size=2, replace=False)
        a, b = edges[e1]
        c, d = edges[e2]
        if rng.random() < 0.5:
            c, d = d, c
        # Swap (a,b),(c,d) -> (a,d),(c,b); all four endpoints must stay distinct
        # and the new pairs must not already exist.
        if len({a, b, c, d}) != 4:
            continue
        new1 = (min(a, d), max(a, d))
        new2 = (min(c, b), max(c, b))
        if new1 in edge_set or new2 in edge_set:
            continue
        edge_set.discard((a, b) if a < b else (b, a))
        edge_set.discard((c, d) if c < d else (d, c))
        edge_set.add(new1)
        edge_set.add(new2)
        edges = sorted(edge_set)
        done += 1
    return SymmetricBinaryAdjacency(adjacency.n_nodes, frozenset(edge_set))
