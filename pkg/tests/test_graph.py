"""Tests for the graph data model, file formats and graph constructions."""

import math

import numpy as np
import pytest

from vgcn import graph as g
from vgcn.errors import (
    AsymmetricInputError,
    IndexOutOfRangeError,
    InfeasibleSpecError,
    InvalidKError,
    MalformedFileError,
    NegativeEntryError,
    ZeroVectorError,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestAdjacency:
    def test_from_pairs_normalizes_orientation(self):
        adj = g.SymmetricBinaryAdjacency.from_pairs(3, [(1, 0), (0, 1), (2, 0)])
        assert adj.edges == frozenset({(0, 1), (0, 2)})

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            g.SymmetricBinaryAdjacency.from_pairs(3, [(1, 1)])

    def test_rejects_out_of_range(self):
        with pytest.raises(IndexOutOfRangeError):
            g.SymmetricBinaryAdjacency(3, frozenset({(0, 3)}))

    def test_dense_and_csr_agree(self):
        rng = np.random.default_rng(0)
        pairs = [(i, j) for i in range(6) for j in range(i + 1, 6) if rng.random() < 0.4]
        adj = g.SymmetricBinaryAdjacency.from_pairs(6, pairs)
        np.testing.assert_array_equal(adj.to_dense(), adj.to_csr().toarray())

    def test_edge_mask_matches_pair_ordering(self):
        adj = g.SymmetricBinaryAdjacency.from_pairs(4, [(0, 2), (1, 3)])
        iu, ju = g.pair_indices(4)
        mask = adj.edge_mask()
        for idx in range(iu.shape[0]):
            assert mask[idx] == adj.has_edge(int(iu[idx]), int(ju[idx]))


class TestDatasetIO:
    def make_files(self, tmp_path, edges="0\t1\n1\t2\n"):
        f = write(tmp_path, "features.txt", "3 2\n1.0 0.0\n0.0 1.0\n0.5 0.5\n")
        e = write(tmp_path, "edges.txt", edges)
        l = write(tmp_path, "labels.txt", "0\t0\n1\t1\n2\t0\n")
        s = write(tmp_path, "splits.txt", "0\ttrain\n1\tval\n2\ttest\n")
        return f, e, l, s

    def test_load_small_dataset(self, tmp_path):
        data = g.load_dataset(*self.make_files(tmp_path))
        assert data.n_nodes == 3
        assert data.n_features == 2
        assert data.n_classes == 2
        assert data.adjacency.edges == frozenset({(0, 1), (1, 2)})
        assert data.masks.train.sum() == 1

    def test_empty_edges_file(self, tmp_path):
        data = g.load_dataset(*self.make_files(tmp_path, edges=""))
        assert data.adjacency.n_edges == 0

    def test_reversed_duplicate_edges_collapse(self, tmp_path):
        data = g.load_dataset(*self.make_files(tmp_path, edges="0\t1\n1\t0\n0\t1\n"))
        assert data.adjacency.edges == frozenset({(0, 1)})

    def test_self_loop_rejected(self, tmp_path):
        files = self.make_files(tmp_path, edges="1\t1\n")
        with pytest.raises(MalformedFileError) as err:
            g.load_dataset(*files)
        assert err.value.line_no == 1

    def test_edge_index_out_of_range(self, tmp_path):
        files = self.make_files(tmp_path, edges="0\t9\n")
        with pytest.raises(IndexOutOfRangeError):
            g.load_dataset(*files)

    def test_malformed_feature_row_reports_line(self, tmp_path):
        f = write(tmp_path, "features.txt", "2 2\n1.0 0.0\n0.0\n")
        e = write(tmp_path, "edges.txt", "")
        l = write(tmp_path, "labels.txt", "0\t0\n1\t1\n")
        s = write(tmp_path, "splits.txt", "0\ttrain\n1\ttest\n")
        with pytest.raises(MalformedFileError) as err:
            g.load_dataset(f, e, l, s)
        assert err.value.line_no == 3

    def test_split_of_unlabeled_node_rejected(self, tmp_path):
        f = write(tmp_path, "features.txt", "2 1\n1.0\n2.0\n")
        e = write(tmp_path, "edges.txt", "0\t1\n")
        l = write(tmp_path, "labels.txt", "0\t0\n")
        s = write(tmp_path, "splits.txt", "1\ttrain\n")
        with pytest.raises(MalformedFileError):
            g.load_dataset(f, e, l, s)

    def test_missing_file(self, tmp_path):
        files = list(self.make_files(tmp_path))
        files[2] = tmp_path / "nope.txt"
        with pytest.raises(MalformedFileError):
            g.load_dataset(*files)

    def test_save_load_roundtrip(self, tmp_path):
        data = g.load_dataset(*self.make_files(tmp_path))
        paths = [tmp_path / n for n in ("f2.txt", "e2.txt", "l2.txt", "s2.txt")]
        g.save_dataset(data, *paths)
        again = g.load_dataset(*paths)
        assert again.adjacency.edges == data.adjacency.edges
        np.testing.assert_array_equal(again.labels, data.labels)
        for name in g.SPLIT_NAMES:
            np.testing.assert_array_equal(
                again.masks.as_dict()[name], data.masks.as_dict()[name])


def knn_oracle(x, k, metric):
    """Brute-force KNN with the smaller-index tie rule, written independently."""
    n = x.shape[0]
    pairs = set()
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            if metric == "minkowski":
                d = math.dist(x[i], x[j])
            else:
                d = 1.0 - float(np.dot(x[i], x[j])) / (np.linalg.norm(x[i]) * np.linalg.norm(x[j]))
            dists.append((d, j))
        dists.sort()
        for _, j in dists[:k]:
            pairs.add((min(i, j), max(i, j)))
    return pairs


class TestKnnGraph:
    def test_collinear_points(self):
        x = np.array([[0.0], [1.0], [10.0]])
        adj = g.build_knn_graph(x, k=1, metric="minkowski")
        assert adj.edges == frozenset({(0, 1), (1, 2)})

    def test_complete_graph_when_k_is_n_minus_1(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 3))
        adj = g.build_knn_graph(x, k=5, metric="minkowski")
        assert adj.n_edges == 15

    def test_duplicate_rows_tie_break_deterministic(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        a1 = g.build_knn_graph(x, k=1, metric="minkowski")
        a2 = g.build_knn_graph(x, k=1, metric="minkowski")
        assert a1.edges == a2.edges
        # 0,1,2 are mutually at distance zero and node 3 ties among all of
        # them; every tie resolves to the smallest index
        assert a1.edges == frozenset({(0, 1), (0, 2), (0, 3)})

    @pytest.mark.parametrize("metric", ["minkowski", "cosine"])
    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_bruteforce_oracle(self, metric, k):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(12, 4)) + 1.0
        adj = g.build_knn_graph(x, k=k, metric=metric)
        assert adj.edges == frozenset(knn_oracle(x, k, metric))

    def test_min_degree_at_least_one(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(9, 2))
        adj = g.build_knn_graph(x, k=1, metric="minkowski")
        deg = adj.to_dense().sum(axis=1)
        assert (deg >= 1).all()

    def test_invalid_k(self):
        x = np.zeros((4, 2))
        with pytest.raises(InvalidKError):
            g.build_knn_graph(x, k=0)
        with pytest.raises(InvalidKError):
            g.build_knn_graph(x, k=4)

    def test_cosine_zero_vector(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ZeroVectorError):
            g.build_knn_graph(x, k=1, metric="cosine")


class TestNormalizeAdjacency:
    def test_zero_matrix_gives_identity(self):
        for n in (1, 2, 5):
            np.testing.assert_allclose(g.normalize_adjacency(np.zeros((n, n))), np.eye(n))

    def test_single_edge(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(g.normalize_adjacency(a), np.full((2, 2), 0.5))

    def test_relaxed_half_edge(self):
        a = np.array([[0.0, 0.5], [0.5, 0.0]])
        out = g.normalize_adjacency(a)
        np.testing.assert_allclose(out[0, 0], 1 / 1.5)
        np.testing.assert_allclose(out[0, 1], 0.5 / 1.5)

    def test_output_symmetric(self):
        rng = np.random.default_rng(3)
        a = rng.random((8, 8))
        a = (a + a.T) / 2
        np.fill_diagonal(a, 0.0)
        out = g.normalize_adjacency(a)
        assert np.abs(out - out.T).max() < 1e-12

    def test_asymmetric_rejected(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(AsymmetricInputError):
            g.normalize_adjacency(a)

    def test_negative_rejected(self):
        a = np.array([[0.0, -0.1], [-0.1, 0.0]])
        with pytest.raises(NegativeEntryError):
            g.normalize_adjacency(a)

    def test_sparse_matches_dense(self):
        rng = np.random.default_rng(11)
        pairs = [(i, j) for i in range(10) for j in range(i + 1, 10) if rng.random() < 0.3]
        adj = g.SymmetricBinaryAdjacency.from_pairs(10, pairs)
        dense = g.normalize_adjacency(adj.to_dense())
        sparse = g.normalize_adjacency_csr(adj).toarray()
        np.testing.assert_allclose(sparse, dense, atol=1e-14)


class TestRowNormalize:
    def test_basic(self):
        np.testing.assert_allclose(
            g.row_normalize_features(np.array([[2.0, 2.0]])), [[0.5, 0.5]])

    def test_zero_row_unchanged(self):
        x = np.array([[0.0, 0.0], [1.0, 3.0]])
        out = g.row_normalize_features(x)
        np.testing.assert_allclose(out[0], [0.0, 0.0])
        np.testing.assert_allclose(out[1], [0.25, 0.75])

    def test_already_normalized(self):
        x = np.array([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(g.row_normalize_features(x), x)

    def test_input_not_mutated(self):
        x = np.array([[2.0, 2.0]])
        g.row_normalize_features(x)
        np.testing.assert_array_equal(x, [[2.0, 2.0]])


def random_adjacency(n, density, seed):
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    return g.SymmetricBinaryAdjacency.from_pairs(n, pairs)


class TestPerturbGraph:
    def test_identity_perturbation(self):
        adj = random_adjacency(8, 0.4, 0)
        out = g.perturb_graph(adj, g.PerturbationSpec(0, 0, seed=1))
        assert out.edges == adj.edges

    def test_remove_all(self):
        adj = g.SymmetricBinaryAdjacency.from_pairs(3, [(0, 1), (1, 2), (0, 2)])
        out = g.perturb_graph(adj, g.PerturbationSpec(n_remove=3, seed=2))
        assert out.n_edges == 0

    def test_counts_and_determinism(self):
        adj = random_adjacency(30, 0.25, 3)
        spec = g.PerturbationSpec(n_add=50, n_remove=10, seed=7)
        out1 = g.perturb_graph(adj, spec)
        out2 = g.perturb_graph(adj, spec)
        assert out1.edges == out2.edges
        assert out1.n_edges == adj.n_edges + 50 - 10

    def test_reverse_recovers_original(self):
        adj = random_adjacency(20, 0.3, 4)
        out = g.perturb_graph(adj, g.PerturbationSpec(n_add=12, n_remove=9, seed=5))
        added = out.edges - adj.edges
        removed = adj.edges - out.edges
        assert len(added) == 12 and len(removed) == 9
        assert (out.edges - added) | removed == adj.edges

    def test_infeasible_remove(self):
        adj = random_adjacency(6, 0.2, 6)
        with pytest.raises(InfeasibleSpecError):
            g.perturb_graph(adj, g.PerturbationSpec(n_remove=adj.n_edges + 1, seed=0))

    def test_infeasible_add(self):
        adj = random_adjacency(5, 0.5, 8)
        free = g.n_pairs(5) - adj.n_edges
        with pytest.raises(InfeasibleSpecError):
            g.perturb_graph(adj, g.PerturbationSpec(n_add=free + 1, seed=0))

    def test_degree_preserving_swaps(self):
        adj = random_adjacency(25, 0.3, 9)
        out = g.perturb_graph(
            adj, g.PerturbationSpec(n_add=15, seed=11, mode="degree-preserving"))
        assert out.n_edges == adj.n_edges
        np.testing.assert_array_equal(
            out.to_dense().sum(axis=1), adj.to_dense().sum(axis=1))
        assert out.edges != adj.edges
