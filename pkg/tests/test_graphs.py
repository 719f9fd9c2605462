import numpy as np
import pytest

from graphshard.errors import ParseError, ValidationError
from graphshard.graphs import (
    LabeledGraph,
    Partition,
    build_degree_record,
    build_label_indicator,
    generate_sbm,
    guided_matrices,
    laplacian,
    load_graph,
    save_graph,
)

from conftest import graph_from_edges


def write_graph_files(tmp_path, edge_text, feature_text, label_text):
    e = tmp_path / "edges.txt"
    f = tmp_path / "features.csv"
    l = tmp_path / "labels.txt"
    e.write_text(edge_text)
    f.write_text(feature_text)
    l.write_text(label_text)
    return str(e), str(f), str(l)


class TestLoadGraph:
    def test_basic_load_and_degrees(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 1\n1 2\n", "1.0\n2.0\n3.0\n", "0\n1\n0\n")
        g = load_graph(*paths)
        assert g.n == 3
        assert g.unweighted_degrees.tolist() == [1, 2, 1]
        assert g.h == 2

    def test_duplicate_and_reversed_edges_collapse(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 1\n1 0\n0 1\n", "1.0\n2.0\n", "0\n1\n")
        g = load_graph(*paths)
        assert g.adjacency[0, 1] == 1.0
        assert g.adjacency[1, 0] == 1.0
        assert g.adjacency.nnz == 2

    def test_out_of_range_index(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 5\n", "1.0\n2.0\n3.0\n", "0\n1\n0\n")
        with pytest.raises(ValidationError, match="out of range"):
            load_graph(*paths)

    def test_malformed_line_reports_lineno(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 1\nnope\n", "1.0\n2.0\n", "0\n1\n")
        with pytest.raises(ParseError, match=":2:"):
            load_graph(*paths)

    def test_missing_class_rejected(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 1\n", "1.0\n2.0\n", "0\n2\n")
        with pytest.raises(ValidationError, match="classes \\[1\\]"):
            load_graph(*paths)

    def test_self_loops_stripped(self, tmp_path):
        paths = write_graph_files(tmp_path, "0 0\n0 1\n", "1.0\n2.0\n", "0\n1\n")
        g = load_graph(*paths)
        assert g.adjacency[0, 0] == 0.0
        assert g.adjacency.nnz == 2

    def test_comments_and_weights(self, tmp_path):
        paths = write_graph_files(
            tmp_path, "# header\n0 1 2.5\n", "1.0\n2.0\n", "0\n1\n"
        )
        g = load_graph(*paths)
        assert g.adjacency[0, 1] == 2.5

    def test_round_trip(self, tmp_path, rng):
        g = graph_from_edges(
            4,
            [(0, 1), (1, 2), (2, 3)],
            [0, 1, 0, 1],
            features=rng.standard_normal((4, 3)),
            weights=np.array([1.0, 0.25, 3.75]),
        )
        out = tmp_path / "out"
        out.mkdir()
        paths = (str(out / "e.txt"), str(out / "f.csv"), str(out / "l.txt"))
        save_graph(g, *paths)
        g2 = load_graph(*paths)
        assert (g.adjacency != g2.adjacency).nnz == 0
        assert np.array_equal(g.features, g2.features)
        assert np.array_equal(g.labels, g2.labels)
        # idempotent: saving the loaded graph reproduces identical files
        paths3 = (str(out / "e2.txt"), str(out / "f2.csv"), str(out / "l2.txt"))
        save_graph(g2, *paths3)
        for a, b in zip(paths, paths3):
            assert open(a).read() == open(b).read()


class TestInvariants:
    def test_rejects_asymmetric(self):
        import scipy.sparse as sp

        adj = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValidationError, match="symmetric"):
            LabeledGraph(2, adj, np.zeros((2, 1)), np.array([0, 1]), 2)

    def test_rejects_feature_mismatch(self):
        g = graph_from_edges(2, [(0, 1)], [0, 1])
        with pytest.raises(ValidationError):
            LabeledGraph(2, g.adjacency, np.zeros((3, 1)), g.labels, 2)


class TestLabelIndicator:
    def test_definition(self):
        g = graph_from_edges(3, [], [0, 0, 1])
        f = build_label_indicator(g)
        assert f.tolist() == [[1, 0], [1, 0], [0, 1]]

    def test_column_sums_are_class_counts(self):
        g = graph_from_edges(2, [], [1, 0])
        f = build_label_indicator(g)
        assert f.sum(axis=0).tolist() == [1, 1]

    def test_total_is_n(self, rng):
        labels = rng.integers(0, 3, size=20)
        labels[:3] = [0, 1, 2]
        g = graph_from_edges(20, [], labels)
        assert build_label_indicator(g).sum() == 20


class TestGuidedMatrices:
    def test_balanced_two_class(self):
        g = graph_from_edges(8, [], [0, 0, 0, 0, 1, 1, 1, 1])
        m, mt = guided_matrices(g, 2)
        assert np.array_equal(m, np.full((2, 2), 2.0))
        assert np.allclose(mt, np.full((2, 2), 1.0))

    def test_single_class(self):
        g = graph_from_edges(4, [], [0, 0, 0, 0])
        m, _ = guided_matrices(g, 2)
        assert np.array_equal(m, np.full((1, 2), 2.0))

    def test_non_integer_target(self):
        g = graph_from_edges(6, [], [0, 0, 0, 1, 1, 1])
        m, _ = guided_matrices(g, 4)
        assert np.allclose(m, 0.75)

    def test_scaling_identity(self, rng):
        g = graph_from_edges(12, [], rng.permutation([0] * 4 + [1] * 4 + [2] * 4))
        m, mt = guided_matrices(g, 3)
        assert np.allclose(mt, m * np.sqrt(3 / 12))

    def test_rejects_small_v(self):
        g = graph_from_edges(2, [], [0, 1])
        with pytest.raises(ValidationError):
            guided_matrices(g, 1)


class TestLaplacian:
    def test_path_graph(self):
        g = graph_from_edges(2, [(0, 1)], [0, 1])
        d, l = laplacian(g)
        assert np.array_equal(d, np.eye(2))
        assert np.array_equal(l, np.array([[-1.0, 1.0], [1.0, -1.0]]))

    def test_empty_graph(self):
        g = graph_from_edges(2, [], [0, 1])
        _, l = laplacian(g)
        assert np.array_equal(l, np.zeros((2, 2)))

    def test_triangle_trace(self):
        g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], [0, 1, 0])
        _, l = laplacian(g)
        assert np.trace(l) == -6.0

    def test_negative_semidefinite(self, rng):
        from conftest import random_labeled_graph

        g = random_labeled_graph(rng, 12, 2)
        _, l = laplacian(g)
        for _ in range(100):
            x = rng.standard_normal(12)
            assert x @ l @ x <= 1e-10


class TestPartitionType:
    def test_indicator_shapes(self):
        p = Partition(assignment=np.array([0, 1, 0, 1]), v=2)
        y = p.indicator()
        assert y.sum(axis=1).tolist() == [1, 1, 1, 1]
        h = p.normalized_indicator()
        assert np.allclose(h.T @ h, np.eye(2), atol=1e-12)

    def test_empty_shard_h_undefined(self):
        p = Partition(assignment=np.array([0, 0]), v=2)
        with pytest.raises(ValidationError, match="empty"):
            p.normalized_indicator()

    def test_orthonormal_for_random_partitions(self, rng):
        for _ in range(25):
            n = int(rng.integers(4, 30))
            v = int(rng.integers(2, 5))
            assign = rng.integers(0, v, size=n)
            assign[:v] = np.arange(v)
            p = Partition(assignment=assign, v=v)
            h = p.normalized_indicator()
            assert np.max(np.abs(h.T @ h - np.eye(v))) < 1e-12


class TestFairBalancedIdentities:
    """Directly constructed fair+balanced partitions satisfy F^T Y = M and
    F^T H = M~ exactly; perturbing one assignment breaks an equality."""

    @staticmethod
    def make_fair_balanced(rng, n_per, v, h):
        # class s has v * n_per[s] nodes dealt round-robin across shards
        labels, assign = [], []
        for s in range(h):
            for k in range(v * n_per[s]):
                labels.append(s)
                assign.append(k % v)
        labels = np.array(labels)
        assign = np.array(assign)
        perm = rng.permutation(len(labels))
        return labels[perm], Partition(assignment=assign[perm], v=v)

    def test_identities_hold_and_break(self, rng):
        for _ in range(50):
            v = int(rng.integers(2, 5))
            h = int(rng.integers(2, 4))
            n_per = [int(rng.integers(1, 4)) for _ in range(h)]
            labels, p = self.make_fair_balanced(rng, n_per, v, h)
            g = graph_from_edges(len(labels), [], labels, h=h)
            f = build_label_indicator(g)
            m, mt = guided_matrices(g, v)
            assert np.array_equal(f.T @ p.indicator(), m)
            assert np.max(np.abs(f.T @ p.normalized_indicator() - mt)) < 1e-12

            # move one node to a different shard: some equality must break
            assign = p.assignment.copy()
            i = int(rng.integers(len(labels)))
            assign[i] = (assign[i] + 1) % v
            q = Partition(assignment=assign, v=v)
            broke_y = not np.array_equal(f.T @ q.indicator(), m)
            sizes = q.shard_sizes()
            broke_h = True
            if np.all(sizes > 0):
                broke_h = np.max(np.abs(f.T @ q.normalized_indicator() - mt)) > 1e-12
            assert broke_y or broke_h


class TestDegreeRecord:
    def test_counts_unweighted(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)], [0, 1, 0], weights=np.array([2.0, 0.5]))
        rec = build_degree_record(g)
        assert rec.original_degree.tolist() == [1, 2, 1]


class TestGenerateSbm:
    def test_degenerate_probabilities_give_cliques(self):
        g = generate_sbm(8, 2, 2, 1.0, 0.0, 3, 0.5, seed=1)
        a = g.dense_adjacency()
        assert np.all(a[:4, :4] + np.eye(4) == 1.0)
        assert np.all(a[:4, 4:] == 0.0)

    def test_deterministic(self):
        g1 = generate_sbm(40, 4, 2, 0.3, 0.05, 5, 0.7, seed=9)
        g2 = generate_sbm(40, 4, 2, 0.3, 0.05, 5, 0.7, seed=9)
        assert (g1.adjacency != g2.adjacency).nnz == 0
        assert np.array_equal(g1.features, g2.features)

    def test_class_counts_forced(self):
        g = generate_sbm(200, 4, 4, 0.1, 0.01, 4, 0.9, seed=3)
        assert g.class_counts().tolist() == [50, 50, 50, 50]

    def test_rejects_bad_probabilities(self):
        with pytest.raises(ValidationError):
            generate_sbm(8, 2, 2, 0.1, 0.5, 3, 0.5, seed=0)
