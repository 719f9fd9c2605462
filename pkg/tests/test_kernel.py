import numpy as np
import pytest
import scipy.sparse as sp

from graphshard.errors import ValidationError
from graphshard.kernel import (
    _histograms,
    _intersection,
    eigen_embedding,
    graph_similarity,
    importance_weights,
    load_weights,
    normalize_weights,
    pyramid_match,
    save_weights,
    update_single_weight,
)

from conftest import random_labeled_graph


def random_adjacency(rng, n, p=0.3):
    a = (rng.random((n, n)) < p).astype(float)
    a = np.triu(a, 1)
    return sp.csr_matrix(a + a.T)


class TestEigenEmbedding:
    def test_single_node_zero(self):
        emb = eigen_embedding(sp.csr_matrix((1, 1)), 6)
        assert emb.shape == (1, 6)
        assert np.all(emb == 0.0)

    def test_isolated_nodes_zero(self):
        emb = eigen_embedding(sp.csr_matrix((2, 2)), 4)
        assert np.all(emb == 0.0)

    def test_single_edge(self):
        adj = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        emb = eigen_embedding(adj, 3)
        assert emb[:, 0] == pytest.approx([np.sqrt(0.5), np.sqrt(0.5)])
        assert emb[:, 1] == pytest.approx([np.sqrt(0.5), np.sqrt(0.5)])
        assert np.all(emb[:, 2] == 0.0)  # beyond n, zero padded

    def test_entries_in_unit_interval(self, rng):
        for _ in range(10):
            emb = eigen_embedding(random_adjacency(rng, 12), 6)
            assert emb.min() >= 0.0
            assert emb.max() <= 1.0

    def test_dense_and_iterative_paths_agree(self, rng):
        # same graph through both solvers (force the iterative branch)
        import graphshard.kernel as K

        adj = random_adjacency(rng, 60, p=0.1)
        dense = eigen_embedding(adj, 5)
        old = K.DENSE_EIG_LIMIT
        K.DENSE_EIG_LIMIT = 10
        try:
            iterative = eigen_embedding(adj, 5)
        finally:
            K.DENSE_EIG_LIMIT = old
        assert np.allclose(dense, iterative, atol=1e-6)


class TestHistograms:
    def test_counts_sum_to_n(self, rng):
        emb = rng.random((9, 4))
        for level, hist in enumerate(_histograms(emb, 4)):
            assert hist.shape == (4, 2**level)
            assert np.all(hist.sum(axis=1) == 9)

    def test_refinement(self, rng):
        emb = rng.random((20, 3))
        hists = _histograms(emb, 4)
        for level in range(4):
            coarse, fine = hists[level], hists[level + 1]
            assert np.array_equal(coarse, fine[:, 0::2] + fine[:, 1::2])

    def test_value_one_lands_in_last_bin(self):
        emb = np.ones((2, 1))
        hist = _histograms(emb, 2)[2]
        assert hist[0, -1] == 2


class TestPyramidMatch:
    def test_self_match_is_n_times_d(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 30))
            emb = eigen_embedding(random_adjacency(rng, n, p=0.4), 6)
            assert pyramid_match(emb, emb, 4) == pytest.approx(n * 6.0)

    def test_symmetry_exact(self, rng):
        for _ in range(20):
            a = eigen_embedding(random_adjacency(rng, int(rng.integers(2, 15))), 6)
            b = eigen_embedding(random_adjacency(rng, int(rng.integers(2, 15))), 6)
            assert pyramid_match(a, b, 4) == pyramid_match(b, a, 4)

    def test_disjoint_fine_bins_leave_coarse_credit(self):
        # all of A in bin [0, 0.5), all of B in [0.5, 1) at every level >= 1
        a = np.full((3, 2), 0.2)
        b = np.full((5, 2), 0.7)
        L = 3
        assert pyramid_match(a, b, L) == pytest.approx((1 / 2**L) * 3 * 2)

    def test_monotone_refinement_and_nonnegative_terms(self, rng):
        for _ in range(10):
            a = eigen_embedding(random_adjacency(rng, 12), 6)
            b = eigen_embedding(random_adjacency(rng, 9), 6)
            ha, hb = _histograms(a, 4), _histograms(b, 4)
            inter = [_intersection(x, y) for x, y in zip(ha, hb)]
            assert all(inter[l + 1] <= inter[l] for l in range(4))
            assert pyramid_match(a, b, 4) >= 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            pyramid_match(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_gram_psd(self, rng):
        graphs = [random_adjacency(rng, int(rng.integers(4, 12))) for _ in range(6)]
        embs = [eigen_embedding(a, 6) for a in graphs]
        gram = np.array([[pyramid_match(x, y, 4) for y in embs] for x in embs])
        assert np.linalg.eigvalsh(gram).min() >= -1e-8


class TestImportanceWeights:
    def test_single_shard(self, rng):
        adj = random_adjacency(rng, 6)
        w, raw = importance_weights(adj, [adj])
        assert w.tolist() == [1.0]

    def test_normalization_arithmetic(self):
        assert normalize_weights(np.array([1.0, 3.0])).tolist() == [0.25, 0.75]

    def test_identical_shard_beats_edgeless(self, rng):
        adj = random_adjacency(rng, 10, p=0.5)
        empty = sp.csr_matrix((10, 10))
        w, raw = importance_weights(adj, [adj, empty])
        assert w[0] > w[1]

    def test_zero_kernels_fall_back_to_uniform(self):
        empty = sp.csr_matrix((3, 3))
        w, _ = importance_weights(empty, [empty, empty])
        assert w.tolist() == [0.5, 0.5]

    def test_permutation_equivariance(self, rng):
        test_adj = random_adjacency(rng, 8)
        shards = [random_adjacency(rng, int(rng.integers(3, 9))) for _ in range(4)]
        w1, _ = importance_weights(test_adj, shards)
        w2, _ = importance_weights(test_adj, shards[::-1])
        assert np.allclose(w1, w2[::-1])

    def test_update_single(self):
        assert update_single_weight([1.0, 1.0], 0, 3.0).tolist() == [0.75, 0.25]
        w = update_single_weight([2.0, 2.0], 1, 2.0)
        assert w.tolist() == [0.5, 0.5]
        w = update_single_weight([0.3, 0.5, 0.7], 2, 1.1)
        assert abs(w.sum() - 1.0) < 1e-12

    def test_weights_file_round_trip(self, tmp_path):
        raw = np.array([1.5, 2.5])
        w = normalize_weights(raw)
        save_weights(tmp_path / "w.txt", w, raw)
        w2, raw2 = load_weights(tmp_path / "w.txt")
        assert np.allclose(w, w2, atol=1e-8)
        assert np.array_equal(raw, raw2)


class TestGraphSimilarity:
    def test_matches_manual_composition(self, rng):
        a = random_adjacency(rng, 7)
        b = random_adjacency(rng, 9)
        assert graph_similarity(a, b) == pytest.approx(
            pyramid_match(eigen_embedding(a, 6), eigen_embedding(b, 6), 4)
        )
