import numpy as np
import pytest

from graphshard.errors import ValidationError
from graphshard.graphs import Partition, build_degree_record
from graphshard.repair import (
    MIRROR,
    MIXUP,
    NONE,
    ZERO,
    induced_subgraph,
    load_subgraph,
    missing_counts,
    mixup_lambda,
    repair_shard,
    save_subgraph,
    shrink_after_unlearn,
    subgraphs_equal,
)

from conftest import graph_from_edges, random_labeled_graph


def two_cliques_bridge():
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
    edges += [(3, 4)]
    return graph_from_edges(8, edges, [0, 0, 1, 1, 0, 0, 1, 1])


def halves(n=8):
    return Partition(np.array([0] * (n // 2) + [1] * (n // 2)), 2)


class TestMissingCounts:
    def test_subtraction(self):
        g = graph_from_edges(4, [(0, 1), (0, 2), (0, 3)], [0, 1, 0, 1])
        p = Partition(np.array([0, 0, 1, 1]), 2)
        rec = build_degree_record(g)
        counts = missing_counts(p, g, rec, 0)
        assert counts[0] == 2  # degree 3, one neighbor retained
        assert counts[1] == 0

    def test_whole_graph_one_shard_is_zero(self, rng):
        g = random_labeled_graph(rng, 10, 2, p=0.4)
        p = Partition(np.zeros(10, dtype=np.int64), 1)
        counts = missing_counts(p, g, build_degree_record(g), 0)
        assert all(c == 0 for c in counts.values())

    def test_bridge_endpoints(self):
        g = two_cliques_bridge()
        counts0 = missing_counts(halves(), g, build_degree_record(g), 0)
        counts1 = missing_counts(halves(), g, build_degree_record(g), 1)
        assert counts0 == {0: 0, 1: 0, 2: 0, 3: 1}
        assert counts1 == {4: 1, 5: 0, 6: 0, 7: 0}


class TestRepair:
    def test_zero_strategy(self):
        g = graph_from_edges(4, [(0, 1), (0, 2), (0, 3)], [0, 1, 0, 1])
        p = Partition(np.array([0, 0, 1, 1]), 2)
        rs = repair_shard(p, g, build_degree_record(g), 0, ZERO)
        assert rs.syn_owner.tolist() == [0, 0]
        assert np.all(rs.features[rs.n_real :] == 0.0)
        # degree restored
        deg = rs.local_degrees()
        assert deg[0] == 3

    def test_mirror_strategy(self):
        g = graph_from_edges(
            2, [(0, 1)], [0, 1], features=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        )
        p = Partition(np.array([0, 1]), 2)
        rs = repair_shard(p, g, build_degree_record(g), 0, MIRROR)
        assert rs.syn_owner.tolist() == [0]
        assert rs.features[1].tolist() == [1.0, 2.0, 3.0]

    def test_mixup_bounds_componentwise(self, rng):
        g = random_labeled_graph(rng, 12, 2, p=0.35)
        p = Partition(rng.integers(0, 3, size=12), 3)
        rec = build_degree_record(g)
        tau = 0.6
        for j in range(3):
            if len(p.shard(j)) == 0:
                continue
            rs = repair_shard(p, g, rec, j, MIXUP, tau=tau, seed=5)
            for idx, owner in enumerate(rs.syn_owner.tolist()):
                feat = rs.features[rs.n_real + idx]
                base = g.features[owner]
                nz = base != 0
                ratios = feat[nz] / base[nz]
                assert np.all(ratios >= -1e-12)
                assert np.all(ratios <= tau + 1e-12)
                # one lambda per synthetic node
                assert np.allclose(ratios, ratios[0])

    def test_mixup_stream_is_keyed(self):
        a = mixup_lambda(7, 1, 3, 0, 1.0)
        assert a == mixup_lambda(7, 1, 3, 0, 1.0)
        assert a != mixup_lambda(7, 1, 3, 1, 1.0)
        assert a != mixup_lambda(7, 2, 3, 0, 1.0)

    def test_synthetic_star_shape(self, rng):
        g = random_labeled_graph(rng, 14, 2, p=0.3)
        p = Partition(rng.integers(0, 2, size=14), 2)
        rs = repair_shard(p, g, build_degree_record(g), 0, ZERO)
        deg = rs.local_degrees()
        for idx in range(rs.syn_owner.size):
            assert deg[rs.n_real + idx] == 1  # exactly one edge, to the owner
        assert np.all(~rs.loss_mask[rs.n_real :])
        assert np.all(rs.loss_mask[: rs.n_real])
        assert np.all(rs.labels[rs.n_real :] == -1)

    def test_degree_restoration_random(self, rng):
        for _ in range(15):
            g = random_labeled_graph(rng, 12, 2, p=0.3)
            v = int(rng.integers(2, 4))
            assign = rng.integers(0, v, size=12)
            p = Partition(assign, v)
            rec = build_degree_record(g)
            for j in range(v):
                if len(p.shard(j)) == 0:
                    continue
                rs = repair_shard(p, g, rec, j, MIXUP, seed=3)
                deg = rs.local_degrees()
                for local, u in enumerate(rs.real_nodes.tolist()):
                    assert deg[local] == rec.original_degree[u]

    def test_invalid_tau(self):
        g = graph_from_edges(2, [(0, 1)], [0, 1])
        p = Partition(np.array([0, 1]), 2)
        with pytest.raises(ValidationError):
            repair_shard(p, g, build_degree_record(g), 0, MIXUP, tau=0.0)

    def test_locality_other_shard_content_irrelevant(self, rng):
        # changing features of nodes outside the shard leaves the repair alone
        g = random_labeled_graph(rng, 10, 2, p=0.4)
        p = Partition(np.array([0] * 5 + [1] * 5), 2)
        rec = build_degree_record(g)
        rs = repair_shard(p, g, rec, 0, MIXUP, seed=1)
        g2_features = g.features.copy()
        g2_features[5:] += 100.0
        g2 = graph_from_edges(
            10,
            [tuple(e) for e in np.array(np.triu(g.dense_adjacency()).nonzero()).T.tolist()],
            g.labels.tolist(),
            features=g2_features,
        )
        rs2 = repair_shard(p, g2, rec, 0, MIXUP, seed=1)
        assert subgraphs_equal(rs, rs2)


class TestShrink:
    @staticmethod
    def remove_node(g, u):
        """Reference removal: isolate u and zero its features."""
        adj = g.dense_adjacency().copy()
        adj[u, :] = 0.0
        adj[:, u] = 0.0
        feats = g.features.copy()
        feats[u] = 0.0
        edges = [tuple(e) for e in np.array(np.triu(adj).nonzero()).T.tolist()]
        weights = np.array([adj[a, b] for a, b in edges])
        return graph_from_edges(
            g.n, edges, g.labels.tolist(), features=feats, h=g.h, weights=weights
        )

    def test_removing_noninteracting_node_changes_nothing(self):
        g = two_cliques_bridge()
        p = halves()
        rec = build_degree_record(g)
        rs1 = repair_shard(p, g, rec, 1, ZERO)
        # node 0 lives in shard 0 and has no neighbors in shard 1
        g_after = self.remove_node(g, 0)
        rec_after = build_degree_record(g_after)
        shrunk = shrink_after_unlearn(rs1, {0}, rec_after, g_after)
        assert subgraphs_equal(shrunk, rs1)

    def test_cross_shard_neighbor_drops_synthetic(self):
        g = two_cliques_bridge()
        p = halves()
        rec = build_degree_record(g)
        rs1 = repair_shard(p, g, rec, 1, ZERO)
        assert rs1.syn_owner.tolist() == [4]
        g_after = self.remove_node(g, 3)  # 3 is 4's cross-shard neighbor
        rec_after = build_degree_record(g_after)
        shrunk = shrink_after_unlearn(rs1, set(), rec_after, g_after)
        assert shrunk.syn_owner.size == 0

    @pytest.mark.parametrize("strategy", [ZERO, MIRROR, MIXUP])
    def test_equals_rebuild_on_all_single_removals(self, strategy, rng):
        for trial in range(6):
            g = random_labeled_graph(rng, int(rng.integers(6, 13)), 2, p=0.35)
            v = 2 if g.n < 9 else 3
            assign = np.array([i % v for i in range(g.n)])
            rng.shuffle(assign)
            p = Partition(assign, v)
            rec = build_degree_record(g)
            shards = [
                repair_shard(p, g, rec, j, strategy, tau=0.8, seed=trial)
                for j in range(v)
            ]
            for u in range(g.n):
                g_after = self.remove_node(g, u)
                rec_after = build_degree_record(g_after)
                for j in range(v):
                    shrunk = shrink_after_unlearn(shards[j], {u}, rec_after, g_after)
                    members = np.array(
                        [x for x in p.shard(j).tolist() if x != u], dtype=np.int64
                    )
                    from graphshard.repair import repair_members

                    rebuilt = repair_members(
                        members, g_after, rec_after, j, strategy, tau=0.8, seed=trial
                    )
                    assert subgraphs_equal(shrunk, rebuilt)

    def test_demanding_more_than_available_errors(self):
        g = two_cliques_bridge()
        p = halves()
        rec = build_degree_record(g)
        rs = repair_shard(p, g, rec, 0, ZERO)
        bigger = build_degree_record(g)
        bigger.original_degree[0] += 2  # record now demands unseen neighbors
        with pytest.raises(ValidationError, match="synthetic neighbors"):
            shrink_after_unlearn(rs, set(), bigger, g)


class TestInducedSubgraph:
    def test_no_synthetics(self):
        g = two_cliques_bridge()
        rs = induced_subgraph(halves(), g, 0)
        assert rs.strategy == NONE
        assert rs.syn_owner.size == 0
        assert rs.n_local == 4


class TestSerialization:
    @pytest.mark.parametrize("strategy", [ZERO, MIRROR, MIXUP])
    def test_round_trip(self, strategy, tmp_path, rng):
        g = random_labeled_graph(rng, 10, 2, p=0.4)
        p = Partition(rng.integers(0, 2, size=10), 2)
        rs = repair_shard(p, g, build_degree_record(g), 0, strategy, seed=2)
        save_subgraph(rs, tmp_path / "shard")
        rs2 = load_subgraph(tmp_path / "shard")
        assert subgraphs_equal(rs, rs2)
