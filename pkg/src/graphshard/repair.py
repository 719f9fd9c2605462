"""Degree-preserving shard repair.

Each shard keeps its induced subgraph and grows one synthetic 1-hop
neighbor per lost edge endpoint, so every retained node recovers the degree
recorded for the full training graph. Synthetic nodes form a star around
their owner, carry a sentinel label, and are masked out of every loss.

Repair reads only the shard's own node set, those nodes' features, and the
global degree record; other shards' membership and features are never
touched.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .graphs import DegreeRecord, LabeledGraph, Partition, derive_seed

ZERO = "zero"
MIRROR = "mirror"
MIXUP = "mixup"
NONE = "none"  # ablation baseline: bare induced subgraph, no synthetic nodes
STRATEGIES = (ZERO, MIRROR, MIXUP)

SYNTHETIC_LABEL = -1


@dataclass(frozen=True)
class RepairedSubgraph:
    """One shard's induced subgraph plus synthetic missing-neighbor nodes.

    Local ids: real nodes first (ascending global id), then synthetic nodes
    in (owner, ordinal) order. ``loss_mask`` is True exactly on real nodes.
    """

    shard_id: int
    real_nodes: np.ndarray
    syn_owner: np.ndarray
    syn_ordinal: np.ndarray
    edges: np.ndarray  # (m, 2) local endpoints, first < second
    edge_weights: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    loss_mask: np.ndarray
    strategy: str
    tau: float
    rng_seed: int

    @property
    def n_real(self) -> int:
        return self.real_nodes.size

    @property
    def n_local(self) -> int:
        return self.n_real + self.syn_owner.size

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.n_local
        if self.edges.size == 0:
            return sp.csr_matrix((n, n))
        r, c = self.edges[:, 0], self.edges[:, 1]
        w = self.edge_weights
        return sp.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([r, c]), np.concatenate([c, r]))),
            shape=(n, n),
        ).tocsr()

    def local_degrees(self) -> np.ndarray:
        """Unweighted local degree per local node."""
        deg = np.zeros(self.n_local, dtype=np.int64)
        if self.edges.size:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg


def subgraphs_equal(a: RepairedSubgraph, b: RepairedSubgraph) -> bool:
    """Exact equality of the canonical layout (used by the rebuild oracle)."""
    return (
        a.shard_id == b.shard_id
        and a.strategy == b.strategy
        and a.tau == b.tau
        and a.rng_seed == b.rng_seed
        and np.array_equal(a.real_nodes, b.real_nodes)
        and np.array_equal(a.syn_owner, b.syn_owner)
        and np.array_equal(a.syn_ordinal, b.syn_ordinal)
        and np.array_equal(a.edges, b.edges)
        and np.array_equal(a.edge_weights, b.edge_weights)
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.loss_mask, b.loss_mask)
    )


def missing_counts(
    p: Partition, g: LabeledGraph, rec: DegreeRecord, shard: int
) -> dict[int, int]:
    """Per retained node, how many of its recorded neighbors the shard lost."""
    if not (0 <= shard < p.v):
        raise ValidationError(f"shard {shard} out of range for v={p.v}")
    members = p.shard(shard)
    member_set = set(members.tolist())
    counts: dict[int, int] = {}
    for u in members.tolist():
        kept = sum(1 for w in g.neighbors(u).tolist() if w in member_set)
        missing = int(rec.original_degree[u]) - kept
        if missing < 0:
            raise ValidationError(
                f"degree record inconsistent at node {u}: {kept} neighbors retained, "
                f"record says {int(rec.original_degree[u])}"
            )
        counts[u] = missing
    return counts


def mixup_lambda(seed: int, shard: int, owner: int, ordinal: int, tau: float) -> float:
    """Uniform draw in [0, tau] from a stream keyed by (seed, shard, owner,
    ordinal), making repairs order-independent and replays exact."""
    rng = np.random.default_rng(derive_seed("mixup", seed, shard, owner, ordinal))
    return float(rng.uniform(0.0, tau))


def _synthetic_feature(
    strategy: str, owner_feature: np.ndarray, seed: int, shard: int, owner: int, ordinal: int, tau: float
) -> np.ndarray:
    if strategy == ZERO:
        return np.zeros_like(owner_feature)
    if strategy == MIRROR:
        return owner_feature.copy()
    lam = mixup_lambda(seed, shard, owner, ordinal, tau)
    return lam * owner_feature


def _assemble(
    shard_id: int,
    real_nodes: np.ndarray,
    intra_edges: list[tuple[int, int, float]],
    syn: list[tuple[int, int, np.ndarray]],
    g: LabeledGraph,
    strategy: str,
    tau: float,
    seed: int,
) -> RepairedSubgraph:
    """Canonical construction shared by repair and shrink, so both produce
    bit-identical layouts for identical content."""
    n_real = real_nodes.size
    local = {int(u): i for i, u in enumerate(real_nodes.tolist())}

    edges = []
    weights = []
    for u, v, w in intra_edges:
        i, j = local[u], local[v]
        if i > j:
            i, j = j, i
        edges.append((i, j))
        weights.append(w)

    syn_owner = np.array([s[0] for s in syn], dtype=np.int64)
    syn_ordinal = np.array([s[1] for s in syn], dtype=np.int64)
    for idx, (owner, _k, _feat) in enumerate(syn):
        edges.append((local[owner], n_real + idx))
        weights.append(1.0)

    d = g.features.shape[1]
    features = np.empty((n_real + len(syn), d))
    features[:n_real] = g.features[real_nodes]
    for idx, (_owner, _k, feat) in enumerate(syn):
        features[n_real + idx] = feat

    labels = np.full(n_real + len(syn), SYNTHETIC_LABEL, dtype=np.int64)
    labels[:n_real] = g.labels[real_nodes]
    mask = np.zeros(n_real + len(syn), dtype=bool)
    mask[:n_real] = True

    return RepairedSubgraph(
        shard_id=shard_id,
        real_nodes=real_nodes.astype(np.int64),
        syn_owner=syn_owner,
        syn_ordinal=syn_ordinal,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_weights=np.asarray(weights, dtype=np.float64),
        features=features,
        labels=labels,
        loss_mask=mask,
        strategy=strategy,
        tau=tau,
        rng_seed=seed,
    )


def _intra_edges(g: LabeledGraph, members: np.ndarray) -> list[tuple[int, int, float]]:
    member_set = set(members.tolist())
    out = []
    adj = g.adjacency
    for u in members.tolist():
        lo, hi = adj.indptr[u], adj.indptr[u + 1]
        for w, wt in zip(adj.indices[lo:hi].tolist(), adj.data[lo:hi].tolist()):
            if u < w and w in member_set:
                out.append((u, w, wt))
    return out


def repair_members(
    members: np.ndarray,
    g: LabeledGraph,
    rec: DegreeRecord,
    shard: int,
    strategy: str,
    tau: float = 1.0,
    seed: int = 0,
) -> RepairedSubgraph:
    """Repair an explicit member set (ascending global ids). The engine uses
    this to rebuild a shard whose membership has shrunk below the partition's
    original assignment."""
    if strategy == NONE:
        return _assemble(shard, members, _intra_edges(g, members), [], g, NONE, tau, seed)
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown repair strategy {strategy!r}")
    if not (0.0 < tau <= 1.0):
        raise ValidationError(f"tau must be in (0, 1], got {tau}")
    member_set = set(members.tolist())
    syn = []
    for u in members.tolist():
        kept = sum(1 for w in g.neighbors(u).tolist() if w in member_set)
        missing = int(rec.original_degree[u]) - kept
        if missing < 0:
            raise ValidationError(
                f"degree record inconsistent at node {u}: {kept} neighbors retained, "
                f"record says {int(rec.original_degree[u])}"
            )
        for k in range(missing):
            feat = _synthetic_feature(strategy, g.features[u], seed, shard, u, k, tau)
            syn.append((u, k, feat))
    return _assemble(shard, members, _intra_edges(g, members), syn, g, strategy, tau, seed)


def repair_shard(
    p: Partition,
    g: LabeledGraph,
    rec: DegreeRecord,
    shard: int,
    strategy: str,
    tau: float = 1.0,
    seed: int = 0,
) -> RepairedSubgraph:
    """Build the shard's repaired subgraph: every retained node gets one
    synthetic neighbor per missing recorded neighbor, with features chosen
    by the strategy (zero vector, owner copy, or a keyed uniform fraction of
    the owner's vector)."""
    if not (0 <= shard < p.v):
        raise ValidationError(f"shard {shard} out of range for v={p.v}")
    return repair_members(p.shard(shard), g, rec, shard, strategy, tau, seed)


def induced_subgraph(p: Partition, g: LabeledGraph, shard: int) -> RepairedSubgraph:
    """Bare partition-induced subgraph with no synthetic nodes (the
    no-repair ablation baseline)."""
    members = p.shard(shard)
    return _assemble(shard, members, _intra_edges(g, members), [], g, NONE, 1.0, 0)


def shrink_after_unlearn(
    rs: RepairedSubgraph,
    removed_global_ids: set[int],
    new_rec: DegreeRecord,
    g_after: LabeledGraph,
) -> RepairedSubgraph:
    """Apply a removal to an existing repaired subgraph.

    Removed real nodes leave together with their incident edges and their
    synthetic neighbors; every surviving node keeps exactly as many
    synthetic neighbors as the post-removal record still demands, dropping
    the most recently created ones first. The result equals rebuilding the
    repair from scratch on the post-removal graph.
    """
    retained = np.array(
        [u for u in rs.real_nodes.tolist() if u not in removed_global_ids], dtype=np.int64
    )
    retained_set = set(retained.tolist())

    # surviving intra-shard real edges, weights refreshed from the new graph
    intra: list[tuple[int, int, float]] = []
    intra_deg: dict[int, int] = {int(u): 0 for u in retained.tolist()}
    old_local = {int(u): i for i, u in enumerate(rs.real_nodes.tolist())}
    n_real = rs.n_real
    for (i, j), _w in zip(rs.edges.tolist(), rs.edge_weights.tolist()):
        if j >= n_real:
            continue  # synthetic star edge, rebuilt below
        u, v = int(rs.real_nodes[i]), int(rs.real_nodes[j])
        if u not in retained_set or v not in retained_set:
            continue
        w_now = g_after.adjacency[u, v]
        if w_now == 0:
            continue  # the edge itself was unlearned
        intra.append((u, v, float(w_now)))
        intra_deg[u] += 1
        intra_deg[v] += 1

    # per-owner synthetic targets against the new record
    syn: list[tuple[int, int, np.ndarray]] = []
    if rs.strategy != NONE:
        current: dict[int, list[int]] = {}
        for idx, owner in enumerate(rs.syn_owner.tolist()):
            current.setdefault(int(owner), []).append(idx)
        for u in retained.tolist():
            target = int(new_rec.original_degree[u]) - intra_deg[u]
            have = current.get(u, [])
            if target < 0 or target > len(have):
                raise ValidationError(
                    f"node {u} needs {target} synthetic neighbors but shard "
                    f"{rs.shard_id} holds {len(have)}"
                )
            for idx in have[:target]:  # creation order == ordinal order
                syn.append((u, int(rs.syn_ordinal[idx]), rs.features[n_real + idx].copy()))

    return _assemble(
        rs.shard_id, retained, intra, syn, g_after, rs.strategy, rs.tau, rs.rng_seed
    )


def save_subgraph(rs: RepairedSubgraph, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {
        "shard_id": rs.shard_id,
        "strategy": rs.strategy,
        "tau": rs.tau,
        "seed": rs.rng_seed,
        "n_real": int(rs.n_real),
        "n_syn": int(rs.syn_owner.size),
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    with open(os.path.join(directory, "edges.txt"), "w", encoding="utf-8") as fh:
        for (i, j), w in zip(rs.edges.tolist(), rs.edge_weights.tolist()):
            fh.write(f"{i} {j} {w!r}\n")
    with open(os.path.join(directory, "features.csv"), "w", encoding="utf-8") as fh:
        for row in rs.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        for i, (gid, lab) in enumerate(zip(rs.real_nodes.tolist(), rs.labels.tolist())):
            fh.write(f"{i} real {gid} {lab}\n")
        for idx, (owner, k) in enumerate(zip(rs.syn_owner.tolist(), rs.syn_ordinal.tolist())):
            fh.write(f"{rs.n_real + idx} syn {owner} {k}\n")
    with open(os.path.join(directory, "mask.txt"), "w", encoding="utf-8") as fh:
        for m in rs.loss_mask.tolist():
            fh.write(f"{int(m)}\n")


def load_subgraph(directory) -> RepairedSubgraph:
    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    n_real, n_syn = meta["n_real"], meta["n_syn"]

    edges, weights = [], []
    with open(os.path.join(directory, "edges.txt"), encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                edges.append((int(parts[0]), int(parts[1])))
                weights.append(float(parts[2]))

    features = []
    with open(os.path.join(directory, "features.csv"), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                features.append([float(x) for x in line.split(",")])
    feat_arr = np.asarray(features, dtype=np.float64)
    if feat_arr.size == 0:
        feat_arr = feat_arr.reshape(0, 0)

    real_nodes = np.zeros(n_real, dtype=np.int64)
    labels = np.full(n_real + n_syn, SYNTHETIC_LABEL, dtype=np.int64)
    syn_owner = np.zeros(n_syn, dtype=np.int64)
    syn_ordinal = np.zeros(n_syn, dtype=np.int64)
    with open(os.path.join(directory, "manifest.txt"), encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            i = int(parts[0])
            if parts[1] == "real":
                real_nodes[i] = int(parts[2])
                labels[i] = int(parts[3])
            else:
                syn_owner[i - n_real] = int(parts[2])
                syn_ordinal[i - n_real] = int(parts[3])

    mask = np.zeros(n_real + n_syn, dtype=bool)
    with open(os.path.join(directory, "mask.txt"), encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if line.strip():
                mask[i] = bool(int(line))

    return RepairedSubgraph(
        shard_id=meta["shard_id"],
        real_nodes=real_nodes,
        syn_owner=syn_owner,
        syn_ordinal=syn_ordinal,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_weights=np.asarray(weights, dtype=np.float64),
        features=feat_arr,
        labels=labels,
        loss_mask=mask,
        strategy=meta["strategy"],
        tau=meta["tau"],
        rng_seed=meta["seed"],
    )
