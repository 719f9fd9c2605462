"""Pyramid-match similarity between unlabeled graphs and the shard
importance weights it induces.

Vertices are embedded by the absolute values of the leading adjacency
eigenvectors (clamped to [0, 1]); each embedding dimension is histogrammed
at geometrically refined resolutions and the kernel telescopes weighted
histogram intersections across levels. Structure only, no node features.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, ValidationError
from .graphs import derive_seed

DENSE_EIG_LIMIT = 500
DEFAULT_EMB_DIM = 6
DEFAULT_LEVELS = 4


def eigen_embedding(adjacency, d_emb: int = DEFAULT_EMB_DIM) -> np.ndarray:
    """(n x d_emb) vertex embedding from the largest-|eigenvalue| adjacency
    eigenvectors; entrywise absolute value, clamped to [0, 1].

    Columns beyond the numerical rank (|eigenvalue| below 1e-12) are zero,
    as are columns beyond n. The sign ambiguity of eigenvectors disappears
    under the absolute value, so embeddings are deterministic.
    """
    adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
    n = adjacency.shape[0]
    out = np.zeros((n, d_emb))
    if n == 0 or adjacency.nnz == 0:
        return out

    k = min(d_emb, n)
    if n <= DENSE_EIG_LIMIT or k >= n - 1:
        vals, vecs = np.linalg.eigh(adjacency.toarray())
        order = np.argsort(-np.abs(vals))[:k]
        vals, vecs = vals[order], vecs[:, order]
    else:
        v0 = np.random.default_rng(derive_seed("eigs", n, adjacency.nnz)).standard_normal(n)
        try:
            vals, vecs = spla.eigsh(adjacency, k=k, which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"eigen-solver did not converge: {exc}") from None
        order = np.argsort(-np.abs(vals))
        vals, vecs = vals[order], vecs[:, order]

    keep = np.abs(vals) > 1e-12
    out[:, : k][:, keep] = np.clip(np.abs(vecs[:, keep]), 0.0, 1.0)
    return out


def _histograms(emb: np.ndarray, levels: int) -> list[np.ndarray]:
    """Per level l, a (d_emb x 2^l) count array over equal-width bins of
    [0, 1]; entries equal to 1.0 land in the last bin."""
    n, d = emb.shape
    hists = []
    for level in range(levels + 1):
        bins = 1 << level
        idx = np.minimum((emb * bins).astype(np.int64), bins - 1)
        hist = np.zeros((d, bins), dtype=np.int64)
        for j in range(d):
            hist[j] = np.bincount(idx[:, j], minlength=bins)
        hists.append(hist)
    return hists


def _intersection(ha: np.ndarray, hb: np.ndarray) -> float:
    return float(np.minimum(ha, hb).sum())


def pyramid_match(emb_a: np.ndarray, emb_b: np.ndarray, levels: int = DEFAULT_LEVELS) -> float:
    """Weighted multi-resolution histogram intersection of two embeddings:
    matches found at finer levels count fully, matches only visible at
    coarser level l are discounted by 1 / 2^(levels - l)."""
    if emb_a.shape[1] != emb_b.shape[1]:
        raise ValidationError(
            f"embedding dimensions differ: {emb_a.shape[1]} vs {emb_b.shape[1]}"
        )
    ha = _histograms(emb_a, levels)
    hb = _histograms(emb_b, levels)
    inter = [_intersection(a, b) for a, b in zip(ha, hb)]
    value = inter[levels]
    for level in range(levels):
        value += (inter[level] - inter[level + 1]) / (1 << (levels - level))
    return value


def graph_similarity(adj_a, adj_b, d_emb: int = DEFAULT_EMB_DIM, levels: int = DEFAULT_LEVELS) -> float:
    return pyramid_match(eigen_embedding(adj_a, d_emb), eigen_embedding(adj_b, d_emb), levels)


def importance_weights(
    test_adjacency,
    shard_adjacencies,
    d_emb: int = DEFAULT_EMB_DIM,
    levels: int = DEFAULT_LEVELS,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalised test-graph similarity per shard.

    Returns (weights, raw kernel values); weights are the raw values scaled
    to sum to 1, or uniform if every kernel value is zero.
    """
    if len(shard_adjacencies) == 0:
        raise ValidationError("need at least one shard")
    test_emb = eigen_embedding(test_adjacency, d_emb)
    raw = np.array(
        [pyramid_match(test_emb, eigen_embedding(a, d_emb), levels) for a in shard_adjacencies]
    )
    return normalize_weights(raw), raw


def normalize_weights(raw: np.ndarray) -> np.ndarray:
    total = float(np.sum(raw))
    if total <= 0.0:
        return np.full(len(raw), 1.0 / len(raw))
    return np.asarray(raw, dtype=np.float64) / total


def update_single_weight(raw, shard_id: int, new_kernel_value: float) -> np.ndarray:
    """Recompute the weight vector after one shard's kernel value changes;
    all other raw values are untouched."""
    raw = np.asarray(raw, dtype=np.float64).copy()
    if not (0 <= shard_id < raw.size):
        raise ValidationError(f"shard {shard_id} out of range")
    raw[shard_id] = new_kernel_value
    return normalize_weights(raw)


def save_weights(path, weights: np.ndarray, raw: np.ndarray) -> None:
    """Weights file: one "shard_id weight" line per shard (8 decimals), then
    a raw-value section enabling single-shard renormalisation."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, w in enumerate(weights):
            fh.write(f"{i} {w:.8f}\n")
        for i, r in enumerate(raw):
            fh.write(f"raw {i} {float(r)!r}\n")


def load_weights(path) -> tuple[np.ndarray, np.ndarray]:
    weights, raw = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "raw":
                raw.append(float(parts[2]))
            else:
                weights.append(float(parts[1]))
    return np.asarray(weights), np.asarray(raw)
