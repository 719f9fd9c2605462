"""Graph representation, indicator/guided matrices, file ingestion, and
synthetic graph generation.

The adjacency is kept sparse (CSR). Dense views are materialised only for
small graphs (below ``DENSE_LIMIT`` nodes) because every downstream solver
works off sparse products; the dense path exists for oracles and tests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, ValidationError

DENSE_LIMIT = 5000


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from a tuple of ints/strings.

    Used to key independent RNG streams (per-shard training seeds, per
    synthetic-node mixup draws) so results are reproducible and order
    independent.
    """
    h = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected weighted graph with node features and class labels.

    ``adjacency`` is a symmetric nonnegative CSR matrix with zero diagonal;
    ``labels`` take every value in ``[0, h)`` at least once.
    """

    n: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    h: int

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise ValidationError(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if (a != a.T).nnz != 0:
            raise ValidationError("adjacency is not symmetric")
        if a.nnz and a.data.min() < 0:
            raise ValidationError("adjacency has negative weights")
        if np.any(a.diagonal() != 0):
            raise ValidationError("adjacency has self-loops")
        if self.features.shape[0] != self.n:
            raise ValidationError(
                f"feature rows {self.features.shape[0]} != node count {self.n}"
            )
        if self.labels.shape != (self.n,):
            raise ValidationError("labels must be a length-n vector")
        if self.labels.min(initial=0) < 0 or (self.n and self.labels.max() >= self.h):
            raise ValidationError(f"labels must lie in [0, {self.h})")
        present = np.unique(self.labels)
        if len(present) != self.h:
            missing = sorted(set(range(self.h)) - set(present.tolist()))
            raise ValidationError(f"classes {missing} have no nodes")

    @property
    def degrees(self) -> np.ndarray:
        """Weighted degree vector (row sums of the adjacency)."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @property
    def unweighted_degrees(self) -> np.ndarray:
        """Number of distinct neighbors per node."""
        return np.diff(self.adjacency.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.adjacency.indices[
            self.adjacency.indptr[u] : self.adjacency.indptr[u + 1]
        ]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.h)

    def dense_adjacency(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise ValidationError(
                f"refusing dense view of {self.n}-node graph (limit {DENSE_LIMIT})"
            )
        return self.adjacency.toarray()

    def fingerprint(self) -> str:
        """Content hash used to detect stale cached similarity scores."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        coo = self.adjacency.tocoo()
        h.update(np.sort(coo.row * self.n + coo.col).tobytes())
        h.update(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Partition:
    """Assignment of every node to one of ``v`` shards."""

    assignment: np.ndarray
    v: int

    def __post_init__(self):
        a = self.assignment
        if a.ndim != 1:
            raise ValidationError("assignment must be a vector")
        if self.v < 1:
            raise ValidationError("shard count must be >= 1")
        if a.size and (a.min() < 0 or a.max() >= self.v):
            raise ValidationError(f"assignments must lie in [0, {self.v})")

    @property
    def n(self) -> int:
        return self.assignment.size

    def shard_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.v)

    def shard(self, j: int) -> np.ndarray:
        """Global ids of shard ``j``, ascending."""
        return np.flatnonzero(self.assignment == j)

    def indicator(self) -> np.ndarray:
        """Binary membership matrix Y (n x v), one 1 per row."""
        y = np.zeros((self.n, self.v))
        y[np.arange(self.n), self.assignment] = 1.0
        return y

    def normalized_indicator(self) -> np.ndarray:
        """Column-normalised membership matrix H with H^T H = I.

        Undefined (error) when a shard is empty.
        """
        sizes = self.shard_sizes()
        if np.any(sizes == 0):
            raise ValidationError(
                f"normalized indicator undefined: empty shards {np.flatnonzero(sizes == 0).tolist()}"
            )
        return self.indicator() / np.sqrt(sizes)[None, :]


@dataclass(frozen=True)
class DegreeRecord:
    """Unweighted degree of every node in the full training graph, retained
    independently of later shard-local edits."""

    original_degree: np.ndarray

    def __post_init__(self):
        if np.any(self.original_degree < 0):
            raise ValidationError("degrees must be nonnegative")

    def copy(self) -> "DegreeRecord":
        return DegreeRecord(self.original_degree.copy())


def build_degree_record(g: LabeledGraph) -> DegreeRecord:
    return DegreeRecord(g.unweighted_degrees.astype(np.int64))


def build_label_indicator(g: LabeledGraph) -> np.ndarray:
    """Binary label-membership matrix F (n x h): F[i, labels[i]] = 1."""
    f = np.zeros((g.n, g.h))
    f[np.arange(g.n), g.labels] = 1.0
    return f


def guided_matrices(g: LabeledGraph, v: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shard-size targets for a fair and balanced partition.

    Returns (M, M_tilde) of shape (h, v) with M[s, j] = |C_s| / v and
    M_tilde[s, j] = |C_s| / sqrt(n v). Non-integer targets are allowed; the
    constraints they feed become least-squares penalties.
    """
    if v < 2:
        raise ValidationError(f"shard count must be >= 2, got {v}")
    counts = g.class_counts().astype(float)
    m = np.repeat((counts / v)[:, None], v, axis=1)
    m_tilde = np.repeat((counts / np.sqrt(g.n * v))[:, None], v, axis=1)
    return m, m_tilde


def laplacian(g: LabeledGraph) -> tuple[np.ndarray, np.ndarray]:
    """Dense degree matrix D and the solver-convention matrix L = W - D.

    Note the sign: the solvers maximise trace forms in W - D, so this is the
    negative of the classical D - W Laplacian and is negative semidefinite.
    """
    w = g.dense_adjacency()
    d = np.diag(g.degrees)
    return d, w - d


def load_graph(edge_path, feature_path, label_path) -> LabeledGraph:
    """Read a graph from an edge list, a feature CSV, and a label file.

    Duplicate edges collapse to the first occurrence; edges are symmetrised;
    self-loops are stripped. Node count is fixed by the feature file.
    """
    features = _load_features(feature_path)
    n = features.shape[0]
    labels = _load_labels(label_path, n)
    h = int(labels.max()) + 1 if n else 0
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(h)) - present)
    if missing:
        raise ValidationError(f"{label_path}: classes {missing} have no nodes")

    seen: dict[tuple[int, int], float] = {}
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError(edge_path, lineno, f"expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise ParseError(edge_path, lineno, str(exc)) from None
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(
                    f"{edge_path}:{lineno}: node index out of range for n={n}: {line!r}"
                )
            if w <= 0:
                raise ParseError(edge_path, lineno, f"edge weight must be positive: {line!r}")
            if u == v:
                continue
            key = (min(u, v), max(u, v))
            seen.setdefault(key, w)

    if seen:
        rows = np.fromiter((k[0] for k in seen), dtype=np.int64, count=len(seen))
        cols = np.fromiter((k[1] for k in seen), dtype=np.int64, count=len(seen))
        vals = np.fromiter(seen.values(), dtype=np.float64, count=len(seen))
        adj = sp.coo_matrix(
            (np.concatenate([vals, vals]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(n, n),
        ).tocsr()
    else:
        adj = sp.csr_matrix((n, n))
    return LabeledGraph(n=n, adjacency=adj, features=features, labels=labels, h=h)


def save_graph(g: LabeledGraph, edge_path, feature_path, label_path) -> None:
    """Inverse of load_graph; load(save(g)) round-trips exactly."""
    coo = sp.triu(g.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(edge_path, "w", encoding="utf-8") as fh:
        for i in order:
            u, v, w = int(coo.row[i]), int(coo.col[i]), float(coo.data[i])
            fh.write(f"{u} {v}\n" if w == 1.0 else f"{u} {v} {w!r}\n")
    with open(feature_path, "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(label_path, "w", encoding="utf-8") as fh:
        for lab in g.labels:
            fh.write(f"{int(lab)}\n")


def _load_features(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, lineno, f"expected {width} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64)


def _load_labels(path, n: int) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    if len(labels) != n:
        raise ValidationError(f"{path}: {len(labels)} labels for {n} nodes")
    arr = np.asarray(labels, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise ValidationError(f"{path}: negative label")
    return arr


def generate_sbm(
    n: int,
    v_blocks: int,
    h: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    homophily: float,
    seed: int,
    mean_scale: float = 1.0,
) -> LabeledGraph:
    """Planted-partition graph with equal-size blocks and class-conditioned
    features.

    Labels cycle through the classes by node id, so every block holds every
    class at rate 1/h and global class counts are exactly n/h. Features are
    ``homophily * mean_scale * mu[label] + N(0, 1)`` with per-class means mu
    drawn once from the seeded stream. Deterministic for a fixed seed.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValidationError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if n % h != 0:
        raise ValidationError(f"n={n} not divisible by class count h={h}")
    if v_blocks < 1 or n % v_blocks != 0:
        raise ValidationError(f"n={n} not divisible by block count {v_blocks}")
    if not (0.0 <= homophily <= 1.0):
        raise ValidationError(f"homophily must be in [0, 1], got {homophily}")

    rng = np.random.default_rng(derive_seed("sbm", seed))
    block_size = n // v_blocks
    block = np.arange(n) // block_size
    labels = np.arange(n) % h

    means = rng.standard_normal((h, feature_dim)) * mean_scale

    rows, cols = [], []
    for bi in range(v_blocks):
        lo_i = bi * block_size
        for bj in range(bi, v_blocks):
            lo_j = bj * block_size
            p = p_in if bi == bj else p_out
            mask = rng.random((block_size, block_size)) < p
            if bi == bj:
                mask = np.triu(mask, k=1)
            r, c = np.nonzero(mask)
            rows.append(r + lo_i)
            cols.append(c + lo_j)
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    data = np.ones(rows.size)
    adj = sp.coo_matrix(
        (np.concatenate([data, data]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    adj.sum_duplicates()

    features = homophily * means[labels] + rng.standard_normal((n, feature_dim))
    return LabeledGraph(n=n, adjacency=adj, features=features, labels=labels, h=h)
