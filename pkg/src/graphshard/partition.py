"""Constrained graph partitioning with fairness and balance targets.

Two solvers share one inner engine:

* ``partition_fast`` relaxes the indicator to the Stiefel manifold, solves a
  quadratic-plus-linear trace maximisation by generalized power iteration
  (GPI), and discretises with K-means on the embedding rows.
* ``partition_spectral_rotation`` adds a rotation-alignment penalty and
  alternates rotation / embedding / indicator updates, reading the final
  partition straight off the indicator matrix.

Sign convention: the solvers maximise trace forms in W - D (negative
semidefinite), which is equivalent to minimising the classical RatioCut in
D - W. ``ratio_cut`` reports the classical nonnegative value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .graphs import (
    LabeledGraph,
    Partition,
    build_label_indicator,
    guided_matrices,
)


@dataclass(frozen=True)
class PartitionConfig:
    """Hyperparameters shared by both solvers.

    ``alpha`` weights the fairness/balance penalty, ``beta`` the rotation
    alignment term (spectral-rotation solver only). ``shift_gamma`` of None
    selects the automatic PSD shift (a Gershgorin bound on the quadratic
    term's spectrum, which guarantees the monotone GPI ascent).
    """

    alpha: float = 0.01
    beta: float = 2.0
    max_outer_iters: int = 30
    max_inner_iters: int = 100
    max_y_iters: int = 50
    tol: float = 1e-6
    shift_gamma: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be >= 0")
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")
        if min(self.max_outer_iters, self.max_inner_iters, self.max_y_iters) < 1:
            raise ValidationError("iteration caps must be >= 1")


@dataclass(frozen=True)
class PartitionScores:
    balance: float
    fairness: float
    combined: float
    ratio_cut: float


def gershgorin_shift(deg: np.ndarray, alpha: float, labels: np.ndarray, h: int) -> float:
    """Upper bound on the largest eigenvalue of D - W + alpha F F^T.

    Row i of that matrix has absolute row sum 2 d_i + alpha |C_{label(i)}|,
    so the max over rows bounds the spectrum. Adding this as a diagonal
    shift makes the GPI quadratic term positive semidefinite while leaving
    the argmax on the Stiefel manifold unchanged.
    """
    if deg.size == 0:
        return 0.0
    counts = np.bincount(labels, minlength=h)
    return float(np.max(2.0 * deg + alpha * counts[labels]))


def _group_sums(x: np.ndarray, labels: np.ndarray, h: int) -> np.ndarray:
    """F^T X without materialising F: per-class row sums (h x cols)."""
    out = np.zeros((h, x.shape[1]))
    np.add.at(out, labels, x)
    return out


def gpi_embedding(
    adj: sp.csr_matrix,
    deg: np.ndarray,
    labels: np.ndarray,
    h: int,
    b_linear: np.ndarray,
    alpha: float,
    h0: np.ndarray,
    cfg: PartitionConfig,
    gamma: float | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Maximise Tr(H^T (W - D - alpha F F^T) H + 2 H^T B) over H^T H = I.

    Each step forms P = 2(W - D)H - 2 alpha F(F^T H) + 2B + 2 gamma H and
    replaces H by the polar factor of P (via reduced SVD). With the PSD
    shift the objective is non-decreasing; iteration stops when its relative
    change drops below ``cfg.tol``. Returns the final H and the objective
    value at every iterate (including the start).
    """
    if gamma is None:
        gamma = cfg.shift_gamma
    if gamma is None:
        gamma = gershgorin_shift(deg, alpha, labels, h)

    hmat = h0

    def objective(hm: np.ndarray) -> float:
        wh = adj @ hm
        quad = float(np.sum(hm * wh)) - float(np.sum(deg * np.sum(hm * hm, axis=1)))
        fth = _group_sums(hm, labels, h)
        return quad - alpha * float(np.sum(fth * fth)) + 2.0 * float(np.sum(hm * b_linear))

    history = [objective(hmat)]
    for it in range(cfg.max_inner_iters):
        fth = _group_sums(hmat, labels, h)
        p = (
            2.0 * (adj @ hmat)
            - 2.0 * deg[:, None] * hmat
            - 2.0 * alpha * fth[labels]
            + 2.0 * b_linear
            + 2.0 * gamma * hmat
        )
        try:
            u, _, vt = np.linalg.svd(p, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed at GPI iteration {it}: {exc}") from None
        hmat = u @ vt
        history.append(objective(hmat))
        prev, cur = history[-2], history[-1]
        if abs(cur - prev) < cfg.tol * max(1.0, abs(prev)):
            break
    return hmat, history


def _leading_eigvecs(
    adj: sp.csr_matrix, deg: np.ndarray, v: int, seed: int, gamma: float
) -> np.ndarray:
    """Orthonormal basis for the top-v eigenspace of W - D via shifted
    subspace iteration; falls back to a seeded random orthonormal matrix if
    the iteration degenerates."""
    n = deg.size
    rng = np.random.default_rng(seed)
    x = np.linalg.qr(rng.standard_normal((n, v)))[0]
    for _ in range(30):
        y = gamma * x + (adj @ x) - deg[:, None] * x
        q, r = np.linalg.qr(y)
        if not np.all(np.isfinite(q)) or np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, gamma):
            return np.linalg.qr(rng.standard_normal((n, v)))[0]
        x = q
    return x


def kmeans_rows(hmat: np.ndarray, v: int, seed: int = 0, max_iters: int = 300) -> Partition:
    """Lloyd's algorithm on the rows of H with deterministic greedy
    farthest-point seeding; empty clusters are repaired by stealing the point
    farthest from its own centroid.

    The seeding is fully deterministic (first centre is the max-norm row),
    so ``seed`` only exists for interface stability.
    """
    n = hmat.shape[0]
    if n < v:
        raise ValidationError(f"cannot make {v} clusters from {n} rows")

    centers = np.empty((v, hmat.shape[1]))
    centers[0] = hmat[np.argmax(np.einsum("ij,ij->i", hmat, hmat))]
    dist = np.sum((hmat - centers[0]) ** 2, axis=1)
    for j in range(1, v):
        centers[j] = hmat[np.argmax(dist)]
        dist = np.minimum(dist, np.sum((hmat - centers[j]) ** 2, axis=1))

    assign = None
    for _it in range(max_iters):
        d2 = (
            np.sum(hmat * hmat, axis=1)[:, None]
            - 2.0 * hmat @ centers.T
            + np.sum(centers * centers, axis=1)[None, :]
        )
        new_assign = np.argmin(d2, axis=1)

        sizes = np.bincount(new_assign, minlength=v)
        while np.any(sizes == 0):
            empty = int(np.argmin(sizes))
            own = d2[np.arange(n), new_assign].copy()
            own[sizes[new_assign] < 2] = -np.inf
            steal = int(np.argmax(own))
            sizes[new_assign[steal]] -= 1
            new_assign[steal] = empty
            sizes[empty] += 1

        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(v):
            centers[j] = hmat[assign == j].mean(axis=0)
    return Partition(assignment=assign, v=v)


def random_partition(n: int, v: int, seed: int) -> Partition:
    """Uniformly random assignment corrected round-robin so shard sizes
    differ by at most one."""
    if n < v:
        raise ValidationError(f"cannot make {v} shards from {n} nodes")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assign = np.empty(n, dtype=np.int64)
    assign[perm] = np.arange(n) % v
    return Partition(assignment=assign, v=v)


def balance_score(p: Partition) -> float:
    """0 when all shards have n/v nodes, down to -1; see PartitionScores."""
    n = p.n
    target = n / p.v
    return float(-0.5 * np.sum(np.abs(p.shard_sizes() - target)) / n) + 0.0


def fairness_score(p: Partition, labels: np.ndarray, h: int) -> float:
    """0 when every shard reproduces the global class ratios, down to -1."""
    sizes = p.shard_sizes()
    if np.any(sizes == 0):
        raise ValidationError("fairness score undefined for empty shards")
    n = p.n
    global_ratio = np.bincount(labels, minlength=h) / n
    total = 0.0
    for j in range(p.v):
        ratios = np.bincount(labels[p.assignment == j], minlength=h) / sizes[j]
        total += float(np.sum(np.abs(ratios - global_ratio)))
    return -total / (2.0 * p.v) + 0.0


def ratio_cut(p: Partition, g: LabeledGraph) -> float:
    """Classical nonnegative RatioCut: sum over shards of cut weight leaving
    the shard divided by shard size."""
    sizes = p.shard_sizes()
    if np.any(sizes == 0):
        raise ValidationError("ratio cut undefined for empty shards")
    coo = sp.triu(g.adjacency, k=1).tocoo()
    a, b = p.assignment[coo.row], p.assignment[coo.col]
    cross = a != b
    if not np.any(cross):
        return 0.0
    w = coo.data[cross]
    return float(np.sum(w / sizes[a[cross]]) + np.sum(w / sizes[b[cross]]))


def partition_scores(p: Partition, g: LabeledGraph) -> PartitionScores:
    bal = balance_score(p)
    fair = fairness_score(p, g.labels, g.h)
    return PartitionScores(
        balance=bal, fairness=fair, combined=bal + fair, ratio_cut=ratio_cut(p, g)
    )


def partition_fast(
    g: LabeledGraph, v: int, cfg: PartitionConfig, full_output: bool = False
):
    """Relax-and-discretise solver: GPI embedding followed by K-means on its
    rows. Deterministic for a fixed config seed."""
    if v < 2:
        raise ValidationError("shard count must be >= 2")
    if g.n < v:
        raise ValidationError(f"cannot make {v} shards from {g.n} nodes")
    _, m_tilde = guided_matrices(g, v)
    deg = g.degrees
    b_linear = cfg.alpha * m_tilde[g.labels]  # F M~ has row i equal to M~'s label(i) row
    gamma = cfg.shift_gamma
    if gamma is None:
        gamma = gershgorin_shift(deg, cfg.alpha, g.labels, g.h)
    h0 = _leading_eigvecs(g.adjacency, deg, v, cfg.seed, gamma)
    hstar, history = gpi_embedding(
        g.adjacency, deg, g.labels, g.h, b_linear, cfg.alpha, h0, cfg, gamma
    )
    part = kmeans_rows(hstar, v, cfg.seed)
    if np.any(part.shard_sizes() == 0):
        raise NumericalError("discretisation produced an empty shard")
    if full_output:
        return part, {"embedding": hstar, "objective": history}
    return part


def update_rotation(hmat: np.ndarray, d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form orthogonal Procrustes alignment of H to the weighted
    normalised indicator: SVD of H^T D^{-1/2} Y (Y^T D Y)^{-1/2}."""
    _check_weighted_indicator(d, y)
    t = hmat.T @ _normalized_weighted_indicator(d, y)
    try:
        u, _, vt = np.linalg.svd(t)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed in rotation update: {exc}") from None
    return u @ vt


def _check_weighted_indicator(d: np.ndarray, y: np.ndarray) -> None:
    if np.any(d <= 0):
        raise ValidationError("degree weights must be strictly positive")
    if np.any(y.sum(axis=0) == 0):
        raise ValidationError("indicator has an empty shard")


def _normalized_weighted_indicator(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """D^{-1/2} Y (Y^T D Y)^{-1/2}; Y^T D Y is diagonal for an indicator."""
    mass = y.T @ d  # column masses
    return (y / np.sqrt(d)[:, None]) / np.sqrt(mass)[None, :]


def indicator_objective(hmat: np.ndarray, r: np.ndarray, d: np.ndarray, y: np.ndarray) -> float:
    """Tr(R^T H^T D^{-1/2} Y (Y^T D Y)^{-1/2}), the indicator-step target."""
    n_mat = _normalized_weighted_indicator(d, y)
    return float(np.sum((hmat @ r) * n_mat))


def update_indicator(
    hmat: np.ndarray,
    r: np.ndarray,
    d: np.ndarray,
    y0: np.ndarray,
    cfg: PartitionConfig,
) -> tuple[np.ndarray, list[float]]:
    """Coordinate ascent on the indicator: each node moves to the shard that
    maximises the alignment gain, with moves that would empty a shard vetoed.

    Sweeps stop when no assignment changes or after ``cfg.max_y_iters``. The
    returned history holds the objective before the first sweep and after
    each sweep; it is non-decreasing.
    """
    _check_weighted_indicator(d, y0)
    n, v = y0.shape
    assign = np.argmax(y0, axis=1)
    h_tilde = (hmat @ r) / np.sqrt(d)[:, None]

    a = np.array([float(np.sum(h_tilde[assign == j, j])) for j in range(v)])
    b = np.array([float(np.sum(d[assign == j])) for j in range(v)])
    sizes = np.bincount(assign, minlength=v)
    history = [float(np.sum(a / np.sqrt(b)))]

    for _ in range(cfg.max_y_iters):
        changed = False
        for i in range(n):
            k = assign[i]
            di = d[i]
            hi = h_tilde[i]
            outside = np.arange(v) != k
            # value of shard j's term with node i inside minus without it
            with_i = (a + hi * outside) / np.sqrt(b + di * outside)
            base = a - hi * ~outside
            denom = b - di * ~outside
            without_i = np.where(denom > 1e-12, base / np.sqrt(np.maximum(denom, 1e-300)), 0.0)
            c = with_i - without_i

            cmax = c.max()
            if c[k] == cmax:
                continue
            if sizes[k] == 1:
                continue  # the move would empty shard k
            j = int(np.argmax(c))
            a[k] -= hi[k]
            b[k] -= di
            sizes[k] -= 1
            a[j] += hi[j]
            b[j] += di
            sizes[j] += 1
            assign[i] = j
            changed = True
        # refresh accumulators to stop float drift across sweeps
        a = np.array([float(np.sum(h_tilde[assign == j, j])) for j in range(v)])
        b = np.array([float(np.sum(d[assign == j])) for j in range(v)])
        history.append(float(np.sum(a / np.sqrt(b))))
        if not changed:
            break

    y = np.zeros((n, v))
    y[np.arange(n), assign] = 1.0
    return y, history


def save_partition(path, p: Partition) -> None:
    """One "node_id shard_id" pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in enumerate(p.assignment.tolist()):
            fh.write(f"{i} {j}\n")


def load_partition(path) -> Partition:
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                pairs[int(parts[0])] = int(parts[1])
    if sorted(pairs) != list(range(len(pairs))):
        raise ValidationError(f"{path}: node ids must cover 0..n-1")
    assign = np.array([pairs[i] for i in range(len(pairs))], dtype=np.int64)
    return Partition(assignment=assign, v=int(assign.max()) + 1 if assign.size else 1)


def format_scores(scores: PartitionScores) -> str:
    """Single-line key=value record with 6 decimal places."""
    return (
        f"balance={scores.balance:.6f} fairness={scores.fairness:.6f} "
        f"combined={scores.combined:.6f} ratio_cut={scores.ratio_cut:.6f}"
    )


def partition_spectral_rotation(
    g: LabeledGraph, v: int, cfg: PartitionConfig, full_output: bool = False
):
    """Joint embedding/rotation/indicator solver; the partition is read
    directly off the indicator matrix, no K-means discretisation.

    Alternates a Procrustes rotation step, a GPI embedding step whose linear
    term pulls H toward the rotated normalised indicator, and a coordinate
    ascent indicator step. The tracked combined objective (RatioCut plus the
    fairness/balance penalty plus the alignment deficit) is non-increasing
    across outer iterations.
    """
    if v < 2:
        raise ValidationError("shard count must be >= 2")
    if g.n < v:
        raise ValidationError(f"cannot make {v} shards from {g.n} nodes")
    _, m_tilde = guided_matrices(g, v)
    deg = g.degrees
    d_hat = deg + 1.0  # keeps D^{-1/2} defined when isolated nodes exist
    b_linear = cfg.alpha * m_tilde[g.labels]
    gamma = cfg.shift_gamma
    if gamma is None:
        gamma = gershgorin_shift(deg, cfg.alpha, g.labels, g.h)

    h0 = _leading_eigvecs(g.adjacency, deg, v, cfg.seed, gamma)
    h_fast, _ = gpi_embedding(g.adjacency, deg, g.labels, g.h, b_linear, cfg.alpha, h0, cfg, gamma)
    y = kmeans_rows(h_fast, v, cfg.seed).indicator()

    hmat = h0

    def combined(hm, rot, ym) -> float:
        wh = g.adjacency @ hm
        cut = float(np.sum(deg * np.sum(hm * hm, axis=1))) - float(np.sum(hm * wh))
        fth = _group_sums(hm, g.labels, g.h)
        fit = float(np.sum((fth - m_tilde) ** 2))
        align = v - 2.0 * indicator_objective(hm, rot, d_hat, ym)
        return cut + cfg.alpha * fit + cfg.beta * align

    history = []
    rot = np.eye(v)
    for _ in range(cfg.max_outer_iters):
        rot = update_rotation(hmat, d_hat, y)
        n_mat = _normalized_weighted_indicator(d_hat, y)
        b_prime = b_linear + cfg.beta * (n_mat @ rot.T)
        hmat, _ = gpi_embedding(
            g.adjacency, deg, g.labels, g.h, b_prime, cfg.alpha, hmat, cfg, gamma
        )
        y, _ = update_indicator(hmat, rot, d_hat, y, cfg)
        history.append(combined(hmat, rot, y))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < cfg.tol * max(
            1.0, abs(history[-2])
        ):
            break

    part = Partition(assignment=np.argmax(y, axis=1), v=v)
    if full_output:
        return part, {"embedding": hmat, "rotation": rot, "objective": history}
    return part
