"""Per-shard node classifiers: a linear propagation model (SGC-style) and a
2-layer mean-aggregation message-passing network, trained by full-batch
gradient descent in double precision.

Everything is hand-rolled numpy with analytic gradients so training is
bitwise reproducible from a seed, which the unlearning oracle relies on.
Synthetic nodes participate in propagation but the loss is computed over
loss-masked (real) nodes only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

SGC = "sgc"
MEAN_GNN = "meangnn"
MODEL_KINDS = (SGC, MEAN_GNN)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 5e-4
    k_steps: int = 2  # SGC propagation depth
    hidden_dim: int = 64  # MeanGNN hidden width


@dataclass(frozen=True)
class ModelParams:
    """Parameter snapshot. SGC holds {w, b}; MeanGNN holds {w1, b1, w2, b2}
    where each layer acts on [self || mean-of-neighbors] concatenations."""

    kind: str
    arrays: dict[str, np.ndarray]
    seed: int
    hyper: TrainConfig
    final_loss: float = float("nan")

    def check_finite(self) -> None:
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} contains non-finite values")


def init_params(kind: str, d_f: int, h: int, seed: int, hyper: TrainConfig) -> ModelParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], weights
    drawn before biases layer by layer."""
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(seed)

    def unif(rows, cols, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(rows, cols) if cols else rows)

    if kind == SGC:
        arrays = {"w": unif(d_f, h, d_f), "b": unif(h, 0, d_f)}
    else:
        dh = hyper.hidden_dim
        arrays = {
            "w1": unif(2 * d_f, dh, 2 * d_f),
            "b1": unif(dh, 0, 2 * d_f),
            "w2": unif(2 * dh, h, 2 * dh),
            "b2": unif(h, 0, 2 * dh),
        }
    return ModelParams(kind=kind, arrays=arrays, seed=seed, hyper=hyper)


def sgc_propagate(adjacency, x: np.ndarray, k: int) -> np.ndarray:
    """S^k X with S the symmetrically normalised adjacency with self-loops:
    S = Dhat^{-1/2} (W + I) Dhat^{-1/2}, Dhat the degree matrix of W + I."""
    if k < 1:
        raise ValidationError("propagation depth must be >= 1")
    adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
    n = adjacency.shape[0]
    deg_hat = np.asarray(adjacency.sum(axis=1)).ravel() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg_hat)
    out = x
    for _ in range(k):
        out = inv_sqrt[:, None] * out
        out = adjacency @ out + out  # (W + I) applied without materialising I
        out = inv_sqrt[:, None] * out
    return out


def _mean_aggregate_matrix(adjacency) -> sp.csr_matrix:
    """Row-normalised adjacency; isolated nodes aggregate a zero message."""
    adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
    deg = np.asarray(adjacency.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    return sp.diags(inv) @ adjacency


def _forward(params: ModelParams, adjacency, x: np.ndarray):
    """Logits plus the intermediates the backward pass needs."""
    a = params.arrays
    if params.kind == SGC:
        z = sgc_propagate(adjacency, x, params.hyper.k_steps)
        return z @ a["w"] + a["b"], {"z": z}
    agg = _mean_aggregate_matrix(adjacency)
    c1 = np.hstack([x, agg @ x])
    z1 = c1 @ a["w1"] + a["b1"]
    h1 = np.maximum(z1, 0.0)
    c2 = np.hstack([h1, agg @ h1])
    logits = c2 @ a["w2"] + a["b2"]
    return logits, {"agg": agg, "c1": c1, "z1": z1, "h1": h1, "c2": c2}


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def masked_loss_and_grads(
    params: ModelParams, adjacency, x: np.ndarray, labels: np.ndarray, mask: np.ndarray
):
    """Mean softmax cross-entropy over masked nodes plus L2 weight decay;
    returns (loss, gradient dict matching params.arrays)."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValidationError("loss mask selects no nodes")
    logits, ctx = _forward(params, adjacency, x)
    probs = _softmax(logits)
    m = idx.size
    eps = 1e-30
    loss = -float(np.mean(np.log(probs[idx, labels[idx]] + eps)))

    dlogits = np.zeros_like(logits)
    dlogits[idx] = probs[idx]
    dlogits[idx, labels[idx]] -= 1.0
    dlogits /= m

    a = params.arrays
    wd = params.hyper.weight_decay
    if params.kind == SGC:
        grads = {
            "w": ctx["z"].T @ dlogits + wd * a["w"],
            "b": dlogits.sum(axis=0) + wd * a["b"],
        }
    else:
        agg = ctx["agg"]
        dh = a["w1"].shape[1]
        dc2 = dlogits @ a["w2"].T
        dh1 = dc2[:, :dh] + agg.T @ dc2[:, dh:]
        dz1 = dh1 * (ctx["z1"] > 0)
        grads = {
            "w1": ctx["c1"].T @ dz1 + wd * a["w1"],
            "b1": dz1.sum(axis=0) + wd * a["b1"],
            "w2": ctx["c2"].T @ dlogits + wd * a["w2"],
            "b2": dlogits.sum(axis=0) + wd * a["b2"],
        }
    for name in a:
        loss += 0.5 * wd * float(np.sum(a[name] * a[name]))
    return loss, grads


def train_shard(rs, params0: ModelParams, record_history: bool = False):
    """Full-batch gradient descent on the masked cross-entropy of a repaired
    subgraph. Deterministic given params0 (which embeds its init seed)."""
    real_labels = rs.labels[rs.loss_mask]
    if real_labels.size == 0:
        raise ValidationError(f"shard {rs.shard_id} has no real nodes")
    if np.unique(real_labels).size == 1:
        warnings.warn(
            f"shard {rs.shard_id}: all real nodes share class {int(real_labels[0])}; "
            "training a constant-logit classifier",
            stacklevel=2,
        )

    adjacency = rs.adjacency
    x = rs.features
    labels = np.maximum(rs.labels, 0)  # sentinel labels are masked out of the loss
    arrays = {k: v.copy() for k, v in params0.arrays.items()}
    params = replace(params0, arrays=arrays)
    lr = params.hyper.lr
    history = []
    loss = float("nan")
    for _ in range(params.hyper.epochs):
        loss, grads = masked_loss_and_grads(params, adjacency, x, labels, rs.loss_mask)
        history.append(loss)
        for name in arrays:
            arrays[name] = arrays[name] - lr * grads[name]
        params = replace(params, arrays=arrays)
    final = replace(params, final_loss=loss)
    final.check_finite()
    if record_history:
        return final, history
    return final


def grad_check(params: ModelParams, rs, epsilon: float = 1e-5, n_checks: int = 50, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central finite
    differences on up to ``n_checks`` randomly chosen parameters."""
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValidationError("epsilon must be in [1e-7, 1e-3]")
    labels = np.maximum(rs.labels, 0)
    _, grads = masked_loss_and_grads(params, rs.adjacency, rs.features, labels, rs.loss_mask)

    flat = [(name, i) for name, arr in params.arrays.items() for i in range(arr.size)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(flat), size=min(n_checks, len(flat)), replace=False)

    worst = 0.0
    for p in picks:
        name, i = flat[p]
        arrays = {k: v.copy() for k, v in params.arrays.items()}
        arrays[name].flat[i] += epsilon
        up, _ = masked_loss_and_grads(
            replace(params, arrays=arrays), rs.adjacency, rs.features, labels, rs.loss_mask
        )
        arrays[name].flat[i] -= 2 * epsilon
        down, _ = masked_loss_and_grads(
            replace(params, arrays=arrays), rs.adjacency, rs.features, labels, rs.loss_mask
        )
        numeric = (up - down) / (2 * epsilon)
        analytic = grads[name].flat[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def predict(params: ModelParams, adjacency, features: np.ndarray) -> np.ndarray:
    """Per-node class probabilities on an arbitrary graph (inductive: the
    propagation runs over the given graph's own edges)."""
    expected = (
        params.arrays["w"].shape[0] if params.kind == SGC else params.arrays["w1"].shape[0] // 2
    )
    if features.shape[1] != expected:
        raise ValidationError(
            f"feature dimension {features.shape[1]} does not match model ({expected})"
        )
    logits, _ = _forward(params, adjacency, features)
    return _softmax(logits)


def aggregate_predictions(preds, weights) -> np.ndarray:
    """Convex combination of per-shard probability matrices."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(preds) != weights.size:
        raise ValidationError("one weight per prediction required")
    shape = preds[0].shape
    for p in preds:
        if p.shape != shape:
            raise ValidationError("prediction shapes differ")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValidationError("weights must sum to 1")
    out = np.zeros(shape)
    for w, p in zip(weights, preds):
        out += w * p
    return out


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def macro_f1(probs: np.ndarray, labels: np.ndarray, h: int) -> float:
    """Unweighted mean of per-class F1 scores (0/0 counts as 0)."""
    pred = np.argmax(probs, axis=1)
    scores = []
    for c in range(h):
        tp = float(np.sum((pred == c) & (labels == c)))
        fp = float(np.sum((pred == c) & (labels != c)))
        fn = float(np.sum((pred != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))
