"""Clustering and assignment machinery: k-means, cluster-count estimation,
Hungarian label alignment, Sinkhorn-Knopp calibration, centroid alignment."""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import accumulate_clusters, assign_nearest, lsap_min_cost
from .errors import ConfigurationError, ContractError


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)


def _kmeans_pp_init(X, k, rng):
    """k-means++ seeding: first centroid uniform, rest by squared-distance."""
    n = X.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0.0:
            probs = d2 / total
            chosen[i] = rng.choice(n, p=probs)
        else:
            # all remaining mass is zero (duplicate points): take the first
            # index not yet chosen
            taken = set(chosen[:i].tolist())
            chosen[i] = next(j for j in range(n) if j not in taken)
        d2 = np.minimum(d2, ((X - X[chosen[i]]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans(X, k, max_iters=100, seed=0):
    """Lloyd iterations from a k-means++ start until the assignment fixpoint.

    Empty clusters are re-seeded to the point currently farthest from its own
    centroid, which keeps the recorded inertia sequence non-increasing.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if k > n:
        raise ConfigurationError(f"k={k} exceeds sample count {n}")
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    if max_iters < 1:
        raise ConfigurationError("max_iters must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6B]))
    centroids = _kmeans_pp_init(X, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    history = []
    iterations = 0
    for _ in range(max_iters):
        new_labels, d2 = assign_nearest(X, centroids)
        history.append(float(d2.sum()))
        iterations += 1
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        sums, counts = accumulate_clusters(X, labels, k)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            order = np.argsort(-d2, kind="stable")
            used = 0
            for j in empties:
                centroids[j] = X[order[used]]
                used += 1
    return ClusteringResult(
        assignments=labels,
        centroids=centroids,
        inertia=history[-1],
        iterations_run=iterations,
        inertia_history=history,
    )


def estimate_num_classes(X, k_prime, max_iters=100, seed=0):
    """Over-cluster with k_prime and count clusters of at least average size.

    The threshold is exactly N / k_prime (fractional, compared with >=).
    """
    X = np.asarray(X, dtype=np.float64)
    result = kmeans(X, k_prime, max_iters=max_iters, seed=seed)
    threshold = X.shape[0] / k_prime
    sizes = np.bincount(result.assignments, minlength=k_prime)
    return int((sizes >= threshold).sum())


@dataclass
class AssignmentMap:
    """Bijection between predicted ids and reference ids, possibly padded.

    ``pred_to_ref[p]`` is None when predicted id p was matched to a dummy
    column; applying the map sends such predictions to -1.
    """

    pred_to_ref: dict
    n_pred: int
    n_ref: int
    score: float  # matched count (label alignment) or total cost (centroids)

    def ref_to_pred(self):
        return {r: p for p, r in self.pred_to_ref.items() if r is not None}

    def apply(self, labels):
        labels = np.asarray(labels)
        out = np.full(labels.shape, -1, dtype=np.int64)
        for p, r in self.pred_to_ref.items():
            if r is not None:
                out[labels == p] = r
        return out


def hungarian_align(pred, truth):
    """Optimal pred-cluster -> true-class mapping maximizing matched count.

    Builds the contingency matrix, pads to square with zeros, and solves the
    assignment on the negated counts.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.size == 0:
        raise ContractError("cannot align empty label sequences")
    if pred.shape != truth.shape:
        raise ContractError("label sequences must have equal length")
    n_pred = int(pred.max()) + 1
    n_ref = int(truth.max()) + 1
    contingency = np.zeros((n_pred, n_ref))
    np.add.at(contingency, (pred, truth), 1.0)
    return _align_matrix(contingency, maximize=True)


def _align_matrix(weight, maximize):
    n_pred, n_ref = weight.shape
    side = max(n_pred, n_ref)
    cost = np.zeros((side, side))
    cost[:n_pred, :n_ref] = -weight if maximize else weight
    col4row = lsap_min_cost(np.ascontiguousarray(cost))
    mapping = {}
    score = 0.0
    for p in range(n_pred):
        r = int(col4row[p])
        if r < n_ref:
            mapping[p] = r
            score += float(weight[p, r])
        else:
            mapping[p] = None
    return AssignmentMap(pred_to_ref=mapping, n_pred=n_pred, n_ref=n_ref,
                         score=score)


def align_centroids(old_centroids, new_centroids):
    """Match new centroids to old ones minimizing total squared distance."""
    old_centroids = np.asarray(old_centroids, dtype=np.float64)
    new_centroids = np.asarray(new_centroids, dtype=np.float64)
    if old_centroids.shape != new_centroids.shape:
        raise ContractError(
            f"centroid shapes differ: {old_centroids.shape} vs "
            f"{new_centroids.shape}"
        )
    diffs = new_centroids[:, None, :] - old_centroids[None, :, :]
    cost = (diffs * diffs).sum(axis=2)
    col4row = lsap_min_cost(np.ascontiguousarray(cost))
    mapping = {p: int(col4row[p]) for p in range(cost.shape[0])}
    score = float(cost[np.arange(cost.shape[0]), col4row].sum())
    return AssignmentMap(pred_to_ref=mapping, n_pred=cost.shape[0],
                         n_ref=cost.shape[0], score=score)


def sinkhorn_calibrate(logits, epsilon=0.05, iterations=3, trace=None):
    """Balanced soft assignments from logits.

    Q starts proportional to exp(logits / epsilon) (per-row max subtracted
    for overflow safety); each iteration normalizes columns to sum B/K, then
    rows to sum 1. The returned matrix is row-stochastic. When ``trace`` is a
    list it accumulates ("col"|"row", snapshot) pairs.
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    if iterations < 1:
        raise ConfigurationError("need at least one normalization iteration")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.size == 0:
        raise ContractError("logits must be a non-empty 2-D matrix")
    b, k = logits.shape
    scaled = (logits - logits.max(axis=1, keepdims=True)) / epsilon
    q = np.exp(np.clip(scaled, -700.0, None))
    for _ in range(iterations):
        q *= (b / k) / q.sum(axis=0, keepdims=True)
        if trace is not None:
            trace.append(("col", q.copy()))
        q /= q.sum(axis=1, keepdims=True)
        if trace is not None:
            trace.append(("row", q.copy()))
    return q
