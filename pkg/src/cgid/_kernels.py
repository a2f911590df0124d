"""Hot numeric kernels with numba and pure-numpy implementations.

Public names (``assign_nearest``, ``accumulate_clusters``, ``lsap_min_cost``,
``ema_update_rows``) resolve to the backend selected in :mod:`cgid.backend`.
The ``*_np`` / ``*_loop`` variants stay importable so the benchmark can time
both paths regardless of the active backend.
"""

import numpy as np

from .backend import HAVE_NUMBA, USE_NUMBA, jit_or_plain

if HAVE_NUMBA:
    from numba import njit


def assign_nearest_np(X, centroids):
    """Vectorized nearest-centroid assignment.

    Returns (labels, squared distance to the assigned centroid).
    """
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def _assign_nearest_loop(X, centroids):
    n, d = X.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        best_j = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - centroids[j, t]
                s += diff * diff
            if s < best:
                best = s
                best_j = j
        labels[i] = best_j
        dists[i] = best
    return labels, dists


def accumulate_clusters_np(X, labels, k):
    """Per-cluster coordinate sums and member counts."""
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def _accumulate_clusters_loop(X, labels, k):
    n, d = X.shape
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        j = labels[i]
        counts[j] += 1
        for t in range(d):
            sums[j, t] += X[i, t]
    return sums, counts


def _lsap_min_cost(cost):
    """Minimum-cost square assignment (Kuhn-Munkres with potentials, O(n^3)).

    ``cost`` is (n, n) float64. Returns col4row: col4row[i] is the column
    assigned to row i. Rows are processed in ascending order, which makes the
    result deterministic under cost ties.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_for_col = np.zeros(n + 1, dtype=np.int64)  # 1-based rows, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_for_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = row_for_col[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_for_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_for_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_for_col[j0] = row_for_col[j1]
            j0 = j1
    col4row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        if row_for_col[j] > 0:
            col4row[row_for_col[j] - 1] = j - 1
    return col4row


def _ema_update_rows(protos, Z, indices, gamma):
    """Sample-wise moving-average update of prototype rows, in batch order.

    Each touched row is re-normalized to unit length immediately after its
    update; zero rows are left untouched by the normalization.
    """
    for i in range(Z.shape[0]):
        j = indices[i]
        norm = 0.0
        for t in range(protos.shape[1]):
            protos[j, t] = gamma * protos[j, t] + (1.0 - gamma) * Z[i, t]
            norm += protos[j, t] * protos[j, t]
        norm = np.sqrt(norm)
        if norm > 0.0:
            for t in range(protos.shape[1]):
                protos[j, t] /= norm
    return protos


lsap_min_cost_py = _lsap_min_cost
ema_update_rows_py = _ema_update_rows

if HAVE_NUMBA:
    assign_nearest_nb = njit(cache=True)(_assign_nearest_loop)
    accumulate_clusters_nb = njit(cache=True)(_accumulate_clusters_loop)
    lsap_min_cost_nb = njit(cache=True)(_lsap_min_cost)
    ema_update_rows_nb = njit(cache=True)(_ema_update_rows)

if USE_NUMBA:
    assign_nearest = assign_nearest_nb
    accumulate_clusters = accumulate_clusters_nb
else:
    assign_nearest = assign_nearest_np
    accumulate_clusters = accumulate_clusters_np

lsap_min_cost = jit_or_plain(_lsap_min_cost)
ema_update_rows = jit_or_plain(_ema_update_rows)
