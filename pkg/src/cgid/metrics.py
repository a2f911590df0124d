"""Evaluation: accuracy matrix, staged accuracy/forgetting metrics,
classifier loss/gain, and representation compactness."""

from dataclasses import dataclass, field

import numpy as np

from .cluster import _align_matrix
from .errors import ContractError, UndefinedMetricError
from .network import encoder_forward


@dataclass
class AccuracyMatrix:
    """a[t][i]: accuracy on class set i after training stage t (i <= t)."""

    set_sizes: list  # |Y_i| for i = 0..T
    values: np.ndarray = None

    def __post_init__(self):
        n = len(self.set_sizes)
        if self.values is None:
            self.values = np.full((n, n), np.nan)

    def a(self, t, i):
        if i > t:
            raise ContractError(f"a[{t}][{i}] is above the diagonal")
        v = self.values[t, i]
        if np.isnan(v):
            raise ContractError(f"a[{t}][{i}] has not been filled")
        return float(v)

    def set_row(self, t, accuracies):
        if len(accuracies) != t + 1:
            raise ContractError(f"stage {t} row needs {t + 1} entries")
        for i, v in enumerate(accuracies):
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"accuracy {v} outside [0, 1]")
            self.values[t, i] = v


def predict(model, X):
    feats, _, _ = encoder_forward(model.encoder, X, 0.0, 0)
    return model.logits(feats).argmax(axis=1), feats


def evaluate_stage(model, test_sets, t, num_ind, align_per_block=False,
                   stage_block_sizes=None):
    """Accuracy-matrix row after stage t, with Hungarian-aligned OOD labels.

    ``test_sets`` is the list [(X_0, y_0), ..., (X_t, y_t)] of per-class-set
    test data in protocol labels. In-domain predictions map to themselves;
    predicted OOD ids are aligned to true OOD ids jointly over all stages (or
    per stage block when ``align_per_block``). Returns (row, aligned
    predictions per set).
    """
    if len(test_sets) != t + 1:
        raise ContractError(f"stage {t} needs {t + 1} test sets")
    xs = [np.asarray(x) for x, _ in test_sets]
    ys = [np.asarray(y) for _, y in test_sets]
    preds = [predict(model, x)[0] for x in xs]
    pred_all = np.concatenate(preds)
    true_all = np.concatenate(ys)

    n_pred_ood = model.logit_dim - num_ind
    n_true_ood = int(true_all.max()) + 1 - num_ind if t > 0 else 0
    aligned_all = pred_all.copy()
    if t > 0 and n_pred_ood > 0:
        blocks = []
        if align_per_block:
            if stage_block_sizes is None:
                raise ContractError("per-block alignment needs block sizes")
            pred_lo = true_lo = num_ind
            for (p_size, t_size) in stage_block_sizes:
                blocks.append(((pred_lo, pred_lo + p_size),
                               (true_lo, true_lo + t_size)))
                pred_lo += p_size
                true_lo += t_size
        else:
            blocks.append(((num_ind, num_ind + n_pred_ood),
                           (num_ind, num_ind + n_true_ood)))
        for (p_lo, p_hi), (t_lo, t_hi) in blocks:
            in_block = ((pred_all >= p_lo) & (pred_all < p_hi)
                        & (true_all >= t_lo) & (true_all < t_hi))
            contingency = np.zeros((p_hi - p_lo, t_hi - t_lo))
            if in_block.any():
                np.add.at(contingency,
                          (pred_all[in_block] - p_lo, true_all[in_block] - t_lo),
                          1.0)
            amap = _align_matrix(contingency, maximize=True)
            for p, r in amap.pred_to_ref.items():
                mask = pred_all == p_lo + p
                aligned_all[mask] = t_lo + r if r is not None else -1

    row = []
    aligned_per_set = []
    offset = 0
    for y in ys:
        seg = aligned_all[offset:offset + len(y)]
        aligned_per_set.append(seg)
        row.append(float((seg == y).mean()))
        offset += len(y)
    return row, aligned_per_set


def cgid_accuracy(acc, t):
    """(A_IND, A_OOD, A_ALL) after stage t >= 1: size-weighted means."""
    if t < 1:
        raise ContractError("accuracy triple is defined for t >= 1")
    sizes = acc.set_sizes
    a_ind = acc.a(t, 0)
    ood_weight = sum(sizes[1: t + 1])
    a_ood = sum(sizes[i] * acc.a(t, i) for i in range(1, t + 1)) / ood_weight
    total = sizes[0] + ood_weight
    a_all = sum(sizes[i] * acc.a(t, i) for i in range(t + 1)) / total
    return a_ind, a_ood, a_all


def cgid_forgetting(acc, t):
    """(F_IND, F_OOD, F_ALL): drop from each set's own-stage accuracy."""
    if t < 1:
        raise ContractError("forgetting is defined for t >= 1")
    sizes = acc.set_sizes
    f_ind = acc.a(0, 0) - acc.a(t, 0)
    ood_weight = sum(sizes[1: t + 1])
    f_ood = sum(sizes[i] * (acc.a(i, i) - acc.a(t, i))
                for i in range(1, t + 1)) / ood_weight
    total = sizes[0] + ood_weight
    f_all = sum(sizes[i] * (acc.a(i, i) - acc.a(t, i))
                for i in range(t + 1)) / total
    return f_ind, f_ood, f_all


def loss_gain(acc, t):
    """Normalized in-domain degradation and classifier capacity gain."""
    a_ind_0 = acc.a(0, 0)
    if a_ind_0 == 0.0:
        raise UndefinedMetricError("A_IND at stage 0 is zero")
    sizes = acc.set_sizes
    if t == 0:
        f_ind = 0.0
        a_all = a_ind_0
    else:
        f_ind = cgid_forgetting(acc, t)[0]
        a_all = cgid_accuracy(acc, t)[2]
    total = sum(sizes[: t + 1])
    loss_t = -f_ind / a_ind_0
    gain_t = total * a_all / (sizes[0] * a_ind_0) - 1.0
    return loss_t, gain_t


def compactness(features, labels, class_subset):
    """Mean inter-centroid distance over mean within-class pairwise distance.

    Within-class distances are averaged per class, then across classes. Zero
    inter-centroid spread gives 0; zero intra spread with separated centroids
    gives inf. Every class in the subset needs at least two samples.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = list(class_subset)
    if len(classes) < 2:
        raise ContractError("compactness needs at least two classes")
    centroids = []
    intra = []
    for c in classes:
        rows = features[labels == c]
        if len(rows) < 2:
            raise ContractError(f"class {c} has fewer than 2 samples")
        centroids.append(rows.mean(axis=0))
        diffs = rows[:, None, :] - rows[None, :, :]
        dists = np.sqrt((diffs * diffs).sum(axis=2))
        iu = np.triu_indices(len(rows), k=1)
        intra.append(dists[iu].mean())
    centroids = np.stack(centroids)
    diffs = centroids[:, None, :] - centroids[None, :, :]
    cd = np.sqrt((diffs * diffs).sum(axis=2))
    inter = cd[np.triu_indices(len(classes), k=1)].mean()
    intra_mean = float(np.mean(intra))
    if inter == 0.0:
        return 0.0
    if intra_mean == 0.0:
        return float("inf")
    return float(inter / intra_mean)
