"""Class prototypes: soft assignment vectors, moving-average updates, and
nearest-prototype pseudo-labels. Prototype rows stay unit-norm."""

from dataclasses import dataclass

import numpy as np

from ._kernels import ema_update_rows
from .cluster import sinkhorn_calibrate
from .errors import ContractError
from .network import l2_normalize


@dataclass
class PrototypeBank:
    """One unit-norm prototype per known class, updated by moving average."""

    vectors: np.ndarray  # (C_known, d_z)
    gamma: float

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def append_random(self, num_new, rng):
        fresh = rng.normal(size=(num_new, self.dim))
        self.vectors = np.vstack([self.vectors, l2_normalize(fresh)])

    def append_rows(self, rows):
        self.vectors = np.vstack([self.vectors, l2_normalize(np.asarray(rows))])

    def copy(self):
        return PrototypeBank(vectors=self.vectors.copy(), gamma=self.gamma)


def empty_bank(dim, gamma):
    return PrototypeBank(vectors=np.empty((0, dim)), gamma=gamma)


def compute_q(is_old, old_labels, new_logits, num_old, num_new,
              epsilon=0.05, iterations=3):
    """Per-sample assignment probabilities over all known prototypes.

    Old samples get a one-hot row at their stored label. New samples get
    zeros on the old block and a Sinkhorn-calibrated soft assignment of their
    new-head logits on the new block (calibrated jointly over the batch's new
    rows), renormalized to sum 1.
    """
    is_old = np.asarray(is_old, dtype=bool)
    old_labels = np.asarray(old_labels, dtype=np.int64)
    b = len(is_old)
    total = num_old + num_new
    q = np.zeros((b, total))
    old_idx = np.flatnonzero(is_old)
    if old_idx.size:
        labs = old_labels[old_idx]
        if (labs < 0).any() or (labs >= total).any():
            raise ContractError("old sample without a valid stored label")
        q[old_idx, labs] = 1.0
    new_idx = np.flatnonzero(~is_old)
    if new_idx.size:
        if num_new < 1:
            raise ContractError("new samples present but the new block is empty")
        new_logits = np.asarray(new_logits, dtype=np.float64)
        if new_logits.shape != (len(new_idx), num_new):
            raise ContractError(
                f"new_logits must be {len(new_idx)}x{num_new}, "
                f"got {new_logits.shape}"
            )
        soft = sinkhorn_calibrate(new_logits, epsilon=epsilon,
                                  iterations=iterations)
        soft /= soft.sum(axis=1, keepdims=True)
        q[new_idx, num_old:] = soft
    return q


def update_prototypes(bank, z_unit, q):
    """Moving-average update, one sample at a time in batch order.

    Each sample updates the single prototype at argmax(q_i) (ties to the
    lowest index) and re-normalizes it.
    """
    z_unit = np.asarray(z_unit, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (z_unit.shape[0], bank.count):
        raise ContractError(
            f"q must be {z_unit.shape[0]}x{bank.count}, got {q.shape}"
        )
    if z_unit.shape[0] == 0:
        return bank
    winners = np.ascontiguousarray(q.argmax(axis=1))
    ema_update_rows(bank.vectors, np.ascontiguousarray(z_unit), winners,
                    float(bank.gamma))
    return bank


def assign_pseudo_labels(z_unit, bank, new_class_range):
    """Label each row with its most-similar new-class prototype (absolute id).

    ``new_class_range`` is the contiguous range of new class ids; ties break
    to the lowest index.
    """
    ids = list(new_class_range)
    if not ids:
        raise ContractError("new class range is empty")
    z_unit = np.asarray(z_unit, dtype=np.float64)
    protos = bank.vectors[ids[0]: ids[-1] + 1]
    sims = z_unit @ protos.T
    return ids[0] + sims.argmax(axis=1)
