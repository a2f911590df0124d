"""Per-class replay memory: exemplar selection and mixed-batch assembly."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError

log = logging.getLogger(__name__)

STRATEGIES = ("random", "icarl", "icarl_contrary")


@dataclass
class ReplayMemory:
    """At most ``capacity`` stored input rows per known class."""

    capacity: int
    store: dict = field(default_factory=dict)  # class id -> (m, d) rows

    def add_class(self, label, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ContractError("stored rows must be 2-D")
        if len(rows) > self.capacity:
            raise ContractError(
                f"{len(rows)} rows exceed per-class capacity {self.capacity}"
            )
        self.store[int(label)] = rows

    @property
    def classes(self):
        return sorted(self.store)

    @property
    def total(self):
        return sum(len(v) for v in self.store.values())

    def flatten(self):
        """All stored rows with their labels, in ascending class order."""
        if not self.store:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64)
        xs, ys = [], []
        for c in self.classes:
            xs.append(self.store[c])
            ys.append(np.full(len(self.store[c]), c, dtype=np.int64))
        return np.vstack(xs), np.concatenate(ys)

    def validate(self, known_classes):
        for c, rows in self.store.items():
            if len(rows) > self.capacity:
                raise ContractError(f"class {c} holds {len(rows)} > n rows")
            if c >= known_classes:
                raise ContractError(
                    f"memory label {c} >= known class count {known_classes}"
                )
        return True


def memory_select(features, labels, n, strategy="random", prototypes=None,
                  seed=0, store_rows=None):
    """Choose up to ``n`` exemplars per class and return {class: rows}.

    ``features`` drives the selection (cosine ranking for the icarl
    strategies); ``store_rows`` (defaulting to ``features``) supplies what is
    actually kept, letting callers rank in projection space while storing raw
    inputs. Classes with fewer than n samples contribute everything.
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown selection strategy {strategy!r}")
    if n < 0:
        raise ConfigurationError("n must be non-negative")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if store_rows is None:
        store_rows = features
    store_rows = np.asarray(store_rows, dtype=np.float64)
    if strategy != "random" and prototypes is None:
        raise ConfigurationError(f"strategy {strategy!r} requires prototypes")
    selected = {}
    if n == 0:
        return selected
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x3E]))
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) <= n:
            take = idx
        elif strategy == "random":
            take = np.sort(rng.choice(idx, size=n, replace=False))
        else:
            proto = np.asarray(prototypes[int(c)], dtype=np.float64)
            feats = features[idx]
            norms = np.linalg.norm(feats, axis=1) * np.linalg.norm(proto)
            norms = np.where(norms > 0, norms, 1.0)
            sims = feats @ proto / norms
            order = np.argsort(-sims if strategy == "icarl" else sims,
                               kind="stable")
            take = idx[order[:n]]
        selected[int(c)] = store_rows[take]
    return selected


def assemble_batch(new_rows, memory, rng):
    """Mix a new-sample batch with an equal count of replayed old samples.

    Old rows are drawn uniformly with replacement from the flattened memory.
    Returns (rows, is_old mask, old_labels with -1 on new rows). An empty
    memory degrades to a new-only batch with a logged warning.
    """
    new_rows = np.asarray(new_rows, dtype=np.float64)
    b = len(new_rows)
    if memory is None or memory.total == 0:
        if b == 0:
            raise ContractError("cannot assemble an empty batch")
        log.warning("replay memory is empty; batch contains new samples only")
        return (new_rows, np.zeros(b, dtype=bool),
                np.full(b, -1, dtype=np.int64))
    flat_x, flat_y = memory.flatten()
    pick = rng.integers(0, len(flat_y), size=b)
    rows = np.vstack([new_rows, flat_x[pick]])
    is_old = np.concatenate([np.zeros(b, dtype=bool), np.ones(b, dtype=bool)])
    old_labels = np.concatenate([np.full(b, -1, dtype=np.int64), flat_y[pick]])
    return rows, is_old, old_labels
