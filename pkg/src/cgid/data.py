"""Corpus generation/ingestion and staged split construction.

A corpus holds feature rows with integer class labels and a train/val/test
tag per row. A staged split carves the corpus into one labeled in-domain
stage plus T unlabeled out-of-domain stages; ground-truth labels for the OOD
stages live behind a sealed, audit-logged accessor so nothing on the training
path can touch them.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IngestionError

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "validation": 1, "test": 2}


@dataclass
class LabeledCorpus:
    features: np.ndarray  # (N, d) float64
    labels: np.ndarray  # (N,) int64, contiguous 0..C-1
    split: np.ndarray  # (N,) int8 codes into SPLITS

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def dim(self):
        return self.features.shape[1]

    def rows(self, split=None, classes=None):
        """Boolean row mask for a split name and/or a class collection."""
        mask = np.ones(len(self.labels), dtype=bool)
        if split is not None:
            mask &= self.split == _SPLIT_CODE[split]
        if classes is not None:
            mask &= np.isin(self.labels, np.asarray(list(classes)))
        return mask

    def subset(self, split=None, classes=None):
        mask = self.rows(split, classes)
        return self.features[mask], self.labels[mask]

    def validate(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise IngestionError("features and labels disagree on row count")
        if len(self.labels):
            present = np.unique(self.labels)
            if present[0] != 0 or present[-1] != len(present) - 1:
                raise IngestionError("labels must be contiguous 0..C-1")
            for name in SPLITS:
                covered = np.unique(self.labels[self.split == _SPLIT_CODE[name]])
                if len(covered) != len(present):
                    missing = sorted(set(present) - set(covered))
                    raise IngestionError(
                        f"class(es) {missing} missing from split {name!r}"
                    )
        return self

    def equal(self, other):
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
        )


def generate_mixture_corpus(num_classes, dim, samples_per_class,
                            class_separation, within_class_std, seed):
    """Sample an isotropic Gaussian mixture corpus.

    Class means are a random configuration rescaled so the minimum pairwise
    mean distance equals ``class_separation * within_class_std``;
    ``samples_per_class`` is a (train, val, test) triple.
    """
    if num_classes < 2:
        raise ConfigurationError("need at least 2 classes")
    if dim < 2:
        raise ConfigurationError("need dim >= 2")
    if class_separation <= 0:
        raise ConfigurationError("class_separation must be positive")
    if within_class_std <= 0:
        raise ConfigurationError("within_class_std must be positive")
    n_train, n_val, n_test = samples_per_class
    if min(n_train, n_val, n_test) < 1:
        raise ConfigurationError("every split needs at least one sample per class")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0]))
    means = rng.normal(size=(num_classes, dim))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs * diffs).sum(axis=2))
    min_dist = dist[np.triu_indices(num_classes, k=1)].min()
    if min_dist == 0.0:
        raise ConfigurationError(
            "degenerate mean configuration; separation request infeasible"
        )
    means *= class_separation * within_class_std / min_dist

    per_class = n_train + n_val + n_test
    feats = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    split = np.empty(num_classes * per_class, dtype=np.int8)
    tags = np.concatenate([
        np.zeros(n_train, dtype=np.int8),
        np.ones(n_val, dtype=np.int8),
        np.full(n_test, 2, dtype=np.int8),
    ])
    for c in range(num_classes):
        lo = c * per_class
        feats[lo:lo + per_class] = (
            means[c] + within_class_std * rng.normal(size=(per_class, dim))
        )
        labels[lo:lo + per_class] = c
        split[lo:lo + per_class] = tags
    return LabeledCorpus(feats, labels, split).validate()


def export_corpus(corpus, path):
    """Write the tab-separated embedding format: split, label, floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(corpus.labels)):
            floats = " ".join(repr(float(v)) for v in corpus.features[i])
            fh.write(f"{SPLITS[corpus.split[i]]}\t{corpus.labels[i]}\t{floats}\n")


def load_embedding_corpus(path):
    """Parse the embedding file format back into a corpus.

    Labels are re-indexed to 0..C-1 in order of first appearance. Malformed
    rows raise with their line number.
    """
    feats, raw_labels, split = [], [], []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise IngestionError(
                    f"expected 3 tab-separated fields, got {len(parts)}", lineno
                )
            tag, label_s, floats_s = parts
            if tag not in _SPLIT_CODE:
                raise IngestionError(f"unknown split tag {tag!r}", lineno)
            try:
                label = int(label_s)
            except ValueError:
                raise IngestionError(f"bad label {label_s!r}", lineno) from None
            try:
                row = [float(v) for v in floats_s.split()]
            except ValueError:
                raise IngestionError("unparseable feature value", lineno) from None
            if not row:
                raise IngestionError("empty feature vector", lineno)
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise IngestionError(
                    f"feature dim {len(row)} differs from first row ({dim})", lineno
                )
            feats.append(row)
            raw_labels.append(label)
            split.append(_SPLIT_CODE[tag])
    if not feats:
        raise IngestionError("file contains no samples")
    remap = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        if lab not in remap:
            remap[lab] = len(remap)
        labels[i] = remap[lab]
    corpus = LabeledCorpus(
        np.asarray(feats, dtype=np.float64), labels,
        np.asarray(split, dtype=np.int8),
    )
    return corpus.validate()


@dataclass
class SealedEvalData:
    """Ground-truth labels reachable only through an audited accessor."""

    _test: dict  # stage -> (X, y) with protocol labels
    _ood_train_labels: dict  # stage -> y for the stage's unlabeled train rows
    _ood_val: dict  # stage -> (X, y)
    audit_log: list = field(default_factory=list)

    def open(self, purpose):
        """Record the access and hand back the labeled compartments."""
        self.audit_log.append(str(purpose))
        return {
            "test": self._test,
            "ood_train_labels": self._ood_train_labels,
            "ood_val": self._ood_val,
        }

    @property
    def was_opened(self):
        return bool(self.audit_log)


@dataclass
class StagedSplit:
    """One labeled IND stage plus T unlabeled OOD stages."""

    class_sets: list  # per stage, list of protocol class ids
    original_classes: list  # per stage, the corpus class ids backing each set
    ind_train: tuple  # (X, y)
    ind_val: tuple  # (X, y)
    ood_train: dict  # stage -> X (no labels on the training path)
    ood_val: dict  # stage -> X
    sealed: SealedEvalData
    ood_ratio: float
    seed: int

    @property
    def num_stages(self):
        return len(self.class_sets) - 1

    def stage_size(self, t):
        return len(self.class_sets[t])

    def classes_through(self, t):
        return [c for s in self.class_sets[: t + 1] for c in s]

    def num_classes_through(self, t):
        return sum(len(s) for s in self.class_sets[: t + 1])


def near_equal_partition(total, parts):
    """Split ``total`` into ``parts`` near-equal counts, remainder first."""
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def build_cgid_split(corpus, ood_ratio, num_stages, seed):
    """Randomly assign classes to the IND stage and T equal OOD stages.

    The per-stage OOD class count is floor(ood_ratio * C / T), which
    reproduces the published stage tables for 77- and 150-class corpora; the
    in-domain set keeps the remaining classes. Protocol class ids are
    contiguous blocks: IND first, then each stage in order.
    """
    if not 0.0 < ood_ratio < 1.0:
        raise ConfigurationError(f"ood_ratio must be in (0, 1), got {ood_ratio}")
    if num_stages < 1:
        raise ConfigurationError("need at least one OOD stage")
    c = corpus.num_classes
    stage_size = int(np.floor(ood_ratio * c / num_stages))
    if stage_size < 1:
        raise ConfigurationError(
            f"ood_ratio {ood_ratio} with {c} classes and {num_stages} stages "
            "leaves an empty stage"
        )
    ood_total = stage_size * num_stages
    ind_count = c - ood_total
    if ind_count < 1:
        raise ConfigurationError("no classes left for the in-domain stage")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F]))
    perm = rng.permutation(c)
    sizes = [ind_count] + near_equal_partition(ood_total, num_stages)
    original, class_sets, start = [], [], 0
    next_id = 0
    to_protocol = np.empty(c, dtype=np.int64)
    for size in sizes:
        block = [int(v) for v in perm[start:start + size]]
        original.append(block)
        ids = list(range(next_id, next_id + size))
        class_sets.append(ids)
        for orig in block:
            to_protocol[orig] = next_id
            next_id += 1
        start += size

    def take(split_name, stage):
        mask = corpus.rows(split_name, original[stage])
        return corpus.features[mask], to_protocol[corpus.labels[mask]]

    ind_train = take("train", 0)
    ind_val = take("val", 0)
    ood_train, ood_val_X, test = {}, {}, {}
    ood_train_labels, ood_val = {}, {}
    test[0] = take("test", 0)
    for t in range(1, num_stages + 1):
        x, y = take("train", t)
        ood_train[t] = x
        ood_train_labels[t] = y
        vx, vy = take("val", t)
        ood_val_X[t] = vx
        ood_val[t] = (vx, vy)
        test[t] = take("test", t)

    sealed = SealedEvalData(_test=test, _ood_train_labels=ood_train_labels,
                            _ood_val=ood_val)
    return StagedSplit(
        class_sets=class_sets,
        original_classes=original,
        ind_train=ind_train,
        ind_val=ind_val,
        ood_train=ood_train,
        ood_val=ood_val_X,
        sealed=sealed,
        ood_ratio=ood_ratio,
        seed=int(seed),
    )
