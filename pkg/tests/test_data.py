import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgid.data import (
    LabeledCorpus,
    build_cgid_split,
    export_corpus,
    generate_mixture_corpus,
    load_embedding_corpus,
    near_equal_partition,
)
from cgid.errors import ConfigurationError, IngestionError


def nearest_mean_accuracy(corpus):
    train_x, train_y = corpus.subset("train")
    test_x, test_y = corpus.subset("test")
    means = np.stack([train_x[train_y == c].mean(axis=0)
                      for c in range(corpus.num_classes)])
    d2 = ((test_x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return (d2.argmin(axis=1) == test_y).mean()


def test_generated_corpus_is_nearest_mean_separable():
    corpus = generate_mixture_corpus(2, 4, (30, 10, 50), class_separation=100.0,
                                     within_class_std=1.0, seed=0)
    assert nearest_mean_accuracy(corpus) >= 0.99


def test_generated_corpus_counts():
    corpus = generate_mixture_corpus(2, 3, (10, 5, 5), class_separation=5.0,
                                     within_class_std=1.0, seed=1)
    assert (corpus.split == 0).sum() == 20
    assert (corpus.split == 1).sum() == 10
    assert (corpus.split == 2).sum() == 10


def test_generated_corpus_deterministic():
    kwargs = dict(num_classes=3, dim=4, samples_per_class=(5, 2, 3),
                  class_separation=4.0, within_class_std=1.0, seed=7)
    assert generate_mixture_corpus(**kwargs).equal(
        generate_mixture_corpus(**kwargs))


def test_generated_corpus_min_mean_distance():
    std = 0.5
    sep = 8.0
    corpus = generate_mixture_corpus(5, 6, (20, 5, 5), class_separation=sep,
                                     within_class_std=std, seed=3)
    train_x, train_y = corpus.subset("train")
    means = np.stack([train_x[train_y == c].mean(axis=0) for c in range(5)])
    dists = np.linalg.norm(means[:, None] - means[None, :], axis=2)
    off_diag = dists[np.triu_indices(5, k=1)]
    # empirical means sit close to the true means, which are >= sep*std apart
    assert off_diag.min() > 0.8 * sep * std


def test_generator_rejects_bad_config():
    with pytest.raises(ConfigurationError):
        generate_mixture_corpus(1, 4, (5, 5, 5), 2.0, 1.0, 0)
    with pytest.raises(ConfigurationError):
        generate_mixture_corpus(3, 1, (5, 5, 5), 2.0, 1.0, 0)
    with pytest.raises(ConfigurationError):
        generate_mixture_corpus(3, 4, (5, 5, 5), -1.0, 1.0, 0)


def test_export_load_round_trip(tmp_path):
    corpus = generate_mixture_corpus(3, 4, (6, 2, 2), class_separation=4.0,
                                     within_class_std=1.0, seed=11)
    path = tmp_path / "corpus.tsv"
    export_corpus(corpus, path)
    assert load_embedding_corpus(path).equal(corpus)


def test_load_small_handwritten_file(tmp_path):
    path = tmp_path / "tiny.tsv"
    path.write_text(
        "train\t5\t0.5 1.0 2.0\n"
        "val\t5\t0.0 0.0 1.0\n"
        "test\t5\t1.0 1.0 1.0\n"
        "train\t9\t2.0 0.5 0.0\n"
        "val\t9\t0.1 0.2 0.3\n"
        "test\t9\t3.0 3.0 3.0\n"
    )
    corpus = load_embedding_corpus(path)
    assert corpus.num_classes == 2
    assert len(corpus.labels) == 6
    assert corpus.dim == 3
    # labels re-indexed by first appearance: 5 -> 0, 9 -> 1
    np.testing.assert_array_equal(corpus.labels, [0, 0, 0, 1, 1, 1])


def test_load_rejects_class_missing_from_split(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text(
        "train\t0\t1.0 2.0\n"
        "val\t0\t1.0 2.0\n"
        "test\t0\t1.0 2.0\n"
        "train\t1\t3.0 4.0\n"
        "val\t1\t3.0 4.0\n"
    )
    with pytest.raises(IngestionError, match="missing from split 'test'"):
        load_embedding_corpus(path)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("train\t0\t1.0 2.0\ntrain\t1\t1.0\n")
    with pytest.raises(IngestionError, match="line 2"):
        load_embedding_corpus(path)
    path.write_text("train\t0\t1.0 2.0\nnope\t1\t1.0 2.0\n")
    with pytest.raises(IngestionError, match="line 2"):
        load_embedding_corpus(path)


@pytest.fixture(scope="module")
def corpus20():
    return generate_mixture_corpus(20, 6, (8, 3, 4), class_separation=4.0,
                                   within_class_std=1.0, seed=5)


def test_split_stage_class_counts(corpus20):
    split = build_cgid_split(corpus20, 0.6, 3, seed=0)
    assert [len(s) for s in split.class_sets] == [8, 4, 4, 4]


def test_published_stage_tables():
    # 77 classes at 60% over 3 stages -> 32/15/15/15
    corpus = LabeledCorpus(
        features=np.zeros((77 * 3, 2)),
        labels=np.repeat(np.arange(77), 3),
        split=np.tile(np.array([0, 1, 2], dtype=np.int8), 77),
    )
    split = build_cgid_split(corpus, 0.6, 3, seed=1)
    assert [len(s) for s in split.class_sets] == [32, 15, 15, 15]
    # 150 classes at 80% -> 30/40/40/40
    corpus = LabeledCorpus(
        features=np.zeros((150 * 3, 2)),
        labels=np.repeat(np.arange(150), 3),
        split=np.tile(np.array([0, 1, 2], dtype=np.int8), 150),
    )
    split = build_cgid_split(corpus, 0.8, 3, seed=1)
    assert [len(s) for s in split.class_sets] == [30, 40, 40, 40]


def test_split_rounding_rule_small():
    corpus = LabeledCorpus(
        features=np.zeros((10 * 3, 2)),
        labels=np.repeat(np.arange(10), 3),
        split=np.tile(np.array([0, 1, 2], dtype=np.int8), 10),
    )
    split = build_cgid_split(corpus, 0.4, 2, seed=0)
    assert [len(s) for s in split.class_sets] == [6, 2, 2]


def test_split_rejects_bad_ratio(corpus20):
    for ratio in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            build_cgid_split(corpus20, ratio, 3, seed=0)


def test_split_class_sets_disjoint_and_contiguous(corpus20):
    split = build_cgid_split(corpus20, 0.6, 3, seed=3)
    seen = set()
    for s in split.class_sets:
        assert not seen & set(s)
        seen |= set(s)
    assert sorted(seen) == list(range(20))
    flat = [c for s in split.class_sets for c in s]
    assert flat == list(range(20))


def test_split_training_path_has_no_ood_labels(corpus20):
    split = build_cgid_split(corpus20, 0.6, 3, seed=3)
    for t in range(1, 4):
        assert isinstance(split.ood_train[t], np.ndarray)
        assert split.ood_train[t].ndim == 2  # features only
    assert not split.sealed.was_opened
    view = split.sealed.open("evaluation")
    assert split.sealed.audit_log == ["evaluation"]
    for t in range(1, 4):
        x, y = view["test"][t]
        assert len(x) == len(y)
        assert set(np.unique(y)) == set(split.class_sets[t])


def test_split_stage_train_covers_only_stage_classes(corpus20):
    split = build_cgid_split(corpus20, 0.6, 3, seed=9)
    view = split.sealed.open("test-inspection")
    for t in range(1, 4):
        labels = view["ood_train_labels"][t]
        assert set(np.unique(labels)) <= set(split.class_sets[t])
        assert len(labels) == len(split.ood_train[t])


def test_split_deterministic(corpus20):
    a = build_cgid_split(corpus20, 0.6, 3, seed=4)
    b = build_cgid_split(corpus20, 0.6, 3, seed=4)
    assert a.class_sets == b.class_sets
    assert a.original_classes == b.original_classes
    np.testing.assert_array_equal(a.ind_train[0], b.ind_train[0])


@given(st.integers(min_value=0, max_value=500), st.integers(min_value=1, max_value=9))
@settings(deadline=None)
def test_near_equal_partition_properties(total, parts):
    sizes = near_equal_partition(total, parts)
    assert sum(sizes) == total
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)
