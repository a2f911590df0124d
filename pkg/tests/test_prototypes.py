import numpy as np
import pytest

from cgid.errors import ContractError
from cgid.network import l2_normalize
from cgid.prototypes import (
    PrototypeBank,
    assign_pseudo_labels,
    compute_q,
    empty_bank,
    update_prototypes,
)

from helpers import unit_rows


def bank_of(rows, gamma=0.7):
    return PrototypeBank(vectors=l2_normalize(np.asarray(rows, dtype=float)),
                         gamma=gamma)


def test_compute_q_old_one_hot():
    q = compute_q(np.array([True]), np.array([2]), None, num_old=4, num_new=3)
    np.testing.assert_array_equal(q[0], [0, 0, 1, 0, 0, 0, 0])


def test_compute_q_new_uniform_logits():
    is_old = np.array([False, False, False])
    q = compute_q(is_old, np.full(3, -1), np.zeros((3, 2)), num_old=2,
                  num_new=2)
    np.testing.assert_allclose(q[:, :2], 0.0, atol=0)
    np.testing.assert_allclose(q[:, 2:], 0.5, atol=1e-12)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_compute_q_new_block_matches_hand_sinkhorn():
    m, eps = 0.4, 0.05
    r = np.exp(-m / eps)
    is_old = np.array([False, False])
    q = compute_q(is_old, np.full(2, -1), m * np.eye(2), num_old=1, num_new=2,
                  epsilon=eps, iterations=3)
    want = np.array([[1 / (1 + r), r / (1 + r)], [r / (1 + r), 1 / (1 + r)]])
    np.testing.assert_allclose(q[:, 1:], want, atol=1e-12)
    np.testing.assert_array_equal(q[:, 0], [0.0, 0.0])


def test_compute_q_mixed_batch_structure():
    is_old = np.array([True, False, True, False])
    old_labels = np.array([0, -1, 3, -1])
    new_logits = np.random.default_rng(0).normal(size=(2, 2))
    q = compute_q(is_old, old_labels, new_logits, num_old=4, num_new=2)
    assert q.shape == (4, 6)
    np.testing.assert_array_equal(q[0], [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(q[2], [0, 0, 0, 1, 0, 0])
    assert (q[[1, 3]][:, :4] == 0).all()
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_compute_q_missing_old_label_rejected():
    with pytest.raises(ContractError):
        compute_q(np.array([True]), np.array([-1]), None, 3, 2)


def test_update_gamma_one_keeps_bank():
    bank = bank_of([[1.0, 0.0], [0.0, 1.0]], gamma=1.0)
    before = bank.vectors.copy()
    z = unit_rows(np.random.default_rng(0), 3, 2)
    q = np.tile([0.2, 0.8], (3, 1))
    update_prototypes(bank, z, q)
    np.testing.assert_allclose(bank.vectors, before, atol=1e-12)


def test_update_gamma_zero_overwrites():
    bank = bank_of([[1.0, 0.0]], gamma=0.0)
    z = np.array([[0.0, 1.0]])
    update_prototypes(bank, z, np.array([[1.0]]))
    np.testing.assert_allclose(bank.vectors[0], [0.0, 1.0], atol=1e-12)


def test_update_two_step_hand_recurrence():
    gamma = 0.7
    bank = bank_of([[1.0, 0.0]], gamma=gamma)
    z1 = l2_normalize(np.array([0.5, 0.5]))
    z2 = l2_normalize(np.array([-0.2, 1.0]))
    mu = np.array([1.0, 0.0])
    mu = l2_normalize(gamma * mu + (1 - gamma) * z1)
    mu = l2_normalize(gamma * mu + (1 - gamma) * z2)
    update_prototypes(bank, np.vstack([z1, z2]), np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(bank.vectors[0], mu, atol=1e-12)


def test_update_prototypes_stay_unit_norm():
    rng = np.random.default_rng(5)
    bank = bank_of(rng.normal(size=(4, 3)), gamma=0.7)
    z = unit_rows(rng, 10, 3)
    q = np.abs(rng.normal(size=(10, 4)))
    q /= q.sum(axis=1, keepdims=True)
    update_prototypes(bank, z, q)
    np.testing.assert_allclose(np.linalg.norm(bank.vectors, axis=1),
                               np.ones(4), atol=1e-12)


def test_update_argmax_tie_breaks_low_index():
    bank = bank_of([[1.0, 0.0], [0.0, 1.0]], gamma=0.0)
    z = np.array([[0.6, 0.8]])
    q = np.array([[0.5, 0.5]])  # tie -> prototype 0
    update_prototypes(bank, z, q)
    np.testing.assert_allclose(bank.vectors[0], [0.6, 0.8], atol=1e-12)
    np.testing.assert_allclose(bank.vectors[1], [0.0, 1.0], atol=1e-12)


def test_assign_exact_prototype_match():
    bank = bank_of([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    labels = assign_pseudo_labels(np.array([[0.0, 1.0]]), bank, range(1, 3))
    assert labels.tolist() == [1]


def test_assign_tie_goes_to_lowest_new_index():
    bank = bank_of([[1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0]])
    z = l2_normalize(np.array([[0.0, 1.0, 1.0]]))
    labels = assign_pseudo_labels(z, bank, range(1, 3))
    assert labels.tolist() == [1]


def test_assign_matches_exhaustive_search():
    rng = np.random.default_rng(9)
    bank = bank_of(rng.normal(size=(5, 4)))
    z = unit_rows(rng, 10, 4)
    labels = assign_pseudo_labels(z, bank, range(2, 5))
    sims = z @ bank.vectors[2:5].T
    np.testing.assert_array_equal(labels, 2 + sims.argmax(axis=1))


def test_assign_scale_invariance():
    rng = np.random.default_rng(11)
    bank = bank_of(rng.normal(size=(4, 3)))
    z = unit_rows(rng, 6, 3)
    a = assign_pseudo_labels(z, bank, range(0, 4))
    b = assign_pseudo_labels(3.7 * z, bank, range(0, 4))
    np.testing.assert_array_equal(a, b)


def test_empty_bank_grows():
    bank = empty_bank(3, gamma=0.7)
    bank.append_random(2, np.random.default_rng(0))
    assert bank.count == 2
    np.testing.assert_allclose(np.linalg.norm(bank.vectors, axis=1),
                               np.ones(2), atol=1e-12)
