import math

import numpy as np
import pytest

from cgid.errors import ConfigurationError, ContractError
from cgid.losses import (
    cross_entropy,
    feature_distill_loss,
    instance_cl_loss,
    pcl_loss,
    softmax,
)

from helpers import central_difference, assert_grads_close, unit_rows


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = softmax(rng.normal(size=(6, 4)))
    np.testing.assert_allclose(p.sum(axis=1), np.ones(6), atol=1e-12)


def test_cross_entropy_hard_label_scalar():
    logits = np.array([[2.0, 0.0]])
    loss, _ = cross_entropy(logits, np.array([0]))
    assert loss == pytest.approx(math.log(1 + math.exp(-2.0)), abs=1e-12)


def test_cross_entropy_weights_scale_terms():
    logits = np.random.default_rng(1).normal(size=(4, 3))
    labels = np.array([0, 1, 2, 1])
    base, _ = cross_entropy(logits, labels)
    weighted, _ = cross_entropy(logits, labels, weights=np.full(4, 3.0))
    assert weighted == pytest.approx(3.0 * base, rel=1e-12)
    zeroed, _ = cross_entropy(logits, labels, weights=np.zeros(4))
    assert zeroed == 0.0


@pytest.mark.parametrize("temperature", [1.0, 0.1])
@pytest.mark.parametrize("soft", [False, True])
def test_cross_entropy_gradient(temperature, soft):
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(5, 4))
    if soft:
        targets = softmax(rng.normal(size=(5, 4)))
    else:
        targets = rng.integers(0, 4, size=5)
    weights = rng.uniform(0.5, 2.0, size=5)

    def loss():
        return cross_entropy(logits, targets, temperature=temperature,
                             weights=weights)[0]

    _, grad = cross_entropy(logits, targets, temperature=temperature,
                            weights=weights)
    fd = central_difference(loss, logits)
    assert_grads_close(grad, fd, context=f"ce T={temperature} soft={soft}")


def test_pcl_single_prototype_is_zero_loss():
    z = unit_rows(np.random.default_rng(0), 3, 4)
    protos = unit_rows(np.random.default_rng(1), 1, 4)
    q = np.ones((3, 1))
    loss, _ = pcl_loss(z, protos, q, tau=0.5)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_pcl_two_orthogonal_prototypes_scalar():
    protos = np.array([[1.0, 0.0], [0.0, 1.0]])
    z = np.array([[1.0, 0.0]])
    q = np.array([[1.0, 0.0]])
    loss, _ = pcl_loss(z, protos, q, tau=1.0)
    assert loss == pytest.approx(math.log(1 + math.exp(-1.0)), abs=1e-12)


def test_pcl_rejects_bad_tau():
    z = np.eye(2)
    with pytest.raises(ConfigurationError):
        pcl_loss(z, z, np.eye(2), tau=0.0)


def test_pcl_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    z = unit_rows(rng, 4, 3)
    protos = unit_rows(rng, 3, 3)
    q = softmax(rng.normal(size=(4, 3)))

    def loss():
        return pcl_loss(z, protos, q, tau=0.5)[0]

    _, grad = pcl_loss(z, protos, q, tau=0.5)
    fd = central_difference(loss, z)
    assert_grads_close(grad, fd, context="pcl dz")


def test_instance_loss_orthogonal_pair_scalar():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _, _ = instance_cl_loss(z, z.copy(), tau=1.0)
    assert loss == pytest.approx(-2.0, abs=1e-12)


def test_instance_loss_depends_only_on_cosines():
    rng = np.random.default_rng(5)
    z = unit_rows(rng, 5, 3)
    za = unit_rows(rng, 5, 3)
    loss1, _, _ = instance_cl_loss(z, za, tau=0.5)
    # rigid rotation preserves all cosines
    theta = 0.3
    rot = np.array([
        [np.cos(theta), -np.sin(theta), 0.0],
        [np.sin(theta), np.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ])
    loss2, _, _ = instance_cl_loss(z @ rot.T, za @ rot.T, tau=0.5)
    assert loss2 == pytest.approx(loss1, rel=1e-12)


def test_instance_loss_batch_of_one_rejected():
    z = np.array([[1.0, 0.0]])
    with pytest.raises(ContractError):
        instance_cl_loss(z, z, tau=0.5)


def test_instance_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    z = unit_rows(rng, 4, 3)
    za = unit_rows(rng, 4, 3)

    def loss():
        return instance_cl_loss(z, za, tau=0.5)[0]

    _, dz, dza = instance_cl_loss(z, za, tau=0.5)
    assert_grads_close(dz, central_difference(loss, z), context="ins dz")
    assert_grads_close(dza, central_difference(loss, za), context="ins dz_aug")


def test_feature_distill_identical_is_zero():
    f = np.random.default_rng(0).normal(size=(3, 4))
    loss, grad = feature_distill_loss(f, f.copy())
    assert loss == 0.0
    assert not grad.any()


def test_feature_distill_scalar_identity():
    loss, grad = feature_distill_loss(np.array([[4.0]]), np.array([[1.0]]))
    assert loss == pytest.approx(9.0, abs=1e-15)
    assert grad[0, 0] == pytest.approx(6.0, abs=1e-15)


def test_feature_distill_shape_mismatch():
    with pytest.raises(ContractError):
        feature_distill_loss(np.zeros((2, 2)), np.zeros((3, 2)))


def test_feature_distill_gradient():
    rng = np.random.default_rng(17)
    f = rng.normal(size=(4, 3))
    f0 = rng.normal(size=(4, 3))

    def loss():
        return feature_distill_loss(f, f0)[0]

    _, grad = feature_distill_loss(f, f0)
    assert_grads_close(grad, central_difference(loss, f), context="fd")
