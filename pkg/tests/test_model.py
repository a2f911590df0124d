import numpy as np
import pytest

from cgid.errors import ContractError
from cgid.memory import ReplayMemory
from cgid.model import JointModel, load_checkpoint, save_checkpoint
from cgid.network import init_encoder
from cgid.prototypes import PrototypeBank


def make_model(num_initial=3, seed=0):
    enc = init_encoder(4, [6], 5, 3, seed=seed)
    return JointModel.create(enc, num_initial, seed=seed)


def test_create_and_logit_dim():
    model = make_model(3)
    assert model.old_size == 0
    assert model.new_size == 3
    assert model.logit_dim == 3


def test_merge_then_expand_grows_head():
    model = make_model(5)
    model.merge_heads()
    assert model.old_size == 5 and model.new_size == 0
    model.expand_classifier(3, seed=1)
    assert model.logit_dim == 8


def test_expand_by_zero_is_noop():
    model = make_model(2)
    model.merge_heads()
    w = model.cls_w_old.copy()
    model.expand_classifier(0, seed=1)
    assert model.new_size == 0
    np.testing.assert_array_equal(model.cls_w_old, w)


def test_expand_requires_merged_block():
    model = make_model(2)
    with pytest.raises(ContractError):
        model.expand_classifier(2, seed=0)


def test_old_block_logits_preserved_across_expand():
    model = make_model(4, seed=3)
    x = np.random.default_rng(0).normal(size=(6, 4))
    model.merge_heads()
    feats, _, _, _ = model.forward(x)
    before = model.old_logits(feats)
    model.expand_classifier(3, seed=9)
    after = model.old_logits(feats)
    np.testing.assert_array_equal(before, after)
    full = model.logits(feats)
    np.testing.assert_array_equal(full[:, :4], before)


def test_frozen_snapshot_is_independent_copy():
    model = make_model(2)
    model.snapshot_frozen()
    assert model.frozen_encoder.equal(model.encoder)
    model.encoder.feat_w += 1.0
    assert not model.frozen_encoder.equal(model.encoder)


def test_checkpoint_round_trip(tmp_path):
    model = make_model(3, seed=5)
    model.merge_heads()
    model.expand_classifier(2, seed=6)
    memory = ReplayMemory(capacity=4)
    memory.add_class(0, np.random.default_rng(0).normal(size=(2, 4)))
    memory.add_class(2, np.random.default_rng(1).normal(size=(4, 4)))
    bank = PrototypeBank(vectors=np.eye(3), gamma=0.9)
    acc = np.full((3, 3), np.nan)
    acc[0, 0] = 0.5
    path = tmp_path / "stage1.npz"
    save_checkpoint(path, model, memory, bank, stage=1, acc_values=acc,
                    class_sizes=[3, 2], config_json='{"method": "plrd"}')

    model2, mem2, bank2, stage, acc2, sizes, cfg = load_checkpoint(path)
    assert stage == 1
    assert sizes == [3, 2]
    assert cfg == {"method": "plrd"}
    assert model2.encoder.equal(model.encoder)
    np.testing.assert_array_equal(model2.cls_w_old, model.cls_w_old)
    np.testing.assert_array_equal(model2.cls_w_new, model.cls_w_new)
    assert mem2.capacity == 4 and mem2.classes == [0, 2]
    np.testing.assert_array_equal(mem2.store[2], memory.store[2])
    np.testing.assert_array_equal(bank2.vectors, bank.vectors)
    assert bank2.gamma == 0.9
    np.testing.assert_array_equal(acc2[0, 0], 0.5)


def test_checkpoint_version_guard(tmp_path):
    model = make_model(2)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, model, ReplayMemory(capacity=1),
                    PrototypeBank(np.eye(2), 0.7), 0,
                    np.zeros((1, 1)), [2])
    data = dict(np.load(path))
    data["format_version"] = np.array([99])
    np.savez(path, **data)
    with pytest.raises(ContractError):
        load_checkpoint(path)
