"""Joint classifier over a growing label set, plus stage checkpointing.

The classifier head is partitioned into an old block (already-merged classes)
and a new block (classes being learned this stage). Merging moves the new
block into the old one; expansion creates a fresh new block and must leave
old-block logits bit-identical.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .network import EncoderParams, _uniform_init, encoder_forward
from .memory import ReplayMemory
from .prototypes import PrototypeBank

CHECKPOINT_VERSION = 1


@dataclass
class JointModel:
    encoder: EncoderParams
    cls_w_old: np.ndarray
    cls_b_old: np.ndarray
    cls_w_new: np.ndarray
    cls_b_new: np.ndarray
    frozen_encoder: EncoderParams = None

    @classmethod
    def create(cls, encoder, num_initial, seed):
        d = encoder.feature_dim
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xAD]))
        return cls(
            encoder=encoder,
            cls_w_old=np.empty((d, 0)),
            cls_b_old=np.empty(0),
            cls_w_new=_uniform_init(rng, d, num_initial),
            cls_b_new=np.zeros(num_initial),
        )

    @property
    def old_size(self):
        return self.cls_w_old.shape[1]

    @property
    def new_size(self):
        return self.cls_w_new.shape[1]

    @property
    def logit_dim(self):
        return self.old_size + self.new_size

    def logits(self, features):
        return np.hstack([
            features @ self.cls_w_old + self.cls_b_old,
            features @ self.cls_w_new + self.cls_b_new,
        ])

    def old_logits(self, features):
        return features @ self.cls_w_old + self.cls_b_old

    def forward(self, batch, dropout_prob=0.0, rng_seed=0):
        feats, projs, cache = encoder_forward(self.encoder, batch,
                                              dropout_prob, rng_seed)
        return feats, projs, cache, self.logits(feats)

    def classifier_grads(self, features, d_logits):
        o = self.old_size
        return {
            "cls_w_old": features.T @ d_logits[:, :o],
            "cls_b_old": d_logits[:, :o].sum(axis=0),
            "cls_w_new": features.T @ d_logits[:, o:],
            "cls_b_new": d_logits[:, o:].sum(axis=0),
        }

    def trainable_params(self):
        params = dict(self.encoder.param_items())
        params["cls_w_old"] = self.cls_w_old
        params["cls_b_old"] = self.cls_b_old
        params["cls_w_new"] = self.cls_w_new
        params["cls_b_new"] = self.cls_b_new
        return params

    def merge_heads(self):
        self.cls_w_old = np.hstack([self.cls_w_old, self.cls_w_new])
        self.cls_b_old = np.concatenate([self.cls_b_old, self.cls_b_new])
        d = self.encoder.feature_dim
        self.cls_w_new = np.empty((d, 0))
        self.cls_b_new = np.empty(0)

    def expand_classifier(self, num_new, seed):
        """Open a fresh new-head block; the previous one must be merged."""
        if self.new_size != 0:
            raise ContractError("previous new block has not been merged")
        if num_new == 0:
            return self
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xEB]))
        d = self.encoder.feature_dim
        self.cls_w_new = _uniform_init(rng, d, num_new)
        self.cls_b_new = np.zeros(num_new)
        return self

    def snapshot_frozen(self):
        self.frozen_encoder = self.encoder.copy()

    def copy(self):
        return JointModel(
            encoder=self.encoder.copy(),
            cls_w_old=self.cls_w_old.copy(),
            cls_b_old=self.cls_b_old.copy(),
            cls_w_new=self.cls_w_new.copy(),
            cls_b_new=self.cls_b_new.copy(),
            frozen_encoder=(self.frozen_encoder.copy()
                            if self.frozen_encoder is not None else None),
        )


def save_checkpoint(path, model, memory, bank, stage, acc_values, class_sizes,
                    config_json=""):
    """Self-describing npz snapshot of model + memory + prototypes."""
    arrays = {
        "format_version": np.array([CHECKPOINT_VERSION]),
        "stage": np.array([stage]),
        "activation": np.frombuffer(
            model.encoder.activation.encode(), dtype=np.uint8),
        "num_hidden": np.array([len(model.encoder.hidden_w)]),
        "cls_w_old": model.cls_w_old,
        "cls_b_old": model.cls_b_old,
        "cls_w_new": model.cls_w_new,
        "cls_b_new": model.cls_b_new,
        "feat_w": model.encoder.feat_w,
        "feat_b": model.encoder.feat_b,
        "proj_w": model.encoder.proj_w,
        "proj_b": model.encoder.proj_b,
        "protos": bank.vectors if bank is not None else np.empty((0, 0)),
        "gamma": np.array([bank.gamma if bank is not None else 0.0]),
        "memory_capacity": np.array([memory.capacity]),
        "memory_classes": np.array(memory.classes, dtype=np.int64),
        "acc_values": acc_values,
        "class_sizes": np.array(class_sizes, dtype=np.int64),
        "config_json": np.frombuffer(config_json.encode(), dtype=np.uint8),
    }
    for i, (w, b) in enumerate(zip(model.encoder.hidden_w,
                                   model.encoder.hidden_b)):
        arrays[f"hidden_w_{i}"] = w
        arrays[f"hidden_b_{i}"] = b
    for c in memory.classes:
        arrays[f"memory_{c}"] = memory.store[c]
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Restore (model, memory, bank, stage, acc_values, class_sizes, config)."""
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        activation = bytes(data["activation"]).decode()
        encoder = EncoderParams(
            hidden_w=[data[f"hidden_w_{i}"]
                      for i in range(int(data["num_hidden"][0]))],
            hidden_b=[data[f"hidden_b_{i}"]
                      for i in range(int(data["num_hidden"][0]))],
            feat_w=data["feat_w"],
            feat_b=data["feat_b"],
            proj_w=data["proj_w"],
            proj_b=data["proj_b"],
            activation=activation,
        )
        model = JointModel(
            encoder=encoder,
            cls_w_old=data["cls_w_old"],
            cls_b_old=data["cls_b_old"],
            cls_w_new=data["cls_w_new"],
            cls_b_new=data["cls_b_new"],
        )
        memory = ReplayMemory(capacity=int(data["memory_capacity"][0]))
        for c in data["memory_classes"]:
            memory.store[int(c)] = data[f"memory_{int(c)}"]
        bank = PrototypeBank(vectors=data["protos"],
                             gamma=float(data["gamma"][0]))
        stage = int(data["stage"][0])
        acc_values = data["acc_values"]
        class_sizes = [int(v) for v in data["class_sizes"]]
        config_json = bytes(data["config_json"]).decode()
    config = json.loads(config_json) if config_json else None
    return model, memory, bank, stage, acc_values, class_sizes, config
