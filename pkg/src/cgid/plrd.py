"""Stage training: supervised in-domain training and the prototype-guided
out-of-domain stage (replay, contrastive losses, feature distillation).

Per OOD batch: mix replayed old samples with new samples, forward once
without dropout and once with a dropout view, compute the four losses with
configurable weights (all 1.0 by default), update parameters with momentum
SGD, then refresh prototypes by moving average. Pseudo-labels for the
cross-entropy are recomputed each batch from the nearest new-class prototype.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import (
    cross_entropy,
    feature_distill_loss,
    instance_cl_loss,
    pcl_loss,
)
from .memory import assemble_batch
from .network import (
    accumulate_grads,
    encoder_backward,
    encoder_forward,
    l2_normalize,
    l2_normalize_backward,
)
from .optim import ScheduleConfig, SgdState, sgd_step
from .prototypes import assign_pseudo_labels, compute_q, update_prototypes


@dataclass
class StageLog:
    """Per-epoch mean losses and bookkeeping for one training stage."""

    epochs: list = field(default_factory=list)
    best_val_accuracy: float = None
    skipped_fd_batches: int = 0
    skipped_ins_batches: int = 0


def _rng(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *tags]))


def _step_seed(seed, *tags):
    return np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0]


def frozen_param_names(config_model, encoder):
    names = []
    for layer in config_model.freeze_layers:
        names.extend(encoder.layer_param_names(layer))
    return tuple(names)


def _schedule(optim_cfg, total_steps, peak_lr=None):
    return ScheduleConfig(
        peak_lr=optim_cfg.peak_lr if peak_lr is None else peak_lr,
        total_steps=total_steps,
        warmup_ratio=optim_cfg.warmup_ratio,
        momentum=optim_cfg.momentum,
        weight_decay=optim_cfg.weight_decay,
    )


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def classification_accuracy(model, X, y):
    feats, _, _ = encoder_forward(model.encoder, X, 0.0, 0)
    return float((model.logits(feats).argmax(axis=1) == y).mean())


def _full_cls_w(model):
    return np.hstack([model.cls_w_old, model.cls_w_new])


def train_ind_stage(model, train_xy, val_xy, config, seed):
    """Cross-entropy training on labeled in-domain data.

    Keeps the parameters of the best validation-accuracy epoch.
    """
    X, y = train_xy
    epochs = config.train.ind_epochs
    batch = config.train.batch_size
    steps = epochs * max(1, math.ceil(len(X) / batch))
    state = SgdState(_schedule(config.optim, steps))
    frozen = frozen_param_names(config.model, model.encoder)
    rng = _rng(seed, 0, 0x11)
    log = StageLog()
    best_acc, best_snapshot = -1.0, None
    for _ in range(epochs):
        epoch_ce, batches = 0.0, 0
        for chunk in _batches(len(X), batch, rng):
            bx, by = X[chunk], y[chunk]
            feats, _, cache, logits = model.forward(bx)
            ce, d_logits = cross_entropy(logits, by)
            grads = model.classifier_grads(feats, d_logits)
            d_feats = d_logits @ _full_cls_w(model).T
            accumulate_grads(grads, encoder_backward(model.encoder, cache,
                                                     d_feats))
            sgd_step(model.trainable_params(), grads, state, frozen)
            epoch_ce += ce
            batches += 1
        val_acc = classification_accuracy(model, *val_xy)
        log.epochs.append({"ce": epoch_ce / max(batches, 1),
                           "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc = val_acc
            best_snapshot = model.copy()
    if best_snapshot is not None:
        model.encoder = best_snapshot.encoder
        model.cls_w_old = best_snapshot.cls_w_old
        model.cls_b_old = best_snapshot.cls_b_old
        model.cls_w_new = best_snapshot.cls_w_new
        model.cls_b_new = best_snapshot.cls_b_new
        log.best_val_accuracy = best_acc
    else:
        log.best_val_accuracy = classification_accuracy(model, *val_xy)
    return log


def train_ood_stage(model, memory, bank, stage_x, config, seed, stage,
                    known_old, num_new):
    """One prototype-guided discovery stage over unlabeled data.

    The caller has already expanded the classifier by ``num_new``, appended
    ``num_new`` fresh prototypes, and snapshot the frozen encoder copy.
    """
    log = StageLog()
    if num_new == 0 or len(stage_x) == 0:
        return log
    plrd_cfg = config.plrd
    epochs = config.train.ood_epochs
    batch = config.train.batch_size
    steps = epochs * max(1, math.ceil(len(stage_x) / batch))
    state = SgdState(_schedule(config.optim, steps,
                               peak_lr=config.optim.ood_peak_lr))
    frozen = frozen_param_names(config.model, model.encoder)
    rng_order = _rng(seed, stage, 0x21)
    rng_draw = _rng(seed, stage, 0x22)
    new_range = range(known_old, known_old + num_new)

    for epoch in range(epochs):
        sums = {"ce": 0.0, "pcl": 0.0, "ins": 0.0, "fd": 0.0, "total": 0.0}
        batches = 0
        for step, chunk in enumerate(_batches(len(stage_x), batch, rng_order)):
            rows, is_old, old_labels = assemble_batch(stage_x[chunk], memory,
                                                      rng_draw)
            feats, projs, cache, logits = model.forward(rows)
            view_seed = _step_seed(seed, stage, epoch, step, 0x23)
            feats_a, projs_a, cache_a = encoder_forward(
                model.encoder, rows, config.model.dropout, view_seed)
            z = l2_normalize(projs)
            z_a = l2_normalize(projs_a)
            new_rows = ~is_old

            q = compute_q(is_old, old_labels, logits[new_rows, known_old:],
                          known_old, num_new, epsilon=plrd_cfg.sk_epsilon,
                          iterations=plrd_cfg.sk_iterations)
            targets = old_labels.copy()
            targets[new_rows] = assign_pseudo_labels(z[new_rows], bank,
                                                     new_range)

            ce, d_logits = cross_entropy(logits, targets, reduction="sum")
            pcl, d_z_pcl = pcl_loss(z, bank.vectors, q, plrd_cfg.tau)
            if len(rows) >= 2:
                ins, d_z_ins, d_za = instance_cl_loss(z, z_a, plrd_cfg.tau)
            else:
                ins, d_z_ins, d_za = 0.0, np.zeros_like(z), None
                log.skipped_ins_batches += 1
            if is_old.any():
                frozen_feats, _, _ = encoder_forward(model.frozen_encoder,
                                                     rows[is_old], 0.0, 0)
                fd, d_f_old = feature_distill_loss(feats[is_old], frozen_feats)
            else:
                fd, d_f_old = 0.0, None
                log.skipped_fd_batches += 1
            total = (plrd_cfg.ce_weight * ce + plrd_cfg.pcl_weight * pcl
                     + plrd_cfg.ins_weight * ins + plrd_cfg.fd_weight * fd)

            d_logits *= plrd_cfg.ce_weight
            grads = model.classifier_grads(feats, d_logits)
            d_feats = d_logits @ _full_cls_w(model).T
            if d_f_old is not None:
                d_feats[is_old] += plrd_cfg.fd_weight * d_f_old
            d_z_total = (plrd_cfg.pcl_weight * d_z_pcl
                         + plrd_cfg.ins_weight * d_z_ins)
            d_projs = l2_normalize_backward(projs, d_z_total)
            accumulate_grads(grads, encoder_backward(model.encoder, cache,
                                                     d_feats, d_projs))
            if d_za is not None:
                d_projs_a = l2_normalize_backward(
                    projs_a, plrd_cfg.ins_weight * d_za)
                accumulate_grads(grads, encoder_backward(
                    model.encoder, cache_a, None, d_projs_a))
            sgd_step(model.trainable_params(), grads, state, frozen)
            update_prototypes(bank, z, q)

            for key, val in (("ce", ce), ("pcl", pcl), ("ins", ins),
                             ("fd", fd), ("total", total)):
                sums[key] += val
            batches += 1
        log.epochs.append({k: v / max(batches, 1) for k, v in sums.items()})
    return log


def final_pseudo_labels(model, bank, stage_x, known_old, num_new):
    """Nearest-new-prototype labels for a whole stage, for memory selection."""
    _, projs, _ = encoder_forward(model.encoder, stage_x, 0.0, 0)
    z = l2_normalize(projs)
    labels = assign_pseudo_labels(z, bank, range(known_old,
                                                 known_old + num_new))
    return labels, z
