"""Comparison methods under the identical staged protocol and memory.

* kmeans: cluster the stage once, train cross-entropy on new + replayed
  samples with the replay terms up-weighted by lambda.
* deepaligned: repeat (cluster, align centroids to the previous round, train
  one epoch) so pseudo-label ids stay consistent across rounds.
* e2e: swapped-prediction training; each view's Sinkhorn-calibrated new-head
  assignment is the other view's soft target, replayed samples keep hard
  labels, everything through a sharp-temperature cross-entropy.
"""

import logging
import math

import numpy as np

from .cluster import align_centroids, kmeans, sinkhorn_calibrate
from .losses import cross_entropy
from .memory import assemble_batch
from .network import accumulate_grads, encoder_backward, encoder_forward
from .optim import SgdState, sgd_step
from .plrd import (
    StageLog,
    _batches,
    _full_cls_w,
    _rng,
    _schedule,
    _step_seed,
    frozen_param_names,
)


log = logging.getLogger(__name__)


def _encode(model, X):
    feats, _, _ = encoder_forward(model.encoder, X, 0.0, 0)
    return feats


def _train_classification_epochs(model, stage_x, pseudo, memory, config,
                                 seed, stage, epochs, state, replay_lambda,
                                 stage_log, round_tag=0):
    """Shared pipeline-CE loop over new + replayed samples."""
    batch = config.train.batch_size
    frozen = frozen_param_names(config.model, model.encoder)
    rng_order = _rng(seed, stage, round_tag, 0x31)
    rng_draw = _rng(seed, stage, round_tag, 0x32)
    for _ in range(epochs):
        epoch_ce, batches = 0.0, 0
        for chunk in _batches(len(stage_x), batch, rng_order):
            rows, is_old, old_labels = assemble_batch(stage_x[chunk], memory,
                                                      rng_draw)
            targets = old_labels.copy()
            targets[~is_old] = pseudo[chunk]
            weights = np.where(is_old, replay_lambda, 1.0)
            feats, _, cache, logits = model.forward(rows)
            ce, d_logits = cross_entropy(logits, targets, weights=weights)
            grads = model.classifier_grads(feats, d_logits)
            d_feats = d_logits @ _full_cls_w(model).T
            accumulate_grads(grads, encoder_backward(model.encoder, cache,
                                                     d_feats))
            sgd_step(model.trainable_params(), grads, state, frozen)
            epoch_ce += ce
            batches += 1
        stage_log.epochs.append({"ce": epoch_ce / max(batches, 1)})


def run_kmeans_stage(model, memory, stage_x, config, seed, stage, known_old,
                     num_new):
    """Single-pass clustering pipeline; returns (log, pseudo labels)."""
    stage_log = StageLog()
    if num_new == 0 or len(stage_x) == 0:
        return stage_log, np.empty(0, dtype=np.int64)
    result = kmeans(_encode(model, stage_x), num_new,
                    max_iters=config.baselines.kmeans_max_iters,
                    seed=_step_seed(seed, stage, 0x30))
    pseudo = known_old + result.assignments
    epochs = config.train.ood_epochs
    steps = epochs * max(1, math.ceil(len(stage_x) / config.train.batch_size))
    state = SgdState(_schedule(config.optim, steps,
                               peak_lr=config.baselines.pipeline_peak_lr))
    _train_classification_epochs(model, stage_x, pseudo, memory, config, seed,
                                 stage, epochs, state,
                                 config.baselines.replay_lambda, stage_log)
    return stage_log, pseudo


def run_deepaligned_stage(model, memory, stage_x, config, seed, stage,
                          known_old, num_new):
    """Iterative clustering with centroid alignment between rounds."""
    stage_log = StageLog()
    if num_new == 0 or len(stage_x) == 0:
        return stage_log, np.empty(0, dtype=np.int64)
    rounds = config.baselines.align_rounds
    epochs_per_round = max(1, config.train.ood_epochs // rounds)
    steps = rounds * epochs_per_round * max(
        1, math.ceil(len(stage_x) / config.train.batch_size))
    state = SgdState(_schedule(config.optim, steps,
                               peak_lr=config.baselines.pipeline_peak_lr))
    kmeans_seed = _step_seed(seed, stage, 0x33)
    prev_centroids = None
    pseudo = None
    for rnd in range(rounds):
        result = kmeans(_encode(model, stage_x), num_new,
                        max_iters=config.baselines.kmeans_max_iters,
                        seed=kmeans_seed)
        sizes = np.bincount(result.assignments, minlength=num_new)
        if (sizes == 0).any():
            log.warning("stage %d round %d: empty cluster repaired", stage, rnd)
        if prev_centroids is None:
            assignments = result.assignments
            centroids = result.centroids
        else:
            amap = align_centroids(prev_centroids, result.centroids)
            relabel = np.array([amap.pred_to_ref[j] for j in range(num_new)])
            assignments = relabel[result.assignments]
            centroids = np.empty_like(result.centroids)
            centroids[relabel] = result.centroids
        prev_centroids = centroids
        pseudo = known_old + assignments
        _train_classification_epochs(model, stage_x, pseudo, memory, config,
                                     seed, stage, epochs_per_round, state,
                                     config.baselines.replay_lambda,
                                     stage_log, round_tag=rnd + 1)
    return stage_log, pseudo


def run_e2e_stage(model, memory, stage_x, config, seed, stage, known_old,
                  num_new):
    """Swapped-prediction training over two dropout views per batch."""
    stage_log = StageLog()
    if num_new == 0 or len(stage_x) == 0:
        return stage_log, np.empty(0, dtype=np.int64)
    bl = config.baselines
    epochs = config.train.ood_epochs
    batch = config.train.batch_size
    steps = epochs * max(1, math.ceil(len(stage_x) / batch))
    state = SgdState(_schedule(config.optim, steps, peak_lr=bl.e2e_peak_lr))
    frozen = frozen_param_names(config.model, model.encoder)
    rng_order = _rng(seed, stage, 0x41)
    rng_draw = _rng(seed, stage, 0x42)

    for epoch in range(epochs):
        epoch_loss, batches = 0.0, 0
        for step, chunk in enumerate(_batches(len(stage_x), batch, rng_order)):
            rows, is_old, old_labels = assemble_batch(stage_x[chunk], memory,
                                                      rng_draw)
            seed_a = _step_seed(seed, stage, epoch, step, 0x43)
            seed_b = _step_seed(seed, stage, epoch, step, 0x44)
            loss, grads = e2e_swapped_loss_and_grads(
                model, rows, is_old, old_labels, known_old, num_new,
                dropout=config.model.dropout, seed_a=seed_a, seed_b=seed_b,
                sk_epsilon=config.plrd.sk_epsilon,
                sk_iterations=config.plrd.sk_iterations,
                ce_temperature=bl.e2e_ce_temperature,
                replay_lambda=bl.e2e_replay_lambda)
            sgd_step(model.trainable_params(), grads, state, frozen)
            epoch_loss += loss
            batches += 1
        stage_log.epochs.append({"ce": epoch_loss / max(batches, 1)})
    feats = _encode(model, stage_x)
    pseudo = known_old + model.logits(feats)[:, known_old:].argmax(axis=1)
    return stage_log, pseudo


def e2e_swapped_loss_and_grads(model, rows, is_old, old_labels, known_old,
                               num_new, dropout, seed_a, seed_b, sk_epsilon,
                               sk_iterations, ce_temperature, replay_lambda):
    """Loss/grads of one swapped-prediction step (targets held constant).

    Both dropout views are classified; each view's calibrated new-block
    assignment becomes the other's soft target on the new rows, old rows use
    their stored hard labels in both views, and the two view losses are
    averaged.
    """
    new_rows = ~is_old
    feats_a, _, cache_a = encoder_forward(model.encoder, rows, dropout, seed_a)
    feats_b, _, cache_b = encoder_forward(model.encoder, rows, dropout, seed_b)
    logits_a = model.logits(feats_a)
    logits_b = model.logits(feats_b)
    total_dim = known_old + num_new

    targets_a = np.zeros((len(rows), total_dim))
    targets_b = np.zeros((len(rows), total_dim))
    if is_old.any():
        one_hot_rows = np.flatnonzero(is_old)
        targets_a[one_hot_rows, old_labels[one_hot_rows]] = 1.0
        targets_b[one_hot_rows, old_labels[one_hot_rows]] = 1.0
    if new_rows.any():
        q_a = sinkhorn_calibrate(logits_a[new_rows, known_old:],
                                 epsilon=sk_epsilon, iterations=sk_iterations)
        q_b = sinkhorn_calibrate(logits_b[new_rows, known_old:],
                                 epsilon=sk_epsilon, iterations=sk_iterations)
        targets_a[new_rows, known_old:] = q_b  # swap: view A learns B's code
        targets_b[new_rows, known_old:] = q_a
    weights = np.where(is_old, replay_lambda, 1.0)

    loss_a, d_logits_a = cross_entropy(logits_a, targets_a,
                                       temperature=ce_temperature,
                                       weights=weights)
    loss_b, d_logits_b = cross_entropy(logits_b, targets_b,
                                       temperature=ce_temperature,
                                       weights=weights)
    d_logits_a *= 0.5
    d_logits_b *= 0.5
    grads = model.classifier_grads(feats_a, d_logits_a)
    accumulate_grads(grads, model.classifier_grads(feats_b, d_logits_b))
    w_full = _full_cls_w(model)
    accumulate_grads(grads, encoder_backward(model.encoder, cache_a,
                                             d_logits_a @ w_full.T))
    accumulate_grads(grads, encoder_backward(model.encoder, cache_b,
                                             d_logits_b @ w_full.T))
    return 0.5 * (loss_a + loss_b), grads
