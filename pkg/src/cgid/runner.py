"""Experiment orchestration: one IND stage followed by T discovery stages,
with per-stage evaluation, invariant checks, checkpoints, and reports.

All randomness is derived from (run seed, stage, purpose) seed sequences, so
a config plus seed fully determines every emitted number, and resuming from a
stage checkpoint reproduces the uninterrupted run exactly.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import run_deepaligned_stage, run_e2e_stage, run_kmeans_stage
from .cluster import estimate_num_classes
from .config import RunConfig
from .data import build_cgid_split, generate_mixture_corpus, load_embedding_corpus
from .errors import InvariantViolation
from .memory import ReplayMemory, memory_select
from .metrics import AccuracyMatrix, cgid_accuracy, cgid_forgetting, \
    compactness, evaluate_stage, loss_gain
from .model import JointModel, load_checkpoint, save_checkpoint
from .network import encoder_forward, init_encoder, l2_normalize
from .plrd import final_pseudo_labels, train_ind_stage, train_ood_stage, _rng, _step_seed
from .prototypes import PrototypeBank, empty_bank
from .report import StageReport, emit_report

log = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    reports: list
    acc: AccuracyMatrix
    feature_dumps: dict = field(default_factory=dict)
    invariant_violations: int = 0
    stage_logs: dict = field(default_factory=dict)
    split: object = None
    model: object = None
    memory: object = None
    bank: object = None


def build_corpus(config, seed):
    d = config.data
    if d.source == "file":
        return load_embedding_corpus(d.path)
    return generate_mixture_corpus(
        d.num_classes, d.dim,
        (d.train_per_class, d.val_per_class, d.test_per_class),
        d.class_separation, d.within_class_std, seed=seed,
    )


def _project(encoder, X):
    feats, projs, _ = encoder_forward(encoder, X, 0.0, 0)
    return feats, l2_normalize(projs)


def _class_mean_prototypes(z, labels):
    protos = {}
    for c in np.unique(labels):
        protos[int(c)] = l2_normalize(z[labels == c].mean(axis=0))
    return protos


def _select_into_memory(memory, X, labels, z, config, seed, bank=None):
    if config.memory.strategy == "random":
        protos = None
    elif bank is not None:
        protos = bank.vectors
    else:
        protos = _class_mean_prototypes(z, labels)
    chosen = memory_select(z, labels, config.memory.capacity,
                           strategy=config.memory.strategy, prototypes=protos,
                           seed=seed, store_rows=X)
    for c, rows in chosen.items():
        memory.add_class(c, rows)


def _check_heads_preserved(model, probe, before, exact=True):
    """Expansion must keep old-block logits bit-identical; merging fuses two
    matrix products into one, so it is checked to float tolerance instead."""
    after = model.old_logits(probe)
    if exact:
        ok = np.array_equal(before, after)
    else:
        ok = np.allclose(before, after, rtol=0.0, atol=1e-9)
    if not ok:
        raise InvariantViolation("old-block logits changed across head update")


def _estimate_stage_k(config, model, ind_encoder, stage_x, true_k, seed, stage):
    mode = config.k.mode
    if mode == "ground_truth":
        return true_k, None
    encoder = model.encoder if mode == "estimate_self" else ind_encoder
    feats, _, _ = encoder_forward(encoder, stage_x, 0.0, 0)
    k_prime = config.k.k_prime or 2 * true_k
    k_hat = estimate_num_classes(feats, k_prime,
                                 seed=_step_seed(seed, stage, 0x52))
    return k_hat, k_hat


def run_single(config, seed, out_dir=None, resume=False, run_log=None):
    """Execute all stages for one seed; returns a RunOutcome."""
    seed = int(seed)
    t0 = time.monotonic()

    def note(msg):
        if run_log is not None:
            run_log.write(msg + "\n")
            run_log.flush()

    corpus = build_corpus(config, seed)
    split = build_cgid_split(corpus, config.split.ood_ratio,
                             config.split.num_stages, seed=seed)
    num_ind = split.stage_size(0)
    set_sizes = [split.stage_size(t) for t in range(split.num_stages + 1)]
    config_echo = config.to_dict()

    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)

    start_stage = 0
    model = memory = bank = None
    acc = AccuracyMatrix(set_sizes=set_sizes)
    reports = []
    pred_block_sizes = []
    outcome = RunOutcome(reports=reports, acc=acc, split=split)

    if resume and ckpt_dir:
        found = _latest_checkpoint(ckpt_dir, seed)
        if found is not None:
            path, stage = found
            model, memory, bank, stage, acc_vals, sizes, meta = \
                load_checkpoint(path)
            if bank is not None and bank.count == 0:
                bank = None
            acc = AccuracyMatrix(set_sizes=sizes, values=acc_vals)
            outcome.acc = acc
            reports.extend(_report_from_dict(d) for d in meta["reports"])
            pred_block_sizes = [tuple(p) for p in meta["pred_block_sizes"]]
            start_stage = stage + 1
            note(f"resumed seed {seed} from stage {stage}")

    sealed_view = split.sealed.open("evaluation")
    test_sets = sealed_view["test"]

    if start_stage == 0:
        encoder = init_encoder(corpus.dim, list(config.model.hidden),
                               config.model.feature_dim, config.model.proj_dim,
                               activation=config.model.activation,
                               seed=_rng(seed, 0x01))
        model = JointModel.create(encoder, num_ind, seed=seed)
        memory = ReplayMemory(capacity=config.memory.capacity)

        ind_log = train_ind_stage(model, split.ind_train, split.ind_val,
                                  config, seed)
        outcome.stage_logs[0] = ind_log
        probe = split.ind_train[0][: min(4, len(split.ind_train[0]))]
        full_before = model.logits(_project(model.encoder, probe)[0])
        model.merge_heads()
        _check_heads_preserved(
            model, _project(model.encoder, probe)[0], full_before, exact=False)

        x_ind, y_ind = split.ind_train
        _, z_ind = _project(model.encoder, x_ind)
        _select_into_memory(memory, x_ind, y_ind, z_ind, config,
                            _step_seed(seed, 0, 0x51))
        memory.validate(num_ind)

        reports.append(_evaluate_and_report(
            config, model, acc, test_sets, 0, num_ind, split, seed,
            pred_block_sizes, outcome, k_est=None))
        note(f"stage 0 done: A_IND={acc.a(0, 0):.4f} "
             f"(val={ind_log.best_val_accuracy:.4f})")
        if ckpt_dir:
            _save_stage_checkpoint(ckpt_dir, seed, 0, model, memory, bank,
                                   acc, set_sizes, config_echo, reports,
                                   pred_block_sizes)
        start_stage = 1

    if start_stage > 1 and ckpt_dir:
        # post-IND encoder for the frozen-extractor estimation mode
        stage0 = os.path.join(ckpt_dir, f"seed{seed}_stage0.npz")
        ind_encoder = load_checkpoint(stage0)[0].encoder
    else:
        ind_encoder = model.encoder.copy()
    gamma = config.gamma()

    for t in range(start_stage, split.num_stages + 1):
        stage_t0 = time.monotonic()
        stage_x = split.ood_train[t]
        true_k = split.stage_size(t)
        known_old = model.logit_dim
        k_used, k_est = _estimate_stage_k(config, model, ind_encoder, stage_x,
                                          true_k, seed, t)

        probe = split.ind_train[0][: min(4, len(split.ind_train[0]))]
        probe_feats = _project(model.encoder, probe)[0]
        before = model.old_logits(probe_feats)
        model.expand_classifier(k_used, seed=_step_seed(seed, t, 0x50))
        _check_heads_preserved(model, probe_feats, before)
        model.snapshot_frozen()
        frozen_copy = model.frozen_encoder.copy()

        if config.method == "plrd":
            if bank is None:
                bank = empty_bank(config.model.proj_dim, gamma)
                mem_x, mem_y = memory.flatten()
                if len(mem_y):
                    _, mem_z = _project(model.encoder, mem_x)
                    rows = [mem_z[mem_y == c].mean(axis=0)
                            for c in range(known_old)]
                    bank.append_rows(np.stack(rows))
                else:
                    bank.append_random(known_old, _rng(seed, t, 0x53))
            bank.gamma = gamma
            bank.append_random(k_used, _rng(seed, t, 0x54))
            stage_log = train_ood_stage(model, memory, bank, stage_x, config,
                                        seed, t, known_old, k_used)
            pseudo, z_final = final_pseudo_labels(model, bank, stage_x,
                                                  known_old, k_used)
        elif config.method == "kmeans":
            stage_log, pseudo = run_kmeans_stage(model, memory, stage_x,
                                                 config, seed, t, known_old,
                                                 k_used)
            _, z_final = _project(model.encoder, stage_x)
        elif config.method == "deepaligned":
            stage_log, pseudo = run_deepaligned_stage(model, memory, stage_x,
                                                      config, seed, t,
                                                      known_old, k_used)
            _, z_final = _project(model.encoder, stage_x)
        else:
            stage_log, pseudo = run_e2e_stage(model, memory, stage_x, config,
                                              seed, t, known_old, k_used)
            _, z_final = _project(model.encoder, stage_x)
        outcome.stage_logs[t] = stage_log

        if not model.frozen_encoder.equal(frozen_copy):
            raise InvariantViolation("frozen encoder was modified in stage")

        probe_feats = _project(model.encoder, probe)[0]
        full_before = model.logits(probe_feats)
        model.merge_heads()
        _check_heads_preserved(model, probe_feats, full_before, exact=False)

        _select_into_memory(memory, stage_x, pseudo, z_final, config,
                            _step_seed(seed, t, 0x51),
                            bank=bank if config.method == "plrd" else None)
        memory.validate(model.logit_dim)

        pred_block_sizes.append((int(k_used), int(true_k)))
        reports.append(_evaluate_and_report(
            config, model, acc, test_sets, t, num_ind, split, seed,
            pred_block_sizes, outcome, k_est=k_est))
        note(f"stage {t} done in {time.monotonic() - stage_t0:.1f}s: "
             f"A_ALL={reports[-1].a_all:.4f}")
        if ckpt_dir:
            _save_stage_checkpoint(ckpt_dir, seed, t, model, memory, bank,
                                   acc, set_sizes, config_echo, reports,
                                   pred_block_sizes)

    outcome.model = model
    outcome.memory = memory
    outcome.bank = bank
    note(f"seed {seed} finished in {time.monotonic() - t0:.1f}s")
    return outcome


def _evaluate_and_report(config, model, acc, test_sets, t, num_ind, split,
                         seed, pred_block_sizes, outcome, k_est):
    sets = [test_sets[i] for i in range(t + 1)]
    row, aligned = evaluate_stage(
        model, sets, t, num_ind,
        align_per_block=config.align_per_block,
        stage_block_sizes=pred_block_sizes if config.align_per_block else None)
    acc.set_row(t, row)

    compact = {}
    for i in range(t + 1):
        x_i, y_i = sets[i]
        _, z_i = _project(model.encoder, x_i)
        counts = np.bincount(y_i - min(split.class_sets[i]))
        if (counts >= 2).all():
            compact[i] = float(compactness(z_i, y_i, split.class_sets[i]))

    feats_all = np.vstack([_project(model.encoder, x)[0] for x, _ in sets])
    dump = (
        ["test"] * sum(len(y) for _, y in sets),
        np.concatenate([y for _, y in sets]).astype(int).tolist(),
        feats_all,
        np.concatenate(aligned).astype(int).tolist(),
    )
    outcome.feature_dumps[(int(seed), int(t))] = dump

    if t == 0:
        loss_t, gain_t = loss_gain(acc, 0)
        rep = StageReport(
            method=config.method, ood_ratio=float(config.split.ood_ratio),
            seed=int(seed), stage=0, a_ind=float(acc.a(0, 0)), f_ind=0.0,
            a_all=float(acc.a(0, 0)), f_all=0.0,
            loss=float(loss_t), gain=float(gain_t), compactness=compact,
            k_est=None, k_true=int(split.stage_size(0)),
        )
    else:
        a_ind, a_ood, a_all = cgid_accuracy(acc, t)
        f_ind, f_ood, f_all = cgid_forgetting(acc, t)
        loss_t, gain_t = loss_gain(acc, t)
        rep = StageReport(
            method=config.method, ood_ratio=float(config.split.ood_ratio),
            seed=int(seed), stage=int(t), a_ind=float(a_ind),
            f_ind=float(f_ind), a_ood=float(a_ood), f_ood=float(f_ood),
            a_all=float(a_all), f_all=float(f_all), loss=float(loss_t),
            gain=float(gain_t), compactness=compact,
            k_est=int(k_est) if k_est is not None else None,
            k_true=int(split.stage_size(t)),
        )
    return rep


def _report_to_dict(rep):
    return {
        "method": rep.method, "ood_ratio": rep.ood_ratio, "seed": rep.seed,
        "stage": rep.stage, "a_ind": rep.a_ind, "f_ind": rep.f_ind,
        "a_ood": rep.a_ood, "f_ood": rep.f_ood, "a_all": rep.a_all,
        "f_all": rep.f_all, "loss": rep.loss, "gain": rep.gain,
        "compactness": {str(k): v for k, v in rep.compactness.items()},
        "k_est": rep.k_est, "k_true": rep.k_true,
    }


def _report_from_dict(d):
    d = dict(d)
    d["compactness"] = {int(k): v for k, v in d.get("compactness", {}).items()}
    return StageReport(**d)


def _save_stage_checkpoint(ckpt_dir, seed, stage, model, memory, bank, acc,
                           set_sizes, config_echo, reports, pred_block_sizes):
    meta = json.dumps({
        "config": config_echo,
        "reports": [_report_to_dict(r) for r in reports],
        "pred_block_sizes": [list(p) for p in pred_block_sizes],
    }, sort_keys=True)
    path = os.path.join(ckpt_dir, f"seed{seed}_stage{stage}.npz")
    save_checkpoint(path, model, memory,
                    bank if bank is not None else empty_bank(1, 0.0),
                    stage, acc.values, set_sizes, meta)


def _latest_checkpoint(ckpt_dir, seed):
    best = None
    prefix = f"seed{seed}_stage"
    if not os.path.isdir(ckpt_dir):
        return None
    for name in os.listdir(ckpt_dir):
        if name.startswith(prefix) and name.endswith(".npz"):
            stage = int(name[len(prefix):-4])
            if best is None or stage > best[1]:
                best = (os.path.join(ckpt_dir, name), stage)
    return best


def run_experiment(config, out_dir, resume=False):
    """Run every configured seed and emit the report files.

    Returns the list of RunOutcomes, one per seed.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    outcomes = []
    reports = []
    dumps = {}
    with open(os.path.join(out_dir, "run.log"), "a", encoding="utf-8") as fh:
        fh.write(f"# method={config.method} seeds={config.seeds}\n")
        for seed in config.seeds:
            outcome = run_single(config, seed, out_dir=out_dir, resume=resume,
                                 run_log=fh)
            outcomes.append(outcome)
            reports.extend(outcome.reports)
            dumps.update(outcome.feature_dumps)
    emit_report(reports, out_dir, config=config.to_dict(),
                feature_dumps=dumps)
    return outcomes


def sweep(base_config, out_root, methods=None, ratios=None, seeds=None,
          workers=1):
    """Grid of runs over methods x OOD ratios x seeds, one directory each."""
    methods = methods or [base_config.method]
    ratios = ratios or [base_config.split.ood_ratio]
    seeds = seeds if seeds is not None else base_config.seeds
    tasks = []
    for method in methods:
        for ratio in ratios:
            for seed in seeds:
                raw = base_config.to_dict()
                raw["method"] = method
                raw["split"]["ood_ratio"] = ratio
                raw["seeds"] = [int(seed)]
                name = f"{method}_ratio{int(round(ratio * 100))}_seed{seed}"
                tasks.append((raw, os.path.join(out_root, name)))
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            pool.map(_sweep_task, tasks)
    else:
        for task in tasks:
            _sweep_task(task)
    return [out for _, out in tasks]


def _sweep_task(task):
    from .config import config_from_dict

    raw, out_dir = task
    run_experiment(config_from_dict(raw), out_dir)
