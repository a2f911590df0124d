"""Continual generalized intent discovery at desk scale.

A joint classifier learns labeled in-domain classes, then repeatedly
discovers new classes from unlabeled streams. The prototype-guided method
(replay + feature distillation + contrastive prototype learning) is compared
against k-means, aligned-clustering, and swapped-prediction baselines under
one staged protocol with Hungarian-aligned accuracy and forgetting metrics.
"""

from .backend import HAVE_NUMBA, USE_NUMBA
from .cluster import (
    estimate_num_classes,
    hungarian_align,
    kmeans,
    sinkhorn_calibrate,
)
from .config import RunConfig, config_from_dict, load_config, preset
from .data import (
    LabeledCorpus,
    StagedSplit,
    build_cgid_split,
    export_corpus,
    generate_mixture_corpus,
    load_embedding_corpus,
)
from .metrics import (
    AccuracyMatrix,
    cgid_accuracy,
    cgid_forgetting,
    compactness,
    evaluate_stage,
    loss_gain,
)
from .report import StageReport, compare_reports, emit_report, parse_report
from .runner import run_experiment, run_single, sweep

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "HAVE_NUMBA", "LabeledCorpus", "RunConfig",
    "StageReport", "StagedSplit", "USE_NUMBA", "build_cgid_split",
    "cgid_accuracy", "cgid_forgetting", "compactness", "compare_reports",
    "config_from_dict", "emit_report", "estimate_num_classes",
    "evaluate_stage", "export_corpus", "generate_mixture_corpus",
    "hungarian_align", "kmeans", "load_config", "load_embedding_corpus",
    "loss_gain", "parse_report", "preset", "run_experiment", "run_single",
    "sinkhorn_calibrate", "sweep",
]
