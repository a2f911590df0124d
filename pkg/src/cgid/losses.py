"""Training losses and their exact gradients.

Cross-entropy is averaged over the batch (optionally per-sample weighted and
temperature-scaled). The prototype, instance, and distillation losses are
plain sums over their contributing samples. Contrastive losses expect
unit-norm rows and return gradients with respect to those unit rows; callers
chain through the normalization Jacobian.
"""

import numpy as np

from .errors import ConfigurationError, ContractError, ShapeError


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, targets, temperature=1.0, weights=None,
                  reduction="mean"):
    """Cross-entropy over the batch; returns (loss, dL/dlogits).

    ``targets`` is either an int vector of hard labels or a row-stochastic
    matrix of soft targets. ``weights`` rescales each sample's term (the mean
    stays over the full batch size). ``reduction`` is "mean" or "sum"; the
    sum matches the batch-sum scale of the other stage losses.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError("logits must be 2-D")
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    b, k = logits.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        if targets.shape[0] != b:
            raise ShapeError("one label per row required")
        if targets.min() < 0 or targets.max() >= k:
            raise ContractError("label outside logit range")
        onehot = np.zeros((b, k))
        onehot[np.arange(b), targets] = 1.0
        targets = onehot
    elif targets.shape != (b, k):
        raise ShapeError(f"soft targets must be {b}x{k}, got {targets.shape}")
    if weights is None:
        weights = np.ones(b)
    else:
        weights = np.asarray(weights, dtype=np.float64)

    if reduction not in ("mean", "sum"):
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    denom = b if reduction == "mean" else 1
    scaled = logits / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    per_sample = -(targets * log_p).sum(axis=1)
    loss = float((weights * per_sample).sum() / denom)
    p = np.exp(log_p)
    d_logits = weights[:, None] * (p * targets.sum(axis=1, keepdims=True) - targets)
    d_logits /= denom * temperature
    return loss, d_logits


def pcl_loss(z_unit, prototypes, q, tau):
    """Prototype-contrastive loss, summed over the batch.

    ``z_unit`` (B, d) and ``prototypes`` (C, d) must have unit rows; ``q``
    (B, C) assigns each sample's probability mass over prototypes. Prototypes
    are treated as constants: the returned gradient is w.r.t. ``z_unit`` only.
    """
    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    z_unit = np.asarray(z_unit, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (z_unit.shape[0], prototypes.shape[0]):
        raise ShapeError(
            f"q must be {z_unit.shape[0]}x{prototypes.shape[0]}, got {q.shape}"
        )
    sims = z_unit @ prototypes.T
    scaled = sims / tau
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = float(-(q * log_p).sum())
    p = np.exp(log_p)
    d_sims = (p * q.sum(axis=1, keepdims=True) - q) / tau
    d_z = d_sims @ prototypes
    return loss, d_z


def instance_cl_loss(z_unit, z_aug_unit, tau):
    """Instance-level contrastive loss, summed over anchors.

    Positive pair is (z_i, z_aug_i); the denominator runs over the *other
    anchors* z_j (j != i) only, so it can be negative. Batch must have at
    least two rows. Returns (loss, dL/dz, dL/dz_aug) w.r.t. the unit rows.
    """
    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    z_unit = np.asarray(z_unit, dtype=np.float64)
    z_aug_unit = np.asarray(z_aug_unit, dtype=np.float64)
    if z_unit.shape != z_aug_unit.shape:
        raise ShapeError("views must have identical shapes")
    b = z_unit.shape[0]
    if b < 2:
        raise ContractError("instance loss needs a batch of at least 2")
    pos = (z_unit * z_aug_unit).sum(axis=1) / tau
    sims = (z_unit @ z_unit.T) / tau
    np.fill_diagonal(sims, -np.inf)
    row_max = sims.max(axis=1, keepdims=True)
    e = np.exp(sims - row_max)
    den = e.sum(axis=1)
    log_den = row_max[:, 0] + np.log(den)
    loss = float((-pos + log_den).sum())
    attn = e / den[:, None]  # rows: softmax over other anchors
    d_z = (-z_aug_unit + (attn + attn.T) @ z_unit) / tau
    d_z_aug = -z_unit / tau
    return loss, d_z, d_z_aug


def feature_distill_loss(features, frozen_features):
    """Sum of squared feature drift against the stage-start encoder copy."""
    features = np.asarray(features, dtype=np.float64)
    frozen_features = np.asarray(frozen_features, dtype=np.float64)
    if features.shape != frozen_features.shape:
        raise ContractError(
            f"feature shapes differ: {features.shape} vs {frozen_features.shape}"
        )
    diff = features - frozen_features
    return float((diff * diff).sum()), 2.0 * diff
