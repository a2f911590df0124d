"""Feed-forward encoder with hand-derived gradients.

The encoder is a stack of hidden layers (tanh by default) followed by a
linear feature layer and a separate linear projection head used for the
prototype space. Dropout is the inverted kind, applied to hidden activations
only, so ``dropout_prob=0`` is exactly the deterministic network.

All arithmetic is float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

ACTIVATIONS = {
    "tanh": (np.tanh, lambda post: 1.0 - post * post),
    "relu": (lambda x: np.maximum(x, 0.0), lambda post: (post > 0).astype(np.float64)),
    "identity": (lambda x: x, lambda post: np.ones_like(post)),
}


def _as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(np.random.SeedSequence(seed_or_rng))


def _uniform_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    """Weights for hidden layers, the feature layer, and the projection head."""

    hidden_w: list = field(default_factory=list)
    hidden_b: list = field(default_factory=list)
    feat_w: np.ndarray = None
    feat_b: np.ndarray = None
    proj_w: np.ndarray = None
    proj_b: np.ndarray = None
    activation: str = "tanh"

    @property
    def input_dim(self):
        if self.hidden_w:
            return self.hidden_w[0].shape[0]
        return self.feat_w.shape[0]

    @property
    def feature_dim(self):
        return self.feat_w.shape[1]

    @property
    def proj_dim(self):
        return self.proj_w.shape[1]

    def param_items(self):
        """Yield (name, array) pairs for every trainable array."""
        for i, (w, b) in enumerate(zip(self.hidden_w, self.hidden_b)):
            yield f"hidden_w_{i}", w
            yield f"hidden_b_{i}", b
        yield "feat_w", self.feat_w
        yield "feat_b", self.feat_b
        yield "proj_w", self.proj_w
        yield "proj_b", self.proj_b

    def layer_param_names(self, layer_index):
        """Parameter names belonging to one layer, for freeze masks.

        Layers are indexed hidden 0..L-1, then the feature layer, then the
        projection head.
        """
        n_hidden = len(self.hidden_w)
        if layer_index < n_hidden:
            return (f"hidden_w_{layer_index}", f"hidden_b_{layer_index}")
        if layer_index == n_hidden:
            return ("feat_w", "feat_b")
        if layer_index == n_hidden + 1:
            return ("proj_w", "proj_b")
        raise ContractError(f"encoder has no layer {layer_index}")

    @property
    def num_layers(self):
        return len(self.hidden_w) + 2

    def copy(self):
        return EncoderParams(
            hidden_w=[w.copy() for w in self.hidden_w],
            hidden_b=[b.copy() for b in self.hidden_b],
            feat_w=self.feat_w.copy(),
            feat_b=self.feat_b.copy(),
            proj_w=self.proj_w.copy(),
            proj_b=self.proj_b.copy(),
            activation=self.activation,
        )

    def equal(self, other):
        mine = dict(self.param_items())
        theirs = dict(other.param_items())
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)


def init_encoder(input_dim, hidden, feature_dim, proj_dim, activation="tanh", seed=0):
    """Seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization."""
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {activation!r}")
    rng = _as_rng(seed)
    params = EncoderParams(activation=activation)
    prev = input_dim
    for width in hidden:
        params.hidden_w.append(_uniform_init(rng, prev, width))
        params.hidden_b.append(np.zeros(width))
        prev = width
    params.feat_w = _uniform_init(rng, prev, feature_dim)
    params.feat_b = np.zeros(feature_dim)
    params.proj_w = _uniform_init(rng, feature_dim, proj_dim)
    params.proj_b = np.zeros(proj_dim)
    return params


@dataclass
class ForwardCache:
    """Activation record sufficient for an exact backward pass."""

    inputs: list  # A_0 = batch, A_l = dropped-out activation feeding layer l+1
    post_act: list  # hidden activations before dropout
    masks: list  # inverted-dropout masks (None when dropout_prob == 0)
    features: np.ndarray
    shapes: tuple  # parameter shapes the cache was built against


def encoder_forward(params, batch, dropout_prob=0.0, rng_seed=0):
    """Run the encoder; returns (features, raw projections, cache).

    Dropout is resampled from ``rng_seed`` alone, so a fixed seed gives
    identical masks for repeated calls (finite-difference checks rely on
    this).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch has shape {batch.shape}, encoder expects (*, {params.input_dim})"
        )
    if not 0.0 <= dropout_prob < 1.0:
        raise ShapeError(f"dropout_prob must be in [0, 1), got {dropout_prob}")
    act, _ = ACTIVATIONS[params.activation]
    rng = _as_rng(rng_seed)

    inputs = [batch]
    post_act = []
    masks = []
    a = batch
    for w, b in zip(params.hidden_w, params.hidden_b):
        h = act(a @ w + b)
        post_act.append(h)
        if dropout_prob > 0.0:
            mask = (rng.random(h.shape) >= dropout_prob) / (1.0 - dropout_prob)
            a = h * mask
        else:
            mask = None
            a = h
        masks.append(mask)
        inputs.append(a)
    features = a @ params.feat_w + params.feat_b
    projections = features @ params.proj_w + params.proj_b
    cache = ForwardCache(
        inputs=inputs,
        post_act=post_act,
        masks=masks,
        features=features,
        shapes=tuple((n, arr.shape) for n, arr in params.param_items()),
    )
    return features, projections, cache


def encoder_backward(params, cache, d_features=None, d_projections=None):
    """Backpropagate upstream gradients on features/projections to parameters.

    Returns a dict keyed like ``EncoderParams.param_items``.
    """
    shapes = tuple((n, arr.shape) for n, arr in params.param_items())
    if shapes != cache.shapes:
        raise ContractError("cache does not match these encoder parameters")
    batch_rows = cache.inputs[0].shape[0]
    if d_features is None:
        d_features = np.zeros((batch_rows, params.feature_dim))
    if d_projections is None:
        d_projections = np.zeros((batch_rows, params.proj_dim))
    d_features = np.asarray(d_features, dtype=np.float64)
    d_projections = np.asarray(d_projections, dtype=np.float64)
    if d_features.shape != (batch_rows, params.feature_dim):
        raise ContractError("feature gradient shape does not match cache")
    if d_projections.shape != (batch_rows, params.proj_dim):
        raise ContractError("projection gradient shape does not match cache")

    _, act_deriv = ACTIVATIONS[params.activation]
    grads = {}
    grads["proj_w"] = cache.features.T @ d_projections
    grads["proj_b"] = d_projections.sum(axis=0)
    d_feat_total = d_features + d_projections @ params.proj_w.T

    last = cache.inputs[len(params.hidden_w)]
    grads["feat_w"] = last.T @ d_feat_total
    grads["feat_b"] = d_feat_total.sum(axis=0)
    d_a = d_feat_total @ params.feat_w.T
    for i in reversed(range(len(params.hidden_w))):
        if cache.masks[i] is not None:
            d_a = d_a * cache.masks[i]
        d_pre = d_a * act_deriv(cache.post_act[i])
        grads[f"hidden_w_{i}"] = cache.inputs[i].T @ d_pre
        grads[f"hidden_b_{i}"] = d_pre.sum(axis=0)
        d_a = d_pre @ params.hidden_w[i].T
    return grads


def accumulate_grads(total, extra):
    """Sum two gradient dicts in place (missing keys are added)."""
    for k, v in extra.items():
        if k in total:
            total[k] = total[k] + v
        else:
            total[k] = v
    return total


def l2_normalize(x, return_degenerate=False):
    """Normalize a vector (or each row of a matrix) to unit length.

    Zero vectors are left as zero; the optional flag reports whether any
    degenerate row was seen.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        n = np.sqrt((x * x).sum())
        degenerate = n == 0.0
        out = x if degenerate else x / n
    else:
        n = np.sqrt((x * x).sum(axis=1, keepdims=True))
        degenerate = bool((n == 0.0).any())
        out = np.divide(x, n, out=x.astype(np.float64).copy(), where=n > 0.0)
    if return_degenerate:
        return out, degenerate
    return out


def l2_normalize_backward(raw, d_normed):
    """Chain a gradient w.r.t. unit rows back through row normalization."""
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.sqrt((raw * raw).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = raw / safe
    inner = (d_normed * unit).sum(axis=1, keepdims=True)
    grad = (d_normed - inner * unit) / safe
    return np.where(norms > 0.0, grad, 0.0)
