"""Shared test utilities: finite-difference oracle and tiny model builders."""

import numpy as np

from cgid.network import init_encoder

REL_TOL = 1e-4
FD_EPS = 1e-5


def central_difference(fn, arr, eps=FD_EPS):
    """Central finite differences of scalar fn w.r.t. every entry of arr."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def assert_grads_close(analytic, numeric, rel=REL_TOL, context=""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    rel_err = np.abs(analytic - numeric) / denom
    worst = rel_err.max() if rel_err.size else 0.0
    assert worst <= rel, f"{context}: worst relative error {worst:.3e} > {rel}"


def check_param_grads(params_dict, grads, loss_fn, rel=REL_TOL, eps=FD_EPS):
    """Compare analytic grads against finite differences for every parameter."""
    for name, arr in params_dict.items():
        if arr.size == 0:
            continue
        fd = central_difference(lambda: loss_fn(), arr, eps=eps)
        assert_grads_close(grads[name], fd, rel=rel, context=name)


def tiny_encoder(seed=0, input_dim=3, hidden=(4,), feature_dim=3, proj_dim=3,
                 activation="tanh"):
    return init_encoder(input_dim, list(hidden), feature_dim, proj_dim,
                        activation=activation, seed=seed)


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
