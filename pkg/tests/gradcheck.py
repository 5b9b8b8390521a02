"""Shared helper: compare analytic backward against central finite
differences on the flattened parameter vector, in float64."""

import numpy as np

from frevl.kernel import RngState
from frevl.model import (
    backward,
    flatten_params,
    forward_batch,
    init_params,
    unflatten_params,
)


def random_unit(gen, n, d):
    x = gen.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def max_rel_grad_error(config, flags, seed=0, batch=2, h=1e-4,
                       training=False):
    """Max relative error between analytic and finite-difference gradients
    of sum(scores * U) over every parameter entry."""
    gen = np.random.default_rng(seed)
    params = init_params(config, RngState(seed), flags, dtype=np.float64)
    V = random_unit(gen, batch, config.d_v)
    T = random_unit(gen, batch, config.d_t)
    U = gen.standard_normal((batch, config.out_dim))

    rng = RngState(seed + 1) if training else None
    scores, trace = forward_batch(V, T, params, config, flags, rng=rng,
                                  training=training)
    masks = trace.masks if training else None
    grads = backward(trace, U, params, config, flags)
    analytic = flatten_params(grads, config, flags)

    theta0 = flatten_params(params, config, flags)
    fd = np.empty_like(theta0)
    for i in range(theta0.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            theta = theta0.copy()
            theta[i] += sign * h
            p = unflatten_params(theta, config, flags)
            s, _ = forward_batch(V, T, p, config, flags, training=training,
                                 masks=masks)
            if slot == 0:
                up = float(np.sum(s * U))
            else:
                fd[i] = (up - float(np.sum(s * U))) / (2 * h)
    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))
