"""Finite-difference gradient checking (double-precision test mode).

The check compares tape gradients against central differences of the same
forward function with all detach-node values frozen at their base-point
values (DetachCache replay), which is exactly the function the tape
differentiates.
"""

import numpy as np

from .tensor import DetachCache, Tape


def finite_difference_gradients(loss_fn, params, eps=1e-4):
    """Return (analytic, numeric) gradient lists for `params`.

    loss_fn(cache) must rebuild the full forward pass from the current
    parameter values, drawing any randomness from generators re-seeded
    inside the call, and route every detach through `cache`.
    """
    for p in params:
        p.grad = None
    cache = DetachCache()
    with Tape() as tape:
        loss = loss_fn(cache)
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    cache.begin_replay()

    def eval_loss():
        cache.reset()
        return float(loss_fn(cache).data)

    numeric = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = eval_loss()
            flat[i] = orig - eps
            f_minus = eval_loss()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        numeric.append(g)
    return analytic, numeric


def max_relative_error(analytic, numeric):
    """max over elements of |a-n| / max(1, |a|, |n|)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(loss_fn, params, eps=1e-4, tol=1e-4):
    analytic, numeric = finite_difference_gradients(loss_fn, params, eps)
    err = max_relative_error(analytic, numeric)
    return err, err <= tol
