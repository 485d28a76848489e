"""AdamW with decoupled weight decay, plus the cosine annealing schedule."""

import numpy as np


class AdamWState:
    """First/second moments per parameter and a shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0


def adamw_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.0):
    """One update in place. Returns False (step skipped) on non-finite grads."""
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"adamw_step: grad shape {g.shape} != param {p.data.shape}")
    if any(not np.all(np.isfinite(g)) for g in grads):
        return False
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            p.data -= (lr * weight_decay) * p.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= (lr * update).astype(p.data.dtype)
    return True


class AdamW:
    """Stateful wrapper reading .grad off the parameters."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState(self.params)
        self.skipped_steps = 0

    def step(self, lr=None):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        ok = adamw_step(self.params, grads, self.state,
                        self.lr if lr is None else lr,
                        self.beta1, self.beta2, self.eps, self.weight_decay)
        if not ok:
            self.skipped_steps += 1
        return ok

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """lr_min + (lr_max-lr_min) * (1+cos(pi*step/total_steps)) / 2."""
    if total_steps <= 0:
        raise ValueError("cosine_lr: total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))
