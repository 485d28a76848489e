"""Dense layers and parameter initialization."""

import numpy as np

from .tensor import Tensor, linear


def make_rng(seed):
    """Counter-based (Philox) generator; callers own and pass these around."""
    return np.random.Generator(np.random.Philox(seed))


class DenseLayer:
    """weight (out, in) and bias (out,), trainable."""

    def __init__(self, weight, bias):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if self.weight.data.ndim != 2 or self.bias.data.shape != (self.weight.data.shape[0],):
            raise ValueError("DenseLayer: weight must be (out, in), bias (out,)")
        if not (np.all(np.isfinite(self.weight.data)) and np.all(np.isfinite(self.bias.data))):
            raise ValueError("DenseLayer: non-finite parameters")

    @property
    def in_dim(self):
        return self.weight.data.shape[1]

    @property
    def out_dim(self):
        return self.weight.data.shape[0]

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def forward_np(self, x):
        # raw-numpy fast path for inference (no tape)
        return x @ self.weight.data.T + self.bias.data

    def parameters(self):
        return [self.weight, self.bias]


def init_dense(in_dim, out_dim, rng, dtype=np.float32, zero=False):
    """Kaiming-style uniform fan-in init; `zero` gives an all-zero layer."""
    if zero:
        w = np.zeros((out_dim, in_dim), dtype=dtype)
        b = np.zeros(out_dim, dtype=dtype)
    else:
        limit = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)
        bl = 1.0 / np.sqrt(in_dim)
        b = rng.uniform(-bl, bl, size=out_dim).astype(dtype)
    return DenseLayer(Tensor(w, requires_grad=True, dtype=dtype),
                      Tensor(b, requires_grad=True, dtype=dtype))
