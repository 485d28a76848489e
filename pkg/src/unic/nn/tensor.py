"""Reverse-mode autodiff over numpy arrays.

A Tape records forward nodes in execution order; backward() replays them
once, in reverse, which is a valid reverse topological order. Storage is
float32 by default; passing float64 parameters switches the whole graph to
double precision (used only for finite-difference gradient checking).
"""

import numpy as np


class TapeError(RuntimeError):
    """Raised when a tape is misused (e.g. backward on a consumed tape)."""


class Tensor:
    """Array node. Leaves with requires_grad=True collect .grad in backward."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE = None


class Tape:
    """Records one forward pass; single-use for backward."""

    def __init__(self):
        self._nodes = []  # (out Tensor, backward fn: grad -> [(input, grad_contrib)])
        self._consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, output, seed_gradient=None):
        """Accumulate gradients of `output` into every reachable leaf's .grad."""
        if self._consumed:
            raise TapeError("backward on consumed tape")
        self._consumed = True
        if seed_gradient is None:
            seed_gradient = np.ones_like(output.data)
        grads = {id(output): np.asarray(seed_gradient, dtype=output.data.dtype)}
        if output.requires_grad:
            _accum_leaf(output, grads[id(output)])
        for out, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, contrib in backward_fn(g):
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
                if inp.requires_grad:
                    _accum_leaf(inp, contrib)


def _accum_leaf(t, g):
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _tape_for(*tensors):
    if _ACTIVE_TAPE is None:
        return None
    return _ACTIVE_TAPE


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        def backward(g):
            return [(a, _unbroadcast(g, a.data.shape)),
                    (b, _unbroadcast(g, b.data.shape))]
        tape.record(out, backward)
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        def backward(g):
            return [(a, _unbroadcast(g, a.data.shape)),
                    (b, _unbroadcast(-g, b.data.shape))]
        tape.record(out, backward)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        def backward(g):
            return [(a, _unbroadcast(g * bd, ad.shape)),
                    (b, _unbroadcast(g * ad, bd.shape))]
        tape.record(out, backward)
    return out


def scale(a, s):
    a = as_tensor(a)
    out = Tensor(a.data * s)
    tape = _tape_for(a)
    if tape is not None:
        def backward(g):
            return [(a, g * s)]
        tape.record(out, backward)
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        def backward(g):
            return [(a, g @ bd.T), (b, ad.T @ g)]
        tape.record(out, backward)
    return out


def linear(x, weight, bias):
    """Dense layer: y = x @ W.T + b, x is (N, in), W is (out, in), b is (out,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"linear: input shape {x.data.shape} incompatible with weight {weight.data.shape}")
    out = Tensor(x.data @ weight.data.T + bias.data)
    tape = _tape_for(x, weight, bias)
    if tape is not None:
        xd, wd = x.data, weight.data
        def backward(g):
            return [(x, g @ wd), (weight, g.T @ xd), (bias, g.sum(axis=0))]
        tape.record(out, backward)
    return out


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    tape = _tape_for(x)
    if tape is not None:
        mask = x.data > 0
        def backward(g):
            return [(x, g * mask)]
        tape.record(out, backward)
    return out


def elu(x):
    """ELU with alpha=1: x for x >= 0, exp(x)-1 below."""
    x = as_tensor(x)
    neg = x.data < 0
    expm1 = np.expm1(np.minimum(x.data, 0))
    out = Tensor(np.where(neg, expm1, x.data))
    tape = _tape_for(x)
    if tape is not None:
        deriv = np.where(neg, expm1 + 1.0, 1.0).astype(x.data.dtype)
        def backward(g):
            return [(x, g * deriv)]
        tape.record(out, backward)
    return out


def dropout(x, p, training, rng):
    """Zero entries with probability p and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p)
    factor = 1.0 / (1.0 - p)
    mask = keep.astype(x.data.dtype) * x.data.dtype.type(factor)
    out = Tensor(x.data * mask)
    tape = _tape_for(x)
    if tape is not None:
        def backward(g):
            return [(x, g * mask)]
        tape.record(out, backward)
    return out


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    tape = _tape_for(x)
    if tape is not None:
        orig = x.data.shape
        def backward(g):
            return [(x, g.reshape(orig))]
        tape.record(out, backward)
    return out


def broadcast_to(x, shape):
    x = as_tensor(x)
    out = Tensor(np.broadcast_to(x.data, shape).copy())
    tape = _tape_for(x)
    if tape is not None:
        orig = x.data.shape
        def backward(g):
            return [(x, _unbroadcast(g, orig))]
        tape.record(out, backward)
    return out


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    tape = _tape_for(*parts)
    if tape is not None:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        def backward(g):
            pieces = np.split(g, splits, axis=axis)
            return list(zip(parts, pieces))
        tape.record(out, backward)
    return out


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    tape = _tape_for(x)
    if tape is not None:
        shape = x.data.shape
        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return [(x, np.broadcast_to(gg, shape).copy())]
        tape.record(out, backward)
    return out


def tmean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(tsum(x, axis=axis), 1.0 / n)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)
    tape = _tape_for(x)
    if tape is not None:
        def backward(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            return [(x, s * (g - dot))]
        tape.record(out, backward)
    return out


class DetachCache:
    """Freezes detach-node values so finite differences can replay the forward
    pass with every detached branch held constant (the detach contract)."""

    def __init__(self):
        self.mode = "record"
        self.values = []
        self._cursor = 0

    def begin_replay(self):
        self.mode = "replay"
        self._cursor = 0

    def reset(self):
        self._cursor = 0

    def take(self, value):
        if self.mode == "record":
            self.values.append(np.array(value, copy=True))
            return value
        v = self.values[self._cursor]
        self._cursor += 1
        return v


def detach(x, cache=None):
    """Cut the graph: forward identity, zero gradient into x."""
    x = as_tensor(x)
    v = x.data
    if cache is not None:
        v = cache.take(v)
    return Tensor(v.copy())


def gumbel_noise(rng, shape, dtype=np.float32, eps=1e-20):
    u = rng.random(shape)
    return (-np.log(-np.log(u + eps) + eps)).astype(dtype)


def gumbel_softmax(logits, temperature=1.0, hard=True, rng=None, cache=None):
    """Categorical relaxation over the last axis.

    Soft mode returns softmax((logits + Gumbel)/tau). Hard mode returns the
    one-hot argmax with the soft sample's gradient (straight-through).
    """
    logits = as_tensor(logits)
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("gumbel_softmax: non-finite logits")
    if rng is None:
        raise ValueError("gumbel_softmax requires a caller-owned rng")
    noise = gumbel_noise(rng, logits.data.shape, dtype=logits.data.dtype)
    perturbed = add(logits, Tensor(noise))
    soft = softmax(scale(perturbed, 1.0 / temperature), axis=-1)
    if not hard:
        return soft
    idx = soft.data.argmax(axis=-1)
    one_hot = np.zeros_like(soft.data)
    np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
    offset = one_hot - soft.data
    if cache is not None:
        offset = cache.take(offset)
    return add(Tensor(offset.copy()), soft)
