"""Categorical motion encoder.

Three dense layers with ELU map the two-frame motion input to a logit grid
of shape (channels x categories); one value per channel is then selected
categorically (Gumbel-Softmax straight-through in training, argmax in eval)
from a learned codebook.
"""

import numpy as np

from . import nn
from .errors import DimensionError


class MotionEncoder:
    """Holds the 3 dense layers; output dimension is channels * categories."""

    def __init__(self, layers, latent_channels, latent_categories, dropout=0.25):
        if layers[-1].out_dim != latent_channels * latent_categories:
            raise DimensionError("encoder output dim must be channels * categories")
        self.layers = layers
        self.latent_channels = latent_channels
        self.latent_categories = latent_categories
        self.dropout = dropout

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def encode(self, x, training=False, rng=None):
        """Logit grid for a batch of motion pairs: (N, 2*D_c) -> (N, C, K)."""
        x = nn.as_tensor(x)
        if x.data.ndim == 1:
            x = nn.reshape(x, (1, -1))
        if x.data.shape[1] != self.input_dim:
            raise DimensionError(
                f"encoder expects input width {self.input_dim}, got {x.data.shape[1]}")
        h = x
        for layer in self.layers[:-1]:
            h = nn.elu(layer(h))
            if training:
                h = nn.dropout(h, self.dropout, training=True, rng=rng)
        out = self.layers[-1](h)
        return nn.reshape(out, (-1, self.latent_channels, self.latent_categories))

    def encode_np(self, x):
        """Inference fast path (no tape, no dropout)."""
        h = np.atleast_2d(np.asarray(x, dtype=self.layers[0].weight.dtype))
        for layer in self.layers[:-1]:
            h = layer.forward_np(h)
            h = np.where(h < 0, np.expm1(np.minimum(h, 0)), h)
        out = self.layers[-1].forward_np(h)
        return out.reshape(-1, self.latent_channels, self.latent_categories)


def init_encoder(input_dim, hidden, latent_channels, latent_categories, rng,
                 dtype=np.float32, dropout=0.25):
    layers = [
        nn.init_dense(input_dim, hidden, rng, dtype=dtype),
        nn.init_dense(hidden, hidden, rng, dtype=dtype),
        nn.init_dense(hidden, latent_channels * latent_categories, rng, dtype=dtype),
    ]
    return MotionEncoder(layers, latent_channels, latent_categories, dropout=dropout)


def init_codebook(latent_channels, latent_categories, rng, dtype=np.float32):
    """Learned per-channel category values, trained jointly with the networks."""
    e = rng.uniform(-1.0, 1.0, size=(latent_channels, latent_categories)).astype(dtype)
    return nn.Tensor(e, requires_grad=True, dtype=dtype)


def sample_latent(logits, codebook, training=False, temperature=1.0, rng=None,
                  cache=None, use_codebook=True):
    """Select one value per channel.

    Training draws a hard straight-through Gumbel-Softmax sample per channel;
    eval takes the argmax deterministically. With use_codebook=False the
    selected values come from the logits themselves instead of the codebook.
    """
    logits = nn.as_tensor(logits)
    if use_codebook and logits.data.shape[-2:] != codebook.data.shape:
        raise DimensionError(
            f"logit grid {logits.data.shape} does not match codebook {codebook.data.shape}")
    if training:
        w = nn.gumbel_softmax(logits, temperature=temperature, hard=True,
                              rng=rng, cache=cache)
    else:
        idx = logits.data.argmax(axis=-1)
        one_hot = np.zeros_like(logits.data)
        np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
        w = nn.Tensor(one_hot)
    values = codebook if use_codebook else logits
    return nn.tsum(nn.mul(w, values), axis=-1)


def sample_latent_np(logits, codebook, use_codebook=True):
    """Eval-mode selection on raw arrays: (N, C, K) -> (N, C)."""
    logits = np.asarray(logits)
    idx = logits.argmax(axis=-1)
    if use_codebook:
        return np.asarray(codebook)[np.arange(logits.shape[-2]), idx]
    return np.take_along_axis(logits, idx[..., None], axis=-1)[..., 0]
