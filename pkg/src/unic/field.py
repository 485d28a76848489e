"""Neural deformation field: per-vertex displacement decoder and rollout.

Each garment vertex coordinate is concatenated with the sampled motion
latent and pushed through an 8-layer ReLU MLP (input re-concatenated at
layer 5). The decoded displacement advances the vertex, and rollout feeds
each predicted garment back in autoregressively.
"""

from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np

from . import nn
from .errors import DimensionError, NumericError

SKIP_LAYER = 4  # 0-based index of the layer that re-consumes the query input


def env_workers(default=1):
    try:
        return max(1, int(os.environ.get("UNIC_THREADS", default)))
    except ValueError:
        return default


class DeformationField:
    """8 dense layers, hidden width H, ReLU, skip at layer 5, 3 outputs."""

    def __init__(self, layers, query_dim):
        if len(layers) != 8:
            raise DimensionError("deformation field needs exactly 8 layers")
        if layers[-1].out_dim != 3:
            raise DimensionError("deformation field must output 3 components")
        self.layers = layers
        self.query_dim = query_dim
        self.query_count = 0  # per-vertex queries served, for instrumentation

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def forward(self, q):
        """Training path on the tape; q is a Tensor (N, query_dim)."""
        if q.data.shape[1] != self.query_dim:
            raise DimensionError(
                f"field expects query width {self.query_dim}, got {q.data.shape[1]}")
        self.query_count += q.data.shape[0]
        h = q
        for i, layer in enumerate(self.layers[:-1]):
            if i == SKIP_LAYER:
                h = nn.concat([h, q], axis=1)
            h = nn.relu(layer(h))
        return self.layers[-1](h)

    def _forward_np_chunk(self, q):
        h = q
        for i, layer in enumerate(self.layers[:-1]):
            if i == SKIP_LAYER:
                h = np.concatenate([h, q], axis=1)
            h = layer.forward_np(h)
            np.maximum(h, 0, out=h)
        return self.layers[-1].forward_np(h)

    def forward_np(self, q, workers=1):
        """Inference path; optionally splits rows across worker threads."""
        q = np.asarray(q, dtype=self.layers[0].weight.dtype)
        if q.ndim != 2 or q.shape[1] != self.query_dim:
            raise DimensionError(
                f"field expects queries (N, {self.query_dim}), got {q.shape}")
        self.query_count += q.shape[0]
        if workers <= 1 or q.shape[0] < 2 * workers:
            return self._forward_np_chunk(q)
        chunks = np.array_split(q, workers, axis=0)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(self._forward_np_chunk, chunks))
        return np.concatenate(outs, axis=0)


def init_field(latent_channels, hidden, rng, dtype=np.float32,
               positional_encoding=0):
    in_dim = latent_channels + 3 + 6 * positional_encoding
    dims = [in_dim] + [hidden] * 7 + [3]
    layers = []
    for i in range(8):
        d_in = dims[i] + (in_dim if i == SKIP_LAYER else 0)
        layers.append(nn.init_dense(d_in, dims[i + 1], rng, dtype=dtype))
    # Zero output head: the untrained field displaces nothing, so an early
    # rollout stays at the drape instead of exploding at meter scale.
    layers[-1].weight.data[...] = 0.0
    layers[-1].bias.data[...] = 0.0
    return DeformationField(layers, in_dim)


def encode_coords(coords, bands):
    """Optional sinusoidal encoding of coordinates (off by default)."""
    if bands <= 0:
        return coords
    parts = [coords]
    for b in range(bands):
        f = (2.0 ** b) * np.pi
        parts.append(np.sin(f * coords))
        parts.append(np.cos(f * coords))
    return np.concatenate(parts, axis=-1)


def build_queries(garment, latent, positional_encoding=0):
    """Row i is [vertex_i, latent]; width latent_channels + 3 (+ encoding)."""
    garment = np.asarray(garment, dtype=np.float32)
    latent = np.asarray(latent, dtype=np.float32).reshape(-1)
    coords = encode_coords(garment, positional_encoding)
    z = np.broadcast_to(latent, (garment.shape[0], latent.shape[0]))
    return np.concatenate([coords, z], axis=1)


def decode(field, queries, workers=1):
    """Per-row displacements; rows are independent."""
    return field.forward_np(queries, workers=workers)


def to_root_frame(points, root_rot, root_pos):
    return (np.asarray(points, dtype=np.float64) - root_pos) @ root_rot


def from_root_frame_delta(delta, root_rot):
    return np.asarray(delta, dtype=np.float64) @ root_rot.T


def step(garment, latent, field, root=None, workers=1,
         positional_encoding=0, frame_index=None):
    """Advance one frame: every vertex moves by its decoded displacement.

    `root` is an optional (rotation, position) pair; when given, queries are
    expressed in that frame and displacements mapped back to world space.
    """
    garment = np.asarray(garment, dtype=np.float32)
    if root is not None:
        R, r = root
        coords = to_root_frame(garment, R, r).astype(np.float32)
    else:
        coords = garment
    q = build_queries(coords, latent, positional_encoding)
    delta = decode(field, q, workers=workers)
    if root is not None:
        delta = from_root_frame_delta(delta, root[0]).astype(np.float32)
    out = garment + delta
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite garment positions after field step",
                           frame=frame_index)
    return out


def rollout(garment0, pairs, model, roots=None, bodies=None,
            resolve_radius=None, workers=1):
    """Autoregressive inference: returns [G_0, G_1_hat, ..., G_T_hat].

    `pairs` is an (T, 2*D_c) array of two-frame motion inputs; `roots` the
    matching (rotation, position) per frame when root-frame queries are on;
    `bodies` optional BodySnapshots for per-frame collision resolution.
    """
    from .collision import resolve as collision_resolve

    states = [np.asarray(garment0, dtype=np.float32)]
    g = states[0]
    for t in range(len(pairs)):
        logits = model.encoder.encode_np(pairs[t])
        z = model.sample_np(logits)[0]
        root = roots[t] if roots is not None else None
        g = step(g, z, model.field, root=root, workers=workers,
                 positional_encoding=model.hyper.positional_encoding,
                 frame_index=t)
        if bodies is not None and resolve_radius is not None:
            g, _ = collision_resolve(g, bodies[t], resolve_radius)
        states.append(g)
    return states
