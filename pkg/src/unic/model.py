"""Model bundle: motion encoder, codebook, and deformation field together.

One GarmentModel is trained per garment instance. The bundle owns the
hyperparameters and skeleton dimensions so checkpoints can validate shape
compatibility on load.
"""

import numpy as np

from . import encoder as enc
from . import field as fld
from . import nn
from .errors import DimensionError
from .profiles import Hyper


class GarmentModel:

    def __init__(self, hyper, num_joints, motion_dim, encoder_net, codebook,
                 field, num_vertices):
        self.hyper = hyper
        self.num_joints = num_joints
        self.motion_dim = motion_dim
        self.encoder = encoder_net
        self.codebook = codebook
        self.field = field
        self.num_vertices = num_vertices

    def parameters(self):
        ps = self.encoder.parameters() + self.field.parameters()
        if self.hyper.use_codebook:
            ps.append(self.codebook)
        return ps

    def named_arrays(self):
        """Stable name -> array mapping for checkpoint serialization."""
        out = {}
        for i, layer in enumerate(self.encoder.layers):
            out[f"encoder.{i}.weight"] = layer.weight.data
            out[f"encoder.{i}.bias"] = layer.bias.data
        out["codebook"] = self.codebook.data
        for i, layer in enumerate(self.field.layers):
            out[f"field.{i}.weight"] = layer.weight.data
            out[f"field.{i}.bias"] = layer.bias.data
        return out

    def load_arrays(self, arrays):
        have = self.named_arrays()
        missing = sorted(set(have) - set(arrays))
        if missing:
            raise DimensionError(f"checkpoint missing arrays: {missing[:4]}")
        for name, dst in have.items():
            src = np.asarray(arrays[name])
            if src.shape != dst.shape:
                raise DimensionError(
                    f"checkpoint array {name} has shape {src.shape}, "
                    f"expected {dst.shape}")
            dst[...] = src

    # Latent sampling -----------------------------------------------------

    def sample(self, logits, training, rng=None, cache=None):
        """Tape-recorded latent from encoder logits (Tensor in, Tensor out)."""
        return enc.sample_latent(
            logits, self.codebook, training=training,
            temperature=self.hyper.temperature, rng=rng, cache=cache,
            use_codebook=self.hyper.use_codebook)

    def sample_np(self, logits):
        """Deterministic argmax latent for inference (ndarray in/out)."""
        return enc.sample_latent_np(
            np.atleast_2d(logits), self.codebook.data,
            use_codebook=self.hyper.use_codebook)

    # Training forward -----------------------------------------------------

    @property
    def dtype(self):
        return self.field.layers[0].weight.data.dtype

    def predict_frame(self, garment_prev, pair, rng, cache=None, root=None):
        """One teacher-forced step on the tape; returns the delta Tensor (V, 3)."""
        dt = self.dtype
        x = nn.Tensor(np.atleast_2d(np.asarray(pair, dtype=dt)))
        logits = self.encoder.encode(x, training=True, rng=rng)
        z = self.sample(logits, training=True, rng=rng, cache=cache)
        coords = np.asarray(garment_prev, dtype=dt)
        if root is not None:
            coords = fld.to_root_frame(coords, root[0], root[1]).astype(dt)
        coords_enc = nn.Tensor(
            fld.encode_coords(coords, self.hyper.positional_encoding))
        zb = nn.broadcast_to(nn.reshape(z, (1, -1)),
                             (coords.shape[0], self.hyper.latent_channels))
        query = nn.concat([coords_enc, zb], axis=1)
        delta = self.field.forward(query)
        if root is not None:
            # local row-vector d maps to world as d @ R^T
            rot_t = nn.Tensor(np.asarray(root[0], dtype=dt).T)
            delta = nn.matmul(delta, rot_t)
        return delta

    def predict_batch_local(self, garments_prev, pairs, rng, cache=None,
                            roots=None):
        """Teacher-forced deltas for N frames in one tape pass.

        garments_prev: (N, V, 3); pairs: (N, 2*D_c); roots: optional list
        of N (rotation, position). Returns a (N*V, 3) Tensor, frame-major,
        expressed in each frame's root frame when roots are given. The
        squared-error loss is rotation-invariant, so training compares
        these against root-mapped target deltas instead of rotating every
        prediction back to world space on the tape.
        """
        dt = self.dtype
        N, V = garments_prev.shape[0], garments_prev.shape[1]
        x = nn.Tensor(np.asarray(pairs, dtype=dt))
        logits = self.encoder.encode(x, training=True, rng=rng)
        z = self.sample(logits, training=True, rng=rng, cache=cache)  # (N, C)
        if roots is not None:
            coords = np.stack([
                fld.to_root_frame(garments_prev[i], roots[i][0], roots[i][1])
                for i in range(N)]).astype(dt)
        else:
            coords = np.asarray(garments_prev, dtype=dt)
        coords_enc = nn.Tensor(fld.encode_coords(
            coords.reshape(N * V, -1), self.hyper.positional_encoding))
        C = self.hyper.latent_channels
        zb = nn.reshape(nn.broadcast_to(nn.reshape(z, (N, 1, C)), (N, V, C)),
                        (N * V, C))
        query = nn.concat([coords_enc, zb], axis=1)
        return self.field.forward(query)


def init_model(hyper, num_joints, motion_dim, num_vertices, seed,
               dtype=np.float32):
    rng = nn.make_rng(seed)
    encoder_net = enc.init_encoder(
        2 * motion_dim, hyper.encoder_hidden, hyper.latent_channels,
        hyper.latent_categories, rng, dtype=dtype)
    codebook = enc.init_codebook(hyper.latent_channels,
                                 hyper.latent_categories, rng, dtype=dtype)
    field = fld.init_field(hyper.latent_channels, hyper.field_hidden, rng,
                           dtype=dtype,
                           positional_encoding=hyper.positional_encoding)
    return GarmentModel(hyper, num_joints, motion_dim, encoder_net, codebook,
                        field, num_vertices)


def model_metadata(model):
    return {
        "hyper": model.hyper.to_dict(),
        "num_joints": int(model.num_joints),
        "motion_dim": int(model.motion_dim),
        "num_vertices": int(model.num_vertices),
    }


def model_from_metadata(meta, seed=0):
    hyper = Hyper.from_dict(meta["hyper"])
    return init_model(hyper, int(meta["num_joints"]), int(meta["motion_dim"]),
                      int(meta["num_vertices"]), seed)
