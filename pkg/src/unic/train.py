"""Training loop: teacher forcing with noise injection, cosine schedule.

Every random draw in an epoch comes from one generator keyed on
(seed, epoch), consumed in a fixed order, so restarting from an
epoch-boundary checkpoint reproduces the uninterrupted run bit for bit.
Optimizer moments ride along inside the checkpoint.
"""

import csv
import dataclasses
import os

import numpy as np

from . import field as fld
from . import nn
from .collision import BodySnapshot, resolve as collision_resolve
from .metrics import rmse_cm
from .motion import root_transform_from_frame

RESOLVE_RADIUS = 0.005


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 300
    lr_max: float = 1e-4
    loss_scale: float = 1e4
    vertex_budget: int = 10000    # vertices per optimizer step
    rollout_horizon: int = 1      # >1 trains against short open-loop windows
    jitter_std: float = 0.002     # meters, on the conditioning frame
    dropout: float = 0.25         # encoder hidden units, training passes only
    weight_decay: float = 1e-4
    seed: int = 0
    val_every: int = 25
    checkpoint_every: int = 0     # epochs; 0 keeps only the final checkpoint

    def __post_init__(self):
        if self.epochs < 0 or self.vertex_budget < 1:
            raise ValueError("epochs must be >= 0, vertex_budget positive")
        if self.rollout_horizon < 1:
            raise ValueError("rollout_horizon must be >= 1")
        if not 0 <= self.jitter_std < 0.1:
            raise ValueError("jitter_std is in meters; expected [0, 0.1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


def geometry_loss(pred, target, scale=1.0):
    """scale * mean over vertices of the squared displacement norm."""
    target = np.asarray(target)
    d = nn.sub(pred, nn.Tensor(target.astype(pred.data.dtype)))
    sq = nn.mul(d, d)
    return nn.scale(nn.tsum(sq), scale / target.shape[0])


def make_batches(items, budget, vertices, rng):
    """Shuffle and partition `items` so each batch holds ~budget vertices.

    Every item appears in exactly one batch; the tail batch may be short.
    """
    per = max(1, int(budget) // max(1, int(vertices)))
    order = rng.permutation(len(items))
    return [[items[i] for i in order[k:k + per]]
            for k in range(0, len(order), per)]


@dataclasses.dataclass
class ClipArrays:
    """Training view of one dataset: pairs x_t for t >= 1, targets, roots."""

    garment: np.ndarray          # (T, V, 3) float32
    pairs: np.ndarray            # (T, 2D) float32; row t is [c_{t-1}, c_t]
    roots: list                  # per-frame (R, r)
    bodies: list = None


def prepare_clip(ds, num_joints=None, with_bodies=False):
    J = ds.num_joints if num_joints is None else num_joints
    motion = np.asarray(ds.motion, dtype=np.float32)
    prev = np.vstack([motion[:1], motion[:-1]])
    pairs = np.concatenate([prev, motion], axis=1)
    roots = [root_transform_from_frame(motion[t], J)
             for t in range(len(motion))]
    bodies = None
    if with_bodies:
        bodies = [BodySnapshot(ds.body_pos[t].astype(np.float64),
                               ds.body_nrm[t].astype(np.float64),
                               cell_size=ds.cell_size)
                  for t in range(len(motion))]
    return ClipArrays(garment=np.asarray(ds.garment, dtype=np.float32),
                      pairs=pairs, roots=roots, bodies=bodies)


def _frame_root(model, clip, t):
    return clip.roots[t] if model.hyper.root_frame_queries else None


def train_step(model, batch, opt, lr, cfg, rng):
    """One optimizer step over a list of (clip, frame) items.

    Teacher forcing: the conditioning garment is the previous ground-truth
    frame plus Gaussian jitter; with rollout_horizon > 1 the window rolls
    open-loop, feeding each prediction (values only) into the next step.
    All items share one tape pass per horizon step. The loss compares
    root-frame deltas against root-mapped target deltas; rotations keep
    norms, so the value matches the world-space residual exactly.
    Returns the batch loss as a float.
    """
    for p in opt.params:
        p.zero_grad()
    root_q = model.hyper.root_frame_queries
    prevs = np.stack([clip.garment[t - 1] for clip, t in batch])
    if cfg.jitter_std > 0:
        prevs = prevs + rng.normal(
            0.0, cfg.jitter_std, prevs.shape).astype(prevs.dtype)
    horizons = [min(cfg.rollout_horizon, clip.garment.shape[0] - t)
                for clip, t in batch]
    count = sum(horizons)
    V = prevs.shape[1]
    total = None
    with nn.Tape() as tape:
        for h in range(max(horizons)):
            idx = [i for i in range(len(batch)) if horizons[i] > h]
            sub_prev = prevs[idx]
            pairs = np.stack([batch[i][0].pairs[batch[i][1] + h] for i in idx])
            targets = np.stack(
                [batch[i][0].garment[batch[i][1] + h] for i in idx])
            roots = ([batch[i][0].roots[batch[i][1] + h] for i in idx]
                     if root_q else None)
            delta = model.predict_batch_local(sub_prev, pairs, rng,
                                              roots=roots)
            tloc = targets - sub_prev
            if root_q:
                tloc = np.stack([tloc[k] @ roots[k][0]
                                 for k in range(len(idx))])
            loss = geometry_loss(delta, tloc.reshape(-1, 3), cfg.loss_scale)
            # geometry_loss averages over the whole flat batch; weight by
            # the item count so uneven horizons keep the per-item mean.
            total = (nn.scale(loss, len(idx)) if total is None
                     else nn.add(total, nn.scale(loss, len(idx))))
            if h + 1 < max(horizons):
                dw = delta.data.reshape(len(idx), V, 3)
                if root_q:
                    dw = np.stack([dw[k] @ roots[k][0].T
                                   for k in range(len(idx))])
                prevs[idx] = (sub_prev + dw).astype(prevs.dtype)
        total = nn.scale(total, 1.0 / count)
    tape.backward(total)
    opt.step(lr=lr)
    return float(total.data)


def validation_rmse_cm(model, clips, workers=1, resolve=False):
    """Pooled open-loop rollout error over whole clips, in cm."""
    preds, targets = [], []
    for clip in clips:
        roots = clip.roots if model.hyper.root_frame_queries else None
        bodies = clip.bodies if resolve else None
        states = fld.rollout(clip.garment[0], clip.pairs[1:], model,
                             roots=roots[1:] if roots is not None else None,
                             bodies=bodies[1:] if bodies is not None else None,
                             resolve_radius=RESOLVE_RADIUS if resolve else None,
                             workers=workers)
        preds.append(np.stack(states[1:]))
        targets.append(clip.garment[1:])
    return rmse_cm(np.concatenate(preds), np.concatenate(targets))


def teacher_forced_rmse_cm(model, clip, workers=1):
    """Closed-loop error: each frame predicted from the true previous frame."""
    preds = []
    for t in range(1, clip.garment.shape[0]):
        logits = model.encoder.encode_np(clip.pairs[t])
        z = model.sample_np(logits)[0]
        preds.append(fld.step(clip.garment[t - 1], z, model.field,
                              root=_frame_root(model, clip, t),
                              workers=workers,
                              positional_encoding=model.hyper.positional_encoding,
                              frame_index=t))
    return rmse_cm(np.stack(preds), clip.garment[1:])


def rollout_dataset(model, ds, workers=1, resolve=False):
    """Open-loop prediction of a dataset; returns (T, V, 3) float32."""
    clip = prepare_clip(ds, with_bodies=resolve)
    roots = clip.roots if model.hyper.root_frame_queries else None
    states = fld.rollout(clip.garment[0], clip.pairs[1:], model,
                         roots=roots[1:] if roots is not None else None,
                         bodies=clip.bodies[1:] if resolve else None,
                         resolve_radius=RESOLVE_RADIUS if resolve else None,
                         workers=workers)
    return np.stack(states)


def _epoch_rng(seed, epoch):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(epoch)]))


def optimizer_state_arrays(opt):
    out = {}
    for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
        out[f"m.{i}"] = m
        out[f"v.{i}"] = v
    out["step_count"] = np.array([opt.state.step_count], dtype=np.int64)
    return out


def load_optimizer_state(opt, arrays):
    from .errors import DimensionError

    for i in range(len(opt.state.m)):
        try:
            m, v = arrays[f"m.{i}"], arrays[f"v.{i}"]
        except KeyError as e:
            raise DimensionError(f"optimizer state missing slot {i}") from e
        if m.shape != opt.state.m[i].shape:
            raise DimensionError(
                f"optimizer slot {i} shape {m.shape}, "
                f"expected {opt.state.m[i].shape}")
        opt.state.m[i][...] = m
        opt.state.v[i][...] = v
    opt.state.step_count = int(arrays["step_count"][0])


class CsvLogger:
    COLUMNS = ("epoch", "step", "lr", "train_loss", "val_rmse_cm")

    def __init__(self, path, append=False):
        self.path = path
        fresh = not (append and os.path.exists(path))
        self._fh = open(path, "a" if append else "w", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._w.writerow(self.COLUMNS)
            self._fh.flush()

    def row(self, epoch, step, lr, train_loss, val_rmse_cm=None):
        self._w.writerow([epoch, step, f"{lr:.8e}", f"{train_loss:.8e}",
                          "" if val_rmse_cm is None else f"{val_rmse_cm:.6f}"])
        self._fh.flush()

    def close(self):
        self._fh.close()


def train(model, datasets, cfg, val_datasets=(), log_path=None,
          checkpoint_path=None, workers=1, start_epoch=0, optimizer=None,
          progress=None):
    """Fit the model; returns (optimizer, history list of row dicts).

    `datasets` and `val_datasets` are SequenceDatasets. Pass `optimizer`
    and `start_epoch` (from a checkpoint) to resume; randomness is keyed
    on (cfg.seed, epoch) so the continuation is bitwise faithful.
    """
    clips = [prepare_clip(ds) for ds in datasets]
    val_clips = [prepare_clip(ds) for ds in val_datasets]
    model.encoder.dropout = cfg.dropout
    items = [(clip, t) for clip in clips
             for t in range(1, clip.garment.shape[0])]
    if not items:
        raise ValueError("training needs at least one clip with 2+ frames")
    V = model.num_vertices
    per = max(1, cfg.vertex_budget // max(1, V))
    steps_per_epoch = (len(items) + per - 1) // per
    total_steps = cfg.epochs * steps_per_epoch

    opt = optimizer
    if opt is None:
        opt = nn.AdamW(model.parameters(), lr=cfg.lr_max,
                       weight_decay=cfg.weight_decay)
    if cfg.epochs == 0:
        if checkpoint_path:
            from .dataio import save_checkpoint

            save_checkpoint(checkpoint_path, model, step=0,
                            optimizer_state=optimizer_state_arrays(opt),
                            extra={"train_config": dataclasses.asdict(cfg)})
        return opt, []
    logger = CsvLogger(log_path, append=start_epoch > 0) if log_path else None
    history = []
    try:
        for epoch in range(start_epoch, cfg.epochs):
            rng = _epoch_rng(cfg.seed, epoch)
            batches = make_batches(items, cfg.vertex_budget, V, rng)
            last_loss, step = 0.0, epoch * steps_per_epoch
            for b, batch in enumerate(batches):
                step = epoch * steps_per_epoch + b
                lr = nn.cosine_lr(step, total_steps, cfg.lr_max)
                last_loss = train_step(model, batch, opt, lr, cfg, rng)
            val = None
            if val_clips and (epoch % cfg.val_every == cfg.val_every - 1
                              or epoch == cfg.epochs - 1):
                val = validation_rmse_cm(model, val_clips, workers=workers)
            row = {"epoch": epoch, "step": step,
                   "lr": nn.cosine_lr(step, total_steps, cfg.lr_max),
                   "train_loss": last_loss, "val_rmse_cm": val}
            history.append(row)
            if logger:
                logger.row(**row)
            if progress:
                progress(row)
            if checkpoint_path and (
                    epoch == cfg.epochs - 1
                    or (cfg.checkpoint_every
                        and epoch % cfg.checkpoint_every
                        == cfg.checkpoint_every - 1)):
                from .dataio import save_checkpoint

                save_checkpoint(checkpoint_path, model, step=epoch + 1,
                                optimizer_state=optimizer_state_arrays(opt),
                                extra={"train_config": dataclasses.asdict(cfg)})
    finally:
        if logger:
            logger.close()
    return opt, history


def resume(checkpoint_path):
    """Rebuild (model, start_epoch, optimizer, cfg) from a checkpoint."""
    from .dataio import load_checkpoint

    model, step, opt_arrays, extra = load_checkpoint(checkpoint_path)
    cfg = TrainConfig(**(extra or {}).get("train_config", {}))
    opt = nn.AdamW(model.parameters(), lr=cfg.lr_max,
                   weight_decay=cfg.weight_decay)
    if opt_arrays:
        load_optimizer_state(opt, opt_arrays)
    return model, step, opt, cfg
