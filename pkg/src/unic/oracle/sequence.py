"""Run the cloth solver over a pose sequence and package the result.

The garment is authored in the character root frame; frame 0 maps it
through the first pose's root transform, holds the pins there while the
cloth settles, then the remaining poses are stepped one frame at a time.
Only the settled state and the per-frame states are emitted, never the
settling transient. A single-pose sequence therefore yields exactly one
frame: the static drape.
"""

import numpy as np

from ..dataio import SequenceDataset
from ..motion import forward_kinematics, motion_frames_for_poses
from .cloth import SimConfig, SimState, capsule_penetration, settle, xpbd_step

SETTLE_TOL = 2e-5
SETTLE_MAX_STEPS = 400


def pin_world_targets(spec, rots, poss):
    """World-space positions the pinned vertices are driven to."""
    if len(spec.pinned) == 0:
        return np.zeros((0, 3))
    R = rots[spec.pin_joints]
    base = poss[spec.pin_joints]
    return base + np.einsum("nij,nj->ni", R, spec.pin_local)


def initial_cloth_positions(spec, pose):
    """Rest shape carried rigidly by the first pose's root transform."""
    return spec.rest_pos @ pose.root_rot.T + pose.root_pos


def simulate_sequence(skeleton, poses, spec, body, cfg=None, fps=30,
                      garment_name="", kind="", seed=0,
                      settle_tol=SETTLE_TOL, penetration_limit=None):
    """Solve the full sequence; returns a SequenceDataset.

    `penetration_limit`, when set, audits every emitted frame against the
    body capsules and reports the worst offender in the error message.
    """
    if len(poses) == 0:
        raise ValueError("need at least one pose")
    if cfg is None:
        cfg = SimConfig()
    dt = 1.0 / fps

    fk = [forward_kinematics(skeleton, p) for p in poses]
    capsules = [body.world_capsules(rots, poss) for rots, poss in fk]
    targets = [pin_world_targets(spec, rots, poss) for rots, poss in fk]

    state = SimState(pos=initial_cloth_positions(spec, poses[0]),
                     vel=np.zeros_like(spec.rest_pos))
    settle(state, spec, capsules[0], cfg, targets[0], tol=settle_tol,
           max_steps=SETTLE_MAX_STEPS)
    state.vel[:] = 0.0

    T = len(poses)
    garment = np.empty((T, len(spec.rest_pos), 3), dtype=np.float32)
    garment[0] = state.pos
    worst = (0.0, -1)
    for t in range(1, T):
        xpbd_step(state, spec, capsules[t], cfg,
                  pin_targets=targets[t], pin_targets_prev=targets[t - 1],
                  frame=t)
        garment[t] = state.pos
        if penetration_limit is not None:
            depth = capsule_penetration(state.pos, capsules[t])
            if depth > worst[0]:
                worst = (depth, t)
    if penetration_limit is not None and worst[0] > penetration_limit:
        from ..errors import NumericError

        raise NumericError(
            f"cloth penetrates body by {worst[0]:.2e} m "
            f"(limit {penetration_limit:.2e})", frame=worst[1])

    B = body.shell_verts.shape[0]
    body_pos = np.empty((T, B, 3), dtype=np.float32)
    body_nrm = np.empty((T, B, 3), dtype=np.float32)
    for t, (rots, poss) in enumerate(fk):
        pos, nrm = body.shell_world(rots, poss)
        body_pos[t] = pos
        body_nrm[t] = nrm

    motion = motion_frames_for_poses(poses, skeleton, dt=dt).astype(np.float32)
    return SequenceDataset(
        fps=float(fps),
        num_joints=skeleton.num_joints,
        motion=motion,
        garment=garment,
        body_pos=body_pos,
        body_nrm=body_nrm,
        garment_faces=np.asarray(spec.faces, dtype=np.int32),
        body_faces=np.asarray(body.shell_faces, dtype=np.int32),
        cell_size=float(body.cell_size),
        skeleton=skeleton.to_dict(),
        garment_name=garment_name,
        kind=kind,
        seed=seed,
    ).validate()
