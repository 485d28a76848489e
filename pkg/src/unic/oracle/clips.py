"""Procedural character clips: idle, walk, turn, sprint_stop.

The character is a 24-joint humanoid (root + 23 local joints). Legs are
posed by exact two-bone IK against scheduled foot plants, so stance feet
are genuinely stationary and the contact detector fires on them. All
randomness comes from the seed; clips are bitwise reproducible.

Conventions: y up, character faces +z in the rest pose, left side is +x.
"""

import numpy as np

from ..motion import (Pose, Skeleton, axis_angle_to_rot, identity_pose,
                      rot_x, rot_y, rot_z)

ANKLE_HEIGHT = 0.06       # ankle target height when the foot is planted (m)
CLIP_KINDS = ("idle", "walk", "turn", "sprint_stop")

_JOINTS = [
    # name, parent name, offset in parent frame
    ("hips", None, (0.0, 0.0, 0.0)),
    ("spine", "hips", (0.0, 0.10, 0.0)),
    ("spine1", "spine", (0.0, 0.11, 0.0)),
    ("spine2", "spine1", (0.0, 0.11, 0.0)),
    ("spine3", "spine2", (0.0, 0.11, 0.0)),
    ("neck", "spine3", (0.0, 0.08, 0.0)),
    ("head", "neck", (0.0, 0.09, 0.0)),
    ("head_top", "head", (0.0, 0.16, 0.0)),
    ("l_clavicle", "spine3", (0.045, 0.06, 0.0)),
    ("l_upperarm", "l_clavicle", (0.13, 0.0, 0.0)),
    ("l_forearm", "l_upperarm", (0.26, 0.0, 0.0)),
    ("l_hand", "l_forearm", (0.25, 0.0, 0.0)),
    ("r_clavicle", "spine3", (-0.045, 0.06, 0.0)),
    ("r_upperarm", "r_clavicle", (-0.13, 0.0, 0.0)),
    ("r_forearm", "r_upperarm", (-0.26, 0.0, 0.0)),
    ("r_hand", "r_forearm", (-0.25, 0.0, 0.0)),
    ("l_upleg", "hips", (0.09, -0.05, 0.0)),
    ("l_leg", "l_upleg", (0.0, -0.42, 0.0)),
    ("l_foot", "l_leg", (0.0, -0.43, 0.0)),
    ("l_toe", "l_foot", (0.0, -0.045, 0.15)),
    ("r_upleg", "hips", (-0.09, -0.05, 0.0)),
    ("r_leg", "r_upleg", (0.0, -0.42, 0.0)),
    ("r_foot", "r_leg", (0.0, -0.43, 0.0)),
    ("r_toe", "r_foot", (0.0, -0.045, 0.15)),
]

_HEEL_OFFSET = (0.0, -0.045, -0.05)
_TOE_OFFSET = (0.0, 0.0, 0.03)


def build_skeleton():
    names = [j[0] for j in _JOINTS]
    parents = [-1] + [names.index(j[1]) for j in _JOINTS[1:]]
    offsets = np.array([j[2] for j in _JOINTS], dtype=np.float64)
    sk = Skeleton(parents=parents, offsets=offsets, names=names,
                  foot_markers=[
                      (names.index("l_foot"), np.array(_HEEL_OFFSET)),
                      (names.index("l_toe"), np.array(_TOE_OFFSET)),
                      (names.index("r_foot"), np.array(_HEEL_OFFSET)),
                      (names.index("r_toe"), np.array(_TOE_OFFSET)),
                  ])
    return sk


def _set_local(pose, sk, name, R):
    pose.joint_rots[sk.index(name) - 1] = R


def _orthonormal_frame(down, forward):
    """Rotation with -y column along `down`, z column near `forward`."""
    y = -down / np.linalg.norm(down)
    z = forward - np.dot(forward, y) * y
    n = np.linalg.norm(z)
    if n < 1e-8:
        # limb parallel to the forward hint; fall back to world x
        z = np.array([1.0, 0.0, 0.0]) - y[0] * y
        n = np.linalg.norm(z)
    z = z / n
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=1)


def solve_leg(pose, sk, side, ankle_target, foot_yaw):
    """Exact two-bone IK: place the ankle at `ankle_target`, foot flat.

    The knee pole direction is the character's forward axis. Targets beyond
    reach are clamped along the hip-to-target line.
    """
    upleg = f"{side}_upleg"
    off_upleg = sk.offsets[sk.index(upleg)]
    off_leg = sk.offsets[sk.index(f"{side}_leg")]
    off_foot = sk.offsets[sk.index(f"{side}_foot")]
    L1 = float(np.linalg.norm(off_leg))
    L2 = float(np.linalg.norm(off_foot))

    root_rot = pose.root_rot
    hip = pose.root_pos + root_rot @ off_upleg
    t_vec = np.asarray(ankle_target, dtype=np.float64) - hip
    dist = float(np.linalg.norm(t_vec))
    d = float(np.clip(dist, abs(L1 - L2) + 1e-4, L1 + L2 - 1e-4))
    t_hat = t_vec / max(dist, 1e-9)

    fwd = root_rot @ np.array([0.0, 0.0, 1.0])
    pole = fwd - np.dot(fwd, t_hat) * t_hat
    n = np.linalg.norm(pole)
    if n < 1e-8:
        pole = root_rot @ np.array([0.0, 1.0, 0.0])
        pole = pole - np.dot(pole, t_hat) * t_hat
        n = np.linalg.norm(pole)
    pole = pole / n

    a = (L1 * L1 - L2 * L2 + d * d) / (2.0 * d)
    h = np.sqrt(max(L1 * L1 - a * a, 0.0))
    knee = hip + a * t_hat + h * pole
    target_c = hip + d * t_hat

    u1 = (knee - hip) / L1
    u2 = (target_c - knee) / L2
    R1 = _orthonormal_frame(u1, pole)
    R2 = _orthonormal_frame(u2, pole)
    R3 = rot_y(foot_yaw)

    _set_local(pose, sk, upleg, root_rot.T @ R1)
    _set_local(pose, sk, f"{side}_leg", R1.T @ R2)
    _set_local(pose, sk, f"{side}_foot", R2.T @ R3)


def _pose_arms(pose, sk, swing, lean):
    """Arms hang at the sides and counter-swing; small forward lean."""
    for side, sign, phase in (("l", 1.0, 1.0), ("r", -1.0, -1.0)):
        drop = rot_z(sign * -1.25)
        _set_local(pose, sk, f"{side}_upperarm", drop @ rot_x(phase * swing))
        _set_local(pose, sk, f"{side}_forearm", rot_x(-0.25))
    _set_local(pose, sk, "spine", rot_x(lean))


# ---------------------------------------------------------------------------
# gait scheduling

DUTY_BASE = 0.62


def _cycle_period(v):
    return float(np.clip(0.85 - 0.06 * v, 0.55, 0.85))


def _duty_factor(v):
    return float(np.clip(DUTY_BASE - 0.09 * v, 0.25, DUTY_BASE))


def _root_height(v):
    return float(np.clip(0.92 - 0.018 * v, 0.84, 0.92))


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


class _GaitTrack:
    """Foot-plant schedule for one leg driven by a shared phase variable.

    The leg is in stance while frac(phase + offset) < duty; plants are
    anchored where the root passes at mid-stance.
    """

    def __init__(self, phase_offset, lateral, times, phases, root_xz, yaws,
                 duties, lift=0.07):
        self.offset = phase_offset
        self.lateral = lateral
        self.times = times
        self.phases = phases
        self.root_xz = root_xz
        self.yaws = yaws
        self.duties = duties
        self.lift = lift

    def _plant(self, cycle):
        """World plant anchor and yaw for stance cycle k (mid-stance root)."""
        # this leg is in stance while frac(phase + offset) < duty, so the
        # shared phase at mid-stance k is k + duty/2 - offset
        duty = np.interp(cycle - self.offset, self.phases, self.duties)
        t_c = np.interp(cycle + 0.5 * duty - self.offset, self.phases,
                        self.times)
        px = np.interp(t_c, self.times, self.root_xz[:, 0])
        pz = np.interp(t_c, self.times, self.root_xz[:, 1])
        yaw = np.interp(t_c, self.times, self.yaws)
        side = rot_y(yaw) @ np.array([self.lateral, 0.0, 0.0])
        pos = np.array([px + side[0], ANKLE_HEIGHT, pz + side[2]])
        return pos, float(yaw)

    def ankle_at(self, frame):
        phase = self.phases[frame] + self.offset
        cycle = np.floor(phase)
        frac = phase - cycle
        duty = self.duties[frame]
        if frac < duty:
            return self._plant(cycle)
        # swing: travel from this cycle's plant to the next
        p0, y0 = self._plant(cycle)
        p1, y1 = self._plant(cycle + 1.0)
        u = (frac - duty) / max(1.0 - duty, 1e-6)
        s = _smoothstep(u)
        pos = p0 + (p1 - p0) * s
        pos[1] = ANKLE_HEIGHT + self.lift * np.sin(np.pi * u)
        return pos, float(y0 + (y1 - y0) * s)


def _integrate_gait(times, speeds, yaw_rates, start_yaw=0.0):
    """Root path, heading, and gait phase from speed/turn-rate profiles."""
    dt = times[1] - times[0] if len(times) > 1 else 1.0 / 30.0
    yaws = start_yaw + np.concatenate([[0.0], np.cumsum(yaw_rates[:-1] * dt)])
    dirs = np.stack([np.sin(yaws), np.cos(yaws)], axis=1)
    steps = (speeds[:, None] * dirs) * dt
    root_xz = np.concatenate([np.zeros((1, 2)),
                              np.cumsum(steps[:-1], axis=0)], axis=0)
    periods = np.array([_cycle_period(v) for v in speeds])
    phases = np.concatenate([[0.0], np.cumsum(dt / periods[:-1])])
    duties = np.array([_duty_factor(v) for v in speeds])
    return root_xz, yaws, phases, duties


def _gait_poses(sk, times, speeds, yaw_rates, rng, start_yaw=0.0):
    root_xz, yaws, phases, duties = _integrate_gait(times, speeds, yaw_rates,
                                                    start_yaw)
    left = _GaitTrack(0.0, sk.offsets[sk.index("l_upleg")][0], times, phases,
                      root_xz, yaws, duties)
    right = _GaitTrack(0.5, sk.offsets[sk.index("r_upleg")][0], times, phases,
                       root_xz, yaws, duties)
    bob_phase = float(rng.uniform(0, 2 * np.pi))
    poses = []
    for f, t in enumerate(times):
        v = speeds[f]
        pose = identity_pose(sk)
        h = _root_height(v) + 0.008 * np.sin(4 * np.pi * phases[f] + bob_phase) \
            * min(1.0, v)
        pose.root_pos = np.array([root_xz[f, 0], h, root_xz[f, 1]])
        pose.root_rot = rot_y(float(yaws[f]))
        swing_amp = 0.15 + 0.11 * v
        swing = swing_amp * np.sin(2 * np.pi * phases[f])
        _pose_arms(pose, sk, swing, 0.03 + 0.035 * v)
        for track, side in ((left, "l"), (right, "r")):
            ankle, foot_yaw = track.ankle_at(f)
            solve_leg(pose, sk, side, ankle, foot_yaw)
        poses.append(pose)
    return poses


# ---------------------------------------------------------------------------
# clip kinds


def _idle_poses(sk, times, rng):
    f0 = float(rng.uniform(0.25, 0.35))
    f1 = float(rng.uniform(0.18, 0.28))
    amp = float(rng.uniform(0.003, 0.005))
    poses = []
    for t in times:
        pose = identity_pose(sk)
        sway = amp * np.sin(2 * np.pi * f0 * t)
        pose.root_pos = np.array([sway, 0.96 + 0.002 * np.sin(2 * np.pi * f1 * t),
                                  0.0])
        pose.root_rot = rot_y(0.02 * np.sin(2 * np.pi * f1 * t))
        _pose_arms(pose, sk, 0.02 * np.sin(2 * np.pi * f1 * t), 0.02)
        _set_local(pose, sk, "spine1",
                   rot_x(0.015 * np.sin(2 * np.pi * f1 * t)))
        for side, sign in (("l", 1.0), ("r", -1.0)):
            ankle = np.array([sign * 0.09, ANKLE_HEIGHT, 0.0])
            solve_leg(pose, sk, side, ankle, 0.0)
        poses.append(pose)
    return poses


def generate_motion_clip(kind, duration, fps=30, seed=0):
    """Deterministic pose sequence of round(duration * fps) frames."""
    if kind not in CLIP_KINDS:
        raise ValueError(f"unknown clip kind {kind!r}, expected one of {CLIP_KINDS}")
    if duration <= 0:
        raise ValueError("clip duration must be positive")
    sk = build_skeleton()
    rng = np.random.Generator(
        np.random.Philox(key=[int(seed), CLIP_KINDS.index(kind)]))
    n = int(round(duration * fps))
    times = np.arange(n) / fps

    if kind == "idle":
        return sk, _idle_poses(sk, times, rng)

    if kind == "walk":
        v = float(rng.uniform(1.0, 1.25))
        ramp = np.minimum(times / 0.6, 1.0)
        speeds = v * _smoothstep(ramp)
        yaw_rates = np.full(n, float(rng.uniform(-0.05, 0.05)))
        return sk, _gait_poses(sk, times, speeds, yaw_rates, rng,
                               start_yaw=float(rng.uniform(-0.3, 0.3)))

    if kind == "turn":
        v = float(rng.uniform(0.5, 0.7))
        rate = float(rng.choice([-1.0, 1.0])) * float(rng.uniform(0.9, 1.2))
        speeds = v * _smoothstep(np.minimum(times / 0.6, 1.0))
        yaw_rates = np.full(n, rate)
        return sk, _gait_poses(sk, times, speeds, yaw_rates, rng)

    # sprint_stop: accelerate hard, hold, crash-stop to a stand
    v_top = float(rng.uniform(3.6, 4.2))
    t_up = 1.0
    t_stop = max(duration * 0.62, t_up + 0.8)
    stop_len = 0.35
    speeds = np.empty(n)
    for i, t in enumerate(times):
        if t < t_up:
            speeds[i] = v_top * _smoothstep(t / t_up)
        elif t < t_stop:
            speeds[i] = v_top
        else:
            speeds[i] = v_top * (1.0 - _smoothstep((t - t_stop) / stop_len))
    yaw_rates = np.zeros(n)
    return sk, _gait_poses(sk, times, speeds, yaw_rates, rng)
