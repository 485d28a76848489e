"""Skeleton poses and the per-frame character motion feature vector.

A motion frame packs, in order: root position (3), root linear velocity (3),
root orientation as 6D (6), root angular velocity (3), local joint rotations
as 6D (6J), local joint positions in the root frame (3J), local joint
velocities in the root frame (3J), and 4 binary foot-contact labels.
Total dimension: 19 + 12J.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DT = 1.0 / 30.0
CONTACT_HEIGHT = 0.05   # m
CONTACT_SPEED = 0.3     # m/s


def motion_dim(num_joints):
    """Feature length for a skeleton with `num_joints` local (non-root) joints."""
    return 19 + 12 * num_joints


@dataclass
class Skeleton:
    """Topologically ordered joint tree; index 0 is the root."""

    parents: list          # parents[0] == -1, parents[i] < i
    offsets: np.ndarray    # (total_joints, 3) bone offsets in parent frame, meters
    names: list = field(default_factory=list)
    # 4 foot markers in order [left heel, left toe, right heel, right toe],
    # each (joint_index, local_offset)
    foot_markers: list = field(default_factory=list)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.parents[0] != -1:
            raise ValueError("root parent must be -1")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ValueError("parents must be topologically ordered")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("non-finite bone offsets")

    @property
    def total_joints(self):
        return len(self.parents)

    @property
    def num_joints(self):
        """Local joints J, excluding the root."""
        return len(self.parents) - 1

    def index(self, name):
        return self.names.index(name)

    def to_dict(self):
        return {
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "names": list(self.names),
            "foot_markers": [[int(j), list(map(float, o))] for j, o in self.foot_markers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(parents=list(d["parents"]),
                   offsets=np.asarray(d["offsets"], dtype=np.float64),
                   names=list(d.get("names", [])),
                   foot_markers=[(int(j), np.asarray(o, dtype=np.float64))
                                 for j, o in d.get("foot_markers", [])])


@dataclass
class Pose:
    """Root transform plus per-joint local rotations (J rotation matrices)."""

    root_pos: np.ndarray       # (3,)
    root_rot: np.ndarray       # (3,3)
    joint_rots: np.ndarray     # (J, 3, 3) for joints 1..J

    def copy(self):
        return Pose(self.root_pos.copy(), self.root_rot.copy(), self.joint_rots.copy())


def identity_pose(skeleton):
    J = skeleton.num_joints
    return Pose(np.zeros(3), np.eye(3), np.tile(np.eye(3), (J, 1, 1)))


# ---------------------------------------------------------------------------
# rotation utilities


def rot_to_6d(R):
    """First two columns of R, flattened."""
    R = np.asarray(R)
    return np.concatenate([R[:, 0], R[:, 1]])


def sixd_to_rot(v):
    """Gram-Schmidt the two stored columns; third column is their cross."""
    v = np.asarray(v, dtype=np.float64)
    a1, a2 = v[:3], v[3:6]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-8:
        raise ValueError("sixd_to_rot: first column is degenerate")
    b1 = a1 / n1
    n2 = np.linalg.norm(a2)
    if n2 < 1e-8:
        raise ValueError("sixd_to_rot: second column is degenerate")
    if abs(np.dot(b1, a2 / n2)) > 1.0 - 1e-8:
        raise ValueError("sixd_to_rot: columns are near-parallel")
    a2p = a2 - np.dot(b1, a2) * b1
    b2 = a2p / np.linalg.norm(a2p)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def axis_angle_to_rot(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rot_to_axis_angle(R):
    """Rotation vector (axis * angle) of R; robust near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    cos_a = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-9:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near pi: axis from the symmetric part
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = A[:, k] / axis[k]
        n = np.linalg.norm(axis)
        if n < 1e-12:
            return np.zeros(3)
        return axis / n * angle
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis / (2.0 * np.sin(angle)) * angle


def rot_x(a):
    return axis_angle_to_rot([1, 0, 0], a)


def rot_y(a):
    return axis_angle_to_rot([0, 1, 0], a)


def rot_z(a):
    return axis_angle_to_rot([0, 0, 1], a)


# ---------------------------------------------------------------------------
# kinematics


def forward_kinematics(skeleton, pose):
    """Global transforms per joint: returns (rotations (N,3,3), positions (N,3))."""
    n = skeleton.total_joints
    rots = np.empty((n, 3, 3))
    poss = np.empty((n, 3))
    rots[0] = pose.root_rot
    poss[0] = pose.root_pos
    for i in range(1, n):
        p = skeleton.parents[i]
        rots[i] = rots[p] @ pose.joint_rots[i - 1]
        poss[i] = poss[p] + rots[p] @ skeleton.offsets[i]
    return rots, poss


def marker_positions(skeleton, pose, rots=None, poss=None):
    """World positions of the 4 foot markers."""
    if rots is None or poss is None:
        rots, poss = forward_kinematics(skeleton, pose)
    out = np.empty((len(skeleton.foot_markers), 3))
    for k, (j, off) in enumerate(skeleton.foot_markers):
        out[k] = poss[j] + rots[j] @ np.asarray(off, dtype=np.float64)
    return out


def finite_velocity(prev, cur, dt):
    """Linear velocity for positions; rotation-vector rate for rotations.

    Positions: (cur - prev)/dt. Rotations: axis-angle of R_prev^T R_cur,
    divided by dt.
    """
    if dt <= 0:
        raise ValueError("finite_velocity: dt must be positive")
    prev = np.asarray(prev, dtype=np.float64)
    cur = np.asarray(cur, dtype=np.float64)
    if prev.shape != cur.shape:
        raise ValueError("finite_velocity: shape mismatch")
    if prev.ndim >= 2 and prev.shape[-2:] == (3, 3):
        if prev.ndim == 2:
            return rot_to_axis_angle(prev.T @ cur) / dt
        return np.stack([rot_to_axis_angle(p.T @ c) / dt
                         for p, c in zip(prev.reshape(-1, 3, 3), cur.reshape(-1, 3, 3))]
                        ).reshape(prev.shape[:-2] + (3,))
    return (cur - prev) / dt


def detect_foot_contacts(positions, velocities, height_threshold=CONTACT_HEIGHT,
                         speed_threshold=CONTACT_SPEED):
    """1 iff marker height < height_threshold AND speed < speed_threshold."""
    positions = np.asarray(positions, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    heights = positions[:, 1]
    speeds = np.linalg.norm(velocities, axis=1)
    return ((heights < height_threshold) & (speeds < speed_threshold)).astype(np.float32)


def build_motion_frame(prev, cur, skeleton, dt=DEFAULT_DT,
                       height_threshold=CONTACT_HEIGHT, speed_threshold=CONTACT_SPEED):
    """Per-frame motion feature from two consecutive poses (frame = cur)."""
    rots_p, poss_p = forward_kinematics(skeleton, prev)
    rots_c, poss_c = forward_kinematics(skeleton, cur)

    r = cur.root_pos
    r_dot = finite_velocity(prev.root_pos, cur.root_pos, dt)
    phi = rot_to_6d(cur.root_rot)
    phi_dot = finite_velocity(prev.root_rot, cur.root_rot, dt)

    inv_root = cur.root_rot.T
    local_pos = (poss_c[1:] - r) @ inv_root.T
    world_vel = (poss_c[1:] - poss_p[1:]) / dt
    local_vel = world_vel @ inv_root.T
    local_rot6 = np.concatenate([rot_to_6d(R) for R in cur.joint_rots])

    mk_prev = marker_positions(skeleton, prev, rots_p, poss_p)
    mk_cur = marker_positions(skeleton, cur, rots_c, poss_c)
    contacts = detect_foot_contacts(mk_cur, (mk_cur - mk_prev) / dt,
                                    height_threshold, speed_threshold)

    c = np.concatenate([
        r, r_dot, phi, phi_dot,
        local_rot6, local_pos.reshape(-1), local_vel.reshape(-1), contacts,
    ]).astype(np.float32)
    assert c.shape == (motion_dim(skeleton.num_joints),)
    return c


def build_pair(c_prev, c_cur):
    """Two-frame encoder input: [c_{t-1}, c_t]."""
    c_prev = np.asarray(c_prev, dtype=np.float32)
    c_cur = np.asarray(c_cur, dtype=np.float32)
    if c_prev.shape != c_cur.shape:
        raise ValueError(f"build_pair: length mismatch {c_prev.shape} vs {c_cur.shape}")
    return np.concatenate([c_prev, c_cur])


def root_transform_from_frame(c, num_joints):
    """Recover (root rotation, root position) from a stored motion frame."""
    c = np.asarray(c)
    if c.shape[-1] != motion_dim(num_joints):
        raise ValueError("motion frame length does not match joint count")
    r = c[..., 0:3].astype(np.float64)
    R = sixd_to_rot(c[..., 6:12].astype(np.float64))
    return R, r


def motion_frames_for_poses(poses, skeleton, dt=DEFAULT_DT):
    """Motion frames for a pose sequence; frame 0 pairs with itself."""
    frames = []
    for t, pose in enumerate(poses):
        prev = poses[t - 1] if t > 0 else poses[0]
        frames.append(build_motion_frame(prev, pose, skeleton, dt))
    return np.stack(frames) if frames else np.zeros((0, motion_dim(skeleton.num_joints)), np.float32)


def frame_slices(num_joints):
    """Field layout of one motion frame, as named slices."""
    J = num_joints
    return {
        "root_pos": slice(0, 3),
        "root_vel": slice(3, 6),
        "root_rot6": slice(6, 12),
        "root_ang": slice(12, 15),
        "joint_rot6": slice(15, 15 + 6 * J),
        "joint_pos": slice(15 + 6 * J, 15 + 9 * J),
        "joint_vel": slice(15 + 9 * J, 15 + 12 * J),
        "contacts": slice(15 + 12 * J, 19 + 12 * J),
    }


def pose_from_frame(c, skeleton):
    """Invert the kinematic part of a motion frame back into a Pose."""
    J = skeleton.num_joints
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (motion_dim(J),):
        raise ValueError("motion frame length does not match joint count")
    s = frame_slices(J)
    rot6 = c[s["joint_rot6"]].reshape(J, 6)
    return Pose(root_pos=c[s["root_pos"]].copy(),
                root_rot=sixd_to_rot(c[s["root_rot6"]]),
                joint_rots=np.stack([sixd_to_rot(v) for v in rot6]))


def heading_yaw(R):
    """Yaw of the rotation's forward (+z) axis, atan2(f_x, f_z)."""
    f = np.asarray(R)[:, 2]
    return float(np.arctan2(f[0], f[2]))


def reroot_frame(c, num_joints, yaw_rot, new_pos):
    """Re-express a motion frame's world-space root fields.

    The root rotation becomes yaw_rot @ R, the root position is replaced
    (keeping the source height), and the world-space root velocities are
    rotated. Joint-local fields are untouched; they live in the root frame.
    """
    s = frame_slices(num_joints)
    out = np.array(c, dtype=np.float32, copy=True)
    R = sixd_to_rot(out[s["root_rot6"]])
    out[s["root_pos"]][0] = new_pos[0]
    out[s["root_pos"]][2] = new_pos[1] if len(new_pos) == 2 else new_pos[2]
    out[s["root_vel"]] = (yaw_rot @ out[s["root_vel"]].astype(np.float64))
    out[s["root_rot6"]] = rot_to_6d(yaw_rot @ R)
    out[s["root_ang"]] = (yaw_rot @ out[s["root_ang"]].astype(np.float64))
    return out
