"""Motion matching: feature database over clip frames, nearest-row search.

Each database row describes one source frame by where the root travels
and faces 10/20/30 frames later (in that frame's root frame), the feet
and hip state, all z-scored. The interactive controller queries with the
live character state plus the player's desired trajectory, re-searching
every SEARCH_INTERVAL ticks and advancing sequentially in between.
"""

import dataclasses

import numpy as np

from .errors import DimensionError
from .motion import frame_slices, sixd_to_rot

FUTURE_OFFSETS = (10, 20, 30)
END_MARGIN = 10          # rows need runway for sequential playback
SEARCH_INTERVAL = 10     # ticks between full searches
FADE_TICKS = 6           # 0.2 s at 30 fps

FEATURE_DIM = 28


def _foot_joint_indices(skeleton):
    return (skeleton.index("l_foot") - 1, skeleton.index("r_foot") - 1)


def clip_features(motion, num_joints, foot_joints):
    """Per-frame matching features, (T, FEATURE_DIM) float64.

    Future offsets clamp at the clip end; rows that close to the end are
    excluded by the database mask, not here.
    """
    motion = np.asarray(motion, dtype=np.float64)
    T = motion.shape[0]
    s = frame_slices(num_joints)
    lf, rf = foot_joints
    feats = np.empty((T, FEATURE_DIM))
    roots = [sixd_to_rot(motion[t, s["root_rot6"]]) for t in range(T)]
    for t in range(T):
        R, r = roots[t], motion[t, s["root_pos"]]
        cols = []
        for k in FUTURE_OFFSETS:
            tf = min(t + k, T - 1)
            d = (motion[tf, s["root_pos"]] - r) @ R
            cols.extend((d[0], d[2]))
        for k in FUTURE_OFFSETS:
            tf = min(t + k, T - 1)
            f = roots[tf][:, 2] @ R
            cols.extend((f[0], f[2]))
        jp = motion[t, s["joint_pos"]].reshape(-1, 3)
        jv = motion[t, s["joint_vel"]].reshape(-1, 3)
        cols.extend(jp[lf])
        cols.extend(jp[rf])
        cols.extend(jv[lf])
        cols.extend(jv[rf])
        cols.extend(motion[t, s["root_vel"]] @ R)
        cols.append(r[1])
        feats[t] = cols
    return feats


@dataclasses.dataclass
class MotionDatabase:
    clips: list                  # raw motion arrays (T_i, D) float32
    rows: np.ndarray             # (N, FEATURE_DIM) z-scored float64
    index: np.ndarray            # (N, 2) int64 rows of (clip_id, frame)
    mean: np.ndarray
    std: np.ndarray
    num_joints: int
    foot_joints: tuple

    @classmethod
    def build(cls, motions, num_joints, skeleton):
        foot = _foot_joint_indices(skeleton)
        raw, index = [], []
        for ci, motion in enumerate(motions):
            T = len(motion)
            last = T - 1 - END_MARGIN
            if last < 1:
                continue
            f = clip_features(motion, num_joints, foot)
            raw.append(f[1:last + 1])
            index.append(np.stack([np.full(last, ci), np.arange(1, last + 1)],
                                  axis=1))
        if not raw:
            raise ValueError("no clip is long enough to index")
        raw = np.concatenate(raw)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        std[std < 1e-8] = 1.0
        return cls(clips=[np.asarray(m, dtype=np.float32) for m in motions],
                   rows=(raw - mean) / std,
                   index=np.concatenate(index).astype(np.int64),
                   mean=mean, std=std, num_joints=num_joints,
                   foot_joints=foot)

    def normalize(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (FEATURE_DIM,):
            raise DimensionError(
                f"query features must be ({FEATURE_DIM},), got {features.shape}")
        return (features - self.mean) / self.std

    def search(self, features):
        """Vectorized nearest row; returns (clip_id, frame)."""
        q = self.normalize(features)
        d = self.rows - q
        best = int(np.argmin(np.einsum("nd,nd->n", d, d)))
        return tuple(self.index[best])

    def search_brute(self, features):
        """Row-by-row reference search; must agree with search()."""
        q = self.normalize(features)
        best, best_d = 0, np.inf
        for i in range(len(self.rows)):
            d = self.rows[i] - q
            dist = float(np.dot(d, d))
            if dist < best_d:
                best, best_d = i, dist
        return tuple(self.index[best])

    def last_valid(self, clip_id):
        return len(self.clips[clip_id]) - 1 - END_MARGIN


def query_features(frame, num_joints, foot_joints, desired_vel_root,
                   desired_facing_root=None):
    """Matching query from the live frame plus the player's intent.

    `desired_vel_root` is the wanted planar velocity (vx, vz) in the
    character root frame; the future trajectory is a straight line at
    that velocity, facing along it (or `desired_facing_root` when given).
    """
    frame = np.asarray(frame, dtype=np.float64)
    s = frame_slices(num_joints)
    R = sixd_to_rot(frame[s["root_rot6"]])
    vx, vz = float(desired_vel_root[0]), float(desired_vel_root[1])
    speed = np.hypot(vx, vz)
    if desired_facing_root is not None:
        fx, fz = desired_facing_root
    elif speed > 1e-3:
        fx, fz = vx / speed, vz / speed
    else:
        fx, fz = 0.0, 1.0
    cols = []
    for k in FUTURE_OFFSETS:
        t = k / 30.0
        cols.extend((vx * t, vz * t))
    for _ in FUTURE_OFFSETS:
        cols.extend((fx, fz))
    lf, rf = foot_joints
    jp = frame[s["joint_pos"]].reshape(-1, 3)
    jv = frame[s["joint_vel"]].reshape(-1, 3)
    cols.extend(jp[lf])
    cols.extend(jp[rf])
    cols.extend(jv[lf])
    cols.extend(jv[rf])
    cols.extend(frame[s["root_vel"]] @ R)
    cols.append(frame[s["root_pos"]][1])
    return np.asarray(cols)


@dataclasses.dataclass
class MatchState:
    clip_id: int = 0
    frame: int = 1
    ticks_since_search: int = 0


def match_next(db, state, live_frame, desired_vel_root, brute=False):
    """Advance the cursor one tick; returns (clip_id, frame, jumped)."""
    state.ticks_since_search += 1
    due = state.ticks_since_search >= SEARCH_INTERVAL
    exhausted = state.frame + 1 > db.last_valid(state.clip_id)
    if due or exhausted:
        q = query_features(live_frame, db.num_joints, db.foot_joints,
                           desired_vel_root)
        clip_id, frame = (db.search_brute(q) if brute else db.search(q))
        state.ticks_since_search = 0
        jumped = not (clip_id == state.clip_id and frame == state.frame + 1)
        state.clip_id, state.frame = clip_id, frame
        return clip_id, frame, jumped
    state.frame += 1
    return state.clip_id, state.frame, False
