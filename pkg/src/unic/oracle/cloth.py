"""XPBD cloth: compliant stretch + dihedral bending, capsule collision.

Semi-implicit prediction, then Gauss-Seidel constraint projection in
graph-colored batches (constraints in one color share no vertex, so each
batch is a single vectorized update). Capsule projection runs after the
iteration loop in every substep, so emitted states sit on or outside the
offset shells. Compliance follows the XPBD convention: alpha_tilde =
compliance / dt^2 with the substep dt.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class SimConfig:
    dt: float = 1.0 / 30.0
    substeps: int = 4
    iterations: int = 20
    gravity: tuple = (0.0, -9.81, 0.0)
    collision_offset: float = 0.003   # m, clearance above capsule surface
    damping: float = 0.01             # velocity scale-down per substep
    cross_springs: bool = False       # cheaper bending: wing-to-wing springs

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1 or self.iterations < 1:
            raise ValueError("substeps and iterations must be >= 1")


def _cross3(a, b):
    # _cross3 has heavy per-call axis handling; this stays on the fast path
    out = np.empty(np.broadcast(a, b).shape)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def color_constraints(vertex_lists):
    """Greedy graph coloring; constraints in a color share no vertex.

    Returns a list of index arrays, one per color, in deterministic order.
    """
    colors = []
    color_used = []   # per color: set of vertices touched
    assignment = np.empty(len(vertex_lists), dtype=np.int64)
    for ci, vs in enumerate(vertex_lists):
        vset = set(int(v) for v in vs)
        for k, used in enumerate(color_used):
            if not (used & vset):
                used |= vset
                assignment[ci] = k
                break
        else:
            color_used.append(vset)
            assignment[ci] = len(color_used) - 1
    for k in range(len(color_used)):
        colors.append(np.nonzero(assignment == k)[0])
    return colors


def _mesh_edges(faces):
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    return np.unique(np.sort(e, axis=1), axis=0)


def _bend_pairs(faces):
    """Hinges: for each interior edge (a, b) the two wing vertices (c, d)."""
    f = np.asarray(faces, dtype=np.int64)
    edge_map = {}
    for fi, tri in enumerate(f):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            c = int(tri[(k + 2) % 3])
            edge_map.setdefault((min(a, b), max(a, b)), []).append(c)
    hinges = []
    for (a, b), wings in sorted(edge_map.items()):
        if len(wings) == 2:
            hinges.append((a, b, wings[0], wings[1]))
    return np.asarray(hinges, dtype=np.int64).reshape(-1, 4)


def dihedral_angles(pos, hinges):
    """Signed hinge angle: 0 when flat, by atan2 of the normal pair."""
    xa, xb = pos[hinges[:, 0]], pos[hinges[:, 1]]
    xc, xd = pos[hinges[:, 2]], pos[hinges[:, 3]]
    e = xb - xa
    n1 = _cross3(e, xc - xa)
    n2 = _cross3(xd - xa, e)
    e_len = np.linalg.norm(e, axis=1)
    n1n = np.linalg.norm(n1, axis=1)
    n2n = np.linalg.norm(n2, axis=1)
    ok = (e_len > 1e-9) & (n1n > 1e-12) & (n2n > 1e-12)
    n1u = np.where(ok[:, None], n1 / np.maximum(n1n, 1e-12)[:, None], 0.0)
    n2u = np.where(ok[:, None], n2 / np.maximum(n2n, 1e-12)[:, None], 0.0)
    eu = np.where(ok[:, None], e / np.maximum(e_len, 1e-12)[:, None], 0.0)
    cos_t = np.sum(n1u * n2u, axis=1)
    sin_t = np.sum(_cross3(n1u, n2u) * eu, axis=1)
    return np.arctan2(sin_t, cos_t), ok


def _dihedral_full(xa, xb, xc, xd):
    """Fused angle + gradients for a hinge batch (one color).

    Wing gradients point along the face normals, magnitude edge length
    over doubled face area; edge-vertex gradients are the barycentric
    balance (the four gradients sum to zero). Degenerate hinges return
    zero gradients and angle 0.
    """
    e = xb - xa
    r_c = xc - xa
    r_d = xd - xa
    n1 = _cross3(e, r_c)
    n2 = _cross3(r_d, e)
    e_len2 = np.einsum("ij,ij->i", e, e)
    n1_len2 = np.einsum("ij,ij->i", n1, n1)
    n2_len2 = np.einsum("ij,ij->i", n2, n2)
    ok = (e_len2 > 1e-18) & (n1_len2 > 1e-24) & (n2_len2 > 1e-24)
    e_len2 = np.maximum(e_len2, 1e-18)
    n1_len2 = np.maximum(n1_len2, 1e-24)
    n2_len2 = np.maximum(n2_len2, 1e-24)
    e_len = np.sqrt(e_len2)

    inv_nn = 1.0 / np.sqrt(n1_len2 * n2_len2)
    cos_t = np.einsum("ij,ij->i", n1, n2) * inv_nn
    sin_t = np.einsum("ij,ij->i", _cross3(n1, n2), e) * (inv_nn / e_len)
    theta = np.arctan2(sin_t, cos_t)

    g_c = n1 * (-e_len / n1_len2)[:, None]
    g_d = n2 * (-e_len / n2_len2)[:, None]
    u_c = np.einsum("ij,ij->i", r_c, e) / e_len2
    u_d = np.einsum("ij,ij->i", r_d, e) / e_len2
    g_a = (u_c - 1.0)[:, None] * g_c + (u_d - 1.0)[:, None] * g_d
    g_b = -u_c[:, None] * g_c - u_d[:, None] * g_d
    if not ok.all():
        bad = ~ok
        theta = np.where(bad, 0.0, theta)
        for g in (g_a, g_b, g_c, g_d):
            g[bad] = 0.0
    return theta, g_a, g_b, g_c, g_d, ok


def dihedral_gradients(pos, hinges):
    """Angle gradients w.r.t. the four hinge vertices."""
    _, g_a, g_b, g_c, g_d, ok = _dihedral_full(
        pos[hinges[:, 0]], pos[hinges[:, 1]],
        pos[hinges[:, 2]], pos[hinges[:, 3]])
    return g_a, g_b, g_c, g_d, ok


@dataclass
class ClothSpec:
    """Static cloth description; all constraint structure precomputed."""

    rest_pos: np.ndarray            # (V, 3)
    faces: np.ndarray               # (F, 3)
    mass: float                     # per-vertex mass, kg
    stretch_compliance: float = 1e-7
    bend_compliance: float = 2e-3
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    # pins ride a joint: parallel arrays, local offset in that joint's frame
    pin_joints: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pin_local: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    cross_springs: bool = False

    def __post_init__(self):
        self.rest_pos = np.asarray(self.rest_pos, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.pinned = np.asarray(self.pinned, dtype=np.int64)
        V = self.rest_pos.shape[0]
        if self.pinned.size and (self.pinned.min() < 0 or self.pinned.max() >= V):
            raise ValueError("pinned set must index into the vertex set")
        if self.mass <= 0:
            raise ValueError("vertex mass must be positive")

        self.edges = _mesh_edges(self.faces)
        self.rest_len = np.linalg.norm(
            self.rest_pos[self.edges[:, 0]] - self.rest_pos[self.edges[:, 1]],
            axis=1)
        if np.any(self.rest_len <= 0):
            raise ValueError("degenerate rest edge")
        self.hinges = _bend_pairs(self.faces)
        if self.cross_springs:
            # wing-to-wing distance springs instead of angle constraints
            self.cross_edges = self.hinges[:, 2:4]
            self.cross_rest = np.linalg.norm(
                self.rest_pos[self.cross_edges[:, 0]]
                - self.rest_pos[self.cross_edges[:, 1]], axis=1)
            self.rest_angle = np.zeros(0)
        else:
            self.rest_angle, _ = dihedral_angles(self.rest_pos, self.hinges) \
                if len(self.hinges) else (np.zeros(0), None)

        self.inv_mass = np.full(V, 1.0 / self.mass)
        self.inv_mass[self.pinned] = 0.0

        self.edge_colors = color_constraints(
            [tuple(e) for e in self.edges])
        if self.cross_springs:
            self.bend_colors = color_constraints(
                [tuple(e) for e in self.cross_edges])
        else:
            self.bend_colors = color_constraints(
                [tuple(h) for h in self.hinges])
        self._pack_batches()

    def _pack_batches(self):
        """Gather per-color constraint data once; the solver loops batches."""
        w = self.inv_mass
        self.stretch_batches = []
        for idx in self.edge_colors:
            i, j = self.edges[idx, 0].copy(), self.edges[idx, 1].copy()
            self.stretch_batches.append(
                (i, j, self.rest_len[idx].copy(), w[i] + w[j], w[i], w[j], idx))
        self.bend_batches = []
        if self.cross_springs:
            for idx in self.bend_colors:
                i = self.cross_edges[idx, 0].copy()
                j = self.cross_edges[idx, 1].copy()
                self.bend_batches.append(
                    (i, j, self.cross_rest[idx].copy(), w[i] + w[j],
                     w[i], w[j], idx))
        else:
            for idx in self.bend_colors:
                h = self.hinges[idx]
                # one flat index per color: a hinge's 4 vertices are distinct
                # and hinges in a color are disjoint, so gather/scatter of
                # the flattened (4n,) index is alias-free
                flat = h.T.reshape(-1).copy()
                w4 = w[h.T]                      # (4, n)
                self.bend_batches.append(
                    (flat, w4, self.rest_angle[idx].copy(), idx))

    @property
    def num_vertices(self):
        return self.rest_pos.shape[0]


@dataclass
class SimState:
    pos: np.ndarray
    vel: np.ndarray

    def copy(self):
        return SimState(self.pos.copy(), self.vel.copy())


def make_state(spec):
    return SimState(spec.rest_pos.copy(), np.zeros_like(spec.rest_pos))


def collide_capsule(p, a, b, radius, offset):
    """Project points outside the capsule (a, b, radius) + offset shell.

    Points on the axis are pushed along the axis-perpendicular direction
    closest to world +z (or +x for z-aligned capsules).
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    axis = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    len2 = float(np.dot(axis, axis))
    if len2 > 1e-18:
        t = np.clip((p - a) @ axis / len2, 0.0, 1.0)
    else:
        t = np.zeros(p.shape[0])
    closest = a + t[:, None] * axis
    d_vec = p - closest
    d = np.linalg.norm(d_vec, axis=1)
    shell = radius + offset
    inside = d < shell
    if not inside.any():
        return p, inside
    out = p.copy()
    safe = inside & (d > 1e-9)
    out[safe] = closest[safe] + d_vec[safe] * (shell / d[safe])[:, None]
    degen = inside & ~safe
    if degen.any():
        fb = np.array([0.0, 0.0, 1.0])
        if len2 > 1e-18:
            a_hat = axis / np.sqrt(len2)
            fb = fb - np.dot(fb, a_hat) * a_hat
            if np.linalg.norm(fb) < 1e-9:
                fb = np.array([1.0, 0.0, 0.0]) \
                    - np.dot(np.array([1.0, 0.0, 0.0]), a_hat) * a_hat
            fb = fb / np.linalg.norm(fb)
        out[degen] = closest[degen] + shell * fb
    return out, inside


def _project_distance_batch(pos, batch, lam, alpha):
    i, j, rest, wsum, wi, wj, idx = batch
    d = pos[i]
    d = d - pos[j]
    length2 = np.einsum("ij,ij->i", d, d)
    length = np.sqrt(length2)
    inv_len = 1.0 / np.maximum(length, 1e-9)
    C = length - rest
    dlam = (C + alpha * lam[idx]) / (wsum + alpha)
    dlam = np.where(length > 1e-9, -dlam, 0.0)
    lam[idx] += dlam
    scale = dlam * inv_len
    pos[i] += (wi * scale)[:, None] * d
    pos[j] -= (wj * scale)[:, None] * d


def _project_stretch(pos, spec, lam, alpha):
    for batch in spec.stretch_batches:
        _project_distance_batch(pos, batch, lam, alpha)


def _project_cross_springs(pos, spec, lam, alpha):
    for batch in spec.bend_batches:
        _project_distance_batch(pos, batch, lam, alpha)


def _project_bend(pos, spec, lam, alpha):
    for flat, w4, rest, idx in spec.bend_batches:
        P = pos[flat].reshape(4, -1, 3)
        theta, g_a, g_b, g_c, g_d, ok = _dihedral_full(P[0], P[1], P[2], P[3])
        G = np.stack([g_a, g_b, g_c, g_d])
        C = theta - rest
        denom = np.einsum("ki,kij,kij->i", w4, G, G) + alpha
        dlam = -(C + alpha * lam[idx]) / np.maximum(denom, 1e-12)
        if not ok.all():
            dlam = np.where(ok, dlam, 0.0)
        lam[idx] += dlam
        G *= (w4 * dlam)[:, :, None]
        pos[flat] += G.reshape(-1, 3)


def xpbd_step(state, spec, capsules, cfg, pin_targets=None,
              pin_targets_prev=None, frame=None):
    """One frame of cloth dynamics; mutates and returns `state`.

    `capsules` is an iterable of (a, b, radius) world capsules for this
    frame. Pinned vertices move linearly from `pin_targets_prev` to
    `pin_targets` across the substeps (both default to holding position).
    """
    pos, vel = state.pos, state.vel
    g = np.asarray(cfg.gravity, dtype=np.float64)
    dt_s = cfg.dt / cfg.substeps
    alpha_stretch = spec.stretch_compliance / (dt_s * dt_s)
    alpha_bend = spec.bend_compliance / (dt_s * dt_s)
    free = spec.inv_mass > 0
    pins = spec.pinned

    if pin_targets is None and pins.size:
        pin_targets = pos[pins].copy()
    if pin_targets_prev is None and pins.size:
        pin_targets_prev = pos[pins].copy()

    n_bend = len(spec.cross_edges) if spec.cross_springs else len(spec.hinges)
    for s in range(cfg.substeps):
        prev = pos.copy()
        vel[free] += g * dt_s
        vel[free] *= (1.0 - cfg.damping)
        pos[free] += vel[free] * dt_s
        if pins.size:
            u = (s + 1) / cfg.substeps
            pos[pins] = pin_targets_prev + (pin_targets - pin_targets_prev) * u

        lam_s = np.zeros(len(spec.edges))
        lam_b = np.zeros(n_bend)
        for _ in range(cfg.iterations):
            _project_stretch(pos, spec, lam_s, alpha_stretch)
            if spec.cross_springs:
                _project_cross_springs(pos, spec, lam_b, alpha_bend)
            elif n_bend:
                _project_bend(pos, spec, lam_b, alpha_bend)
        for a, b, radius in capsules:
            projected, _ = collide_capsule(pos[free], a, b, radius,
                                           cfg.collision_offset)
            pos[free] = projected

        vel[:] = (pos - prev) / dt_s

    if not np.all(np.isfinite(pos)):
        raise NumericError("cloth solver diverged", frame=frame)
    return state


def settle(state, spec, capsules, cfg, pin_targets=None, tol=2e-5,
           max_steps=400):
    """Step under constant conditions until motion stalls; returns steps."""
    for k in range(max_steps):
        before = state.pos.copy()
        xpbd_step(state, spec, capsules, cfg, pin_targets=pin_targets,
                  pin_targets_prev=pin_targets)
        move = float(np.max(np.linalg.norm(state.pos - before, axis=1)))
        if move < tol:
            return k + 1
    return max_steps


def stretch_residual(pos, spec):
    """Mean |current - rest| / rest over all edges."""
    d = np.linalg.norm(pos[spec.edges[:, 0]] - pos[spec.edges[:, 1]], axis=1)
    return float(np.mean(np.abs(d - spec.rest_len) / spec.rest_len))


def capsule_penetration(pos, capsules):
    """Deepest point-inside-capsule distance (m); 0 when all points clear."""
    worst = 0.0
    for a, b, radius in capsules:
        axis = np.asarray(b) - np.asarray(a)
        len2 = float(np.dot(axis, axis))
        if len2 > 1e-18:
            t = np.clip((pos - a) @ axis / len2, 0.0, 1.0)
            closest = a + t[:, None] * axis
        else:
            closest = np.broadcast_to(np.asarray(a), pos.shape)
        d = np.linalg.norm(pos - closest, axis=1)
        worst = max(worst, float(np.max(radius - d)))
    return worst
