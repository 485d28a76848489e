"""Capsule body: analytic collision volumes plus a rigidly skinned shell.

Each capsule lives in one joint's local frame. The solver collides cloth
against the capsules analytically; the neural side and the viewer consume
the shell mesh (vertices with analytic outward normals, one rigid weight
per vertex).
"""

from dataclasses import dataclass

import numpy as np

from ..collision import BodySnapshot
from ..motion import forward_kinematics

_CAPSULE_SPECS = [
    # joint name, p0 local, p1 local, radius
    ("hips", (0.0, 0.0, 0.0), (0.0, 0.18, 0.0), 0.130),
    ("spine1", (0.0, 0.0, 0.0), (0.0, 0.22, 0.0), 0.125),
    ("neck", (0.0, 0.0, 0.0), (0.0, 0.09, 0.0), 0.050),
    ("head", (0.0, 0.02, 0.0), (0.0, 0.14, 0.0), 0.090),
    ("l_upperarm", (0.0, 0.0, 0.0), (0.26, 0.0, 0.0), 0.042),
    ("l_forearm", (0.0, 0.0, 0.0), (0.25, 0.0, 0.0), 0.036),
    ("r_upperarm", (0.0, 0.0, 0.0), (-0.26, 0.0, 0.0), 0.042),
    ("r_forearm", (0.0, 0.0, 0.0), (-0.25, 0.0, 0.0), 0.036),
    ("l_upleg", (0.0, 0.0, 0.0), (0.0, -0.42, 0.0), 0.068),
    ("l_leg", (0.0, 0.0, 0.0), (0.0, -0.43, 0.0), 0.052),
    ("l_foot", (0.0, -0.02, -0.04), (0.0, -0.03, 0.12), 0.035),
    ("r_upleg", (0.0, 0.0, 0.0), (0.0, -0.42, 0.0), 0.068),
    ("r_leg", (0.0, 0.0, 0.0), (0.0, -0.43, 0.0), 0.052),
    ("r_foot", (0.0, -0.02, -0.04), (0.0, -0.03, 0.12), 0.035),
]


@dataclass
class Capsule:
    joint: int
    p0: np.ndarray      # local endpoint
    p1: np.ndarray
    radius: float


def _unit_capsule_mesh(p0, p1, radius, segments=10, side_rows=4, cap_rows=3):
    """Capsule surface in the owning joint's local frame.

    Returns (vertices, normals, faces). Normals are radial on the cylinder
    section and spherical around the endpoint caps, both exact.
    """
    axis = p1 - p0
    length = np.linalg.norm(axis)
    a_hat = axis / length if length > 1e-9 else np.array([0.0, 1.0, 0.0])
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(ref, a_hat)) > 0.9:
        ref = np.array([0.0, 0.0, 1.0])
    u = np.cross(a_hat, ref)
    u /= np.linalg.norm(u)
    w = np.cross(a_hat, u)

    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    circle = np.outer(np.cos(ang), u) + np.outer(np.sin(ang), w)

    verts, norms = [], []
    # bottom pole
    verts.append(p0 - radius * a_hat)
    norms.append(-a_hat)
    # bottom cap rings (from pole toward the cylinder junction)
    for i in range(1, cap_rows + 1):
        phi = (np.pi / 2) * (i / cap_rows)   # 0 at pole, pi/2 at junction
        ring_n = np.sin(phi) * circle - np.cos(phi) * a_hat
        verts.extend(p0 + radius * ring_n)
        norms.extend(ring_n)
    # cylinder rings (junction ring already emitted above)
    for i in range(1, side_rows + 1):
        c = p0 + a_hat * (length * i / side_rows)
        verts.extend(c + radius * circle)
        norms.extend(circle)
    # top cap rings
    for i in range(1, cap_rows):
        phi = (np.pi / 2) * (1 - i / cap_rows)
        ring_n = np.sin(phi) * circle + np.cos(phi) * a_hat
        verts.extend(p1 + radius * ring_n)
        norms.extend(ring_n)
    verts.append(p1 + radius * a_hat)
    norms.append(a_hat)

    n_rings = cap_rows + side_rows + (cap_rows - 1)
    faces = []
    # bottom fan
    for s in range(segments):
        faces.append([0, 1 + s, 1 + (s + 1) % segments])
    # ring strips
    for r in range(n_rings - 1):
        base0 = 1 + r * segments
        base1 = base0 + segments
        for s in range(segments):
            s2 = (s + 1) % segments
            faces.append([base0 + s, base1 + s, base1 + s2])
            faces.append([base0 + s, base1 + s2, base0 + s2])
    # top fan
    top = 1 + n_rings * segments
    base = top - segments
    for s in range(segments):
        faces.append([top, base + (s + 1) % segments, base + s])

    return (np.asarray(verts, dtype=np.float64),
            np.asarray(norms, dtype=np.float64),
            np.asarray(faces, dtype=np.int64))


class CapsuleBody:
    """Capsules plus shell mesh, everything rigid to its owning joint."""

    def __init__(self, skeleton, capsules, shell_verts, shell_norms,
                 shell_faces, shell_joint):
        self.skeleton = skeleton
        self.capsules = capsules
        self.shell_verts = shell_verts      # (B, 3) joint-local
        self.shell_norms = shell_norms      # (B, 3) joint-local, unit
        self.shell_faces = shell_faces      # (F, 3)
        self.shell_joint = shell_joint      # (B,) owning joint index
        # rigid skinning preserves edge lengths, so the collision grid cell
        # size is a rest-shape constant
        e = shell_faces
        edges = np.unique(np.sort(np.concatenate(
            [e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]]), axis=1), axis=0)
        lengths = np.linalg.norm(shell_verts[edges[:, 0]]
                                 - shell_verts[edges[:, 1]], axis=1)
        self.cell_size = 2.0 * float(lengths.mean())

    @property
    def num_vertices(self):
        return self.shell_verts.shape[0]

    def world_capsules(self, rots, poss):
        """Per-capsule world endpoints and radius for one posed frame."""
        out = []
        for c in self.capsules:
            R, t = rots[c.joint], poss[c.joint]
            out.append((t + R @ c.p0, t + R @ c.p1, c.radius))
        return out

    def shell_world(self, rots, poss):
        R = rots[self.shell_joint]                    # (B, 3, 3)
        v = np.einsum("bij,bj->bi", R, self.shell_verts) + poss[self.shell_joint]
        n = np.einsum("bij,bj->bi", R, self.shell_norms)
        return v, n

    def snapshot(self, pose=None, rots=None, poss=None):
        if rots is None or poss is None:
            rots, poss = forward_kinematics(self.skeleton, pose)
        v, n = self.shell_world(rots, poss)
        return BodySnapshot(v, n, cell_size=self.cell_size)


def build_capsule_body(skeleton, segments=10):
    capsules = []
    verts, norms, faces, owner = [], [], [], []
    offset = 0
    for name, p0, p1, radius in _CAPSULE_SPECS:
        j = skeleton.index(name)
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        capsules.append(Capsule(j, p0, p1, radius))
        v, n, f = _unit_capsule_mesh(p0, p1, radius, segments=segments)
        verts.append(v)
        norms.append(n)
        faces.append(f + offset)
        owner.append(np.full(len(v), j, dtype=np.int64))
        offset += len(v)
    return CapsuleBody(skeleton, capsules,
                       np.concatenate(verts), np.concatenate(norms),
                       np.concatenate(faces), np.concatenate(owner))
