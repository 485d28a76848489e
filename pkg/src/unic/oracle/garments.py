"""Parametric garments plus OBJ cloth with sidecar pin annotations.

All garments are authored in the character root frame (root joint at the
origin, identity heading); simulate_sequence maps them through the first
pose's root transform. Pin offsets are stored in the pin joint's rest
frame so pinned vertices ride that bone.
"""

import json
import os

import numpy as np

from ..errors import DataFormatError
from ..motion import forward_kinematics, identity_pose
from .cloth import ClothSpec

FABRIC_DENSITY = 0.15   # kg / m^2, light woven fabric


def _grid_faces(rows, cols, wrap=False):
    """Triangulated quad grid; `wrap` closes the column seam into a tube."""
    faces = []
    ncols = cols if wrap else cols - 1
    for r in range(rows - 1):
        for c in range(ncols):
            c1 = (c + 1) % cols
            a = r * cols + c
            b = r * cols + c1
            d = (r + 1) * cols + c1
            e = (r + 1) * cols + c
            faces.append([a, b, d])
            faces.append([a, d, e])
    return np.asarray(faces, dtype=np.int64)


def _joint_rest_positions(skeleton):
    _, poss = forward_kinematics(skeleton, identity_pose(skeleton))
    return poss


def _panel_area(rest, faces):
    a = rest[faces[:, 0]]
    b = rest[faces[:, 1]]
    c = rest[faces[:, 2]]
    n = np.cross(b - a, c - a)
    return 0.5 * float(np.linalg.norm(n, axis=1).sum())


def _finish(rest, faces, skeleton, pin_vertices, pin_joint_names,
            stretch_compliance, bend_compliance):
    rest = np.asarray(rest, dtype=np.float64)
    joint_rest = _joint_rest_positions(skeleton)
    pin_vertices = np.asarray(pin_vertices, dtype=np.int64)
    pin_joints = np.array([skeleton.index(n) for n in pin_joint_names],
                          dtype=np.int64)
    # rest rotations are identity, so the local offset is a translation
    pin_local = rest[pin_vertices] - joint_rest[pin_joints]
    mass = FABRIC_DENSITY * _panel_area(rest, faces) / len(rest)
    return ClothSpec(rest_pos=rest, faces=faces, mass=mass,
                     stretch_compliance=stretch_compliance,
                     bend_compliance=bend_compliance,
                     pinned=pin_vertices, pin_joints=pin_joints,
                     pin_local=pin_local)


def make_skirt(skeleton, rings=21, segments=21, waist_radius=0.16,
               hem_radius=0.30, length=0.48, waist_drop=0.02,
               stretch_compliance=1e-7, bend_compliance=2e-3):
    """Open tube, `rings` x `segments` vertices, waist ring pinned to the hips."""
    rows = []
    for r in range(rings):
        t = r / (rings - 1)
        radius = waist_radius + (hem_radius - waist_radius) * t
        y = -waist_drop - length * t
        ang = 2 * np.pi * np.arange(segments) / segments
        rows.append(np.stack([radius * np.sin(ang),
                              np.full(segments, y),
                              radius * np.cos(ang)], axis=1))
    rest = np.concatenate(rows)
    faces = _grid_faces(rings, segments, wrap=True)
    pins = np.arange(segments)
    return _finish(rest, faces, skeleton, pins, ["hips"] * segments,
                   stretch_compliance, bend_compliance)


def make_cape(skeleton, rows=16, cols=9, width=0.42, length=0.62,
              back_offset=0.17, stretch_compliance=1e-7,
              bend_compliance=2e-3):
    """Flat back panel hanging from the upper spine."""
    joint_rest = _joint_rest_positions(skeleton)
    top_y = joint_rest[skeleton.index("spine3")][1] + 0.04
    xs = np.linspace(-width / 2, width / 2, cols)
    ys = np.linspace(top_y, top_y - length, rows)
    gx, gy = np.meshgrid(xs, ys)
    rest = np.stack([gx.ravel(), gy.ravel(),
                     np.full(rows * cols, -back_offset)], axis=1)
    faces = _grid_faces(rows, cols, wrap=False)
    pins = np.arange(cols)
    return _finish(rest, faces, skeleton, pins, ["spine3"] * cols,
                   stretch_compliance, bend_compliance)


def make_tabard(skeleton, rows=14, cols=8, width=0.30, length=0.55,
                panel_offset=0.165, stretch_compliance=1e-7,
                bend_compliance=2e-3):
    """Front and back panels pinned at the shoulders; two open patches."""
    joint_rest = _joint_rest_positions(skeleton)
    top_y = joint_rest[skeleton.index("spine3")][1] + 0.05
    xs = np.linspace(-width / 2, width / 2, cols)
    ys = np.linspace(top_y, top_y - length, rows)
    gx, gy = np.meshgrid(xs, ys)
    panels = []
    faces = []
    for k, z in enumerate((panel_offset, -panel_offset)):
        panels.append(np.stack([gx.ravel(), gy.ravel(),
                                np.full(rows * cols, z)], axis=1))
        faces.append(_grid_faces(rows, cols, wrap=False) + k * rows * cols)
    rest = np.concatenate(panels)
    pins = np.concatenate([np.arange(cols), rows * cols + np.arange(cols)])
    return _finish(rest, np.concatenate(faces), skeleton, pins,
                   ["spine3"] * (2 * cols), stretch_compliance,
                   bend_compliance)


def load_garment_obj(obj_path, skeleton, pins_path=None):
    """OBJ cloth plus `<name>.pins.json` sidecar.

    Sidecar schema: {"pins": [{"vertex": int, "joint": str}, ...],
    optional "stretch_compliance", "bend_compliance"}. Vertices are
    authored in the character root frame like the built-in garments.
    """
    from ..dataio import load_obj

    rest, faces = load_obj(obj_path)
    if pins_path is None:
        pins_path = os.path.splitext(obj_path)[0] + ".pins.json"
    pin_v, pin_names = [], []
    stretch, bend = 1e-7, 2e-3
    if os.path.exists(pins_path):
        with open(pins_path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"{pins_path}: invalid JSON: {e}") from e
        for p in doc.get("pins", []):
            v = int(p["vertex"])
            if not 0 <= v < len(rest):
                raise DataFormatError(
                    f"{pins_path}: pin vertex {v} out of range 0..{len(rest) - 1}")
            if p["joint"] not in skeleton.names:
                raise DataFormatError(
                    f"{pins_path}: unknown joint {p['joint']!r}")
            pin_v.append(v)
            pin_names.append(p["joint"])
        stretch = float(doc.get("stretch_compliance", stretch))
        bend = float(doc.get("bend_compliance", bend))
    return _finish(rest, faces, skeleton, pin_v, pin_names, stretch, bend)


GARMENT_NAMES = ("skirt", "cape", "tabard", "skirt3k")


def garment_by_name(name, skeleton, **kwargs):
    """Built-in garment by name, or a path ending in .obj."""
    if name == "skirt":
        return make_skirt(skeleton, **kwargs)
    if name == "skirt3k":
        kwargs.setdefault("rings", 50)
        kwargs.setdefault("segments", 60)
        return make_skirt(skeleton, **kwargs)
    if name == "cape":
        return make_cape(skeleton, **kwargs)
    if name == "tabard":
        return make_tabard(skeleton, **kwargs)
    if name.endswith(".obj"):
        return load_garment_obj(name, skeleton, kwargs.get("pins_path"))
    raise DataFormatError(
        f"unknown garment {name!r}; choose one of {GARMENT_NAMES} or an .obj path")
