import numpy as np
import pytest

from unic.errors import NumericError
from unic.motion import (forward_kinematics, frame_slices, identity_pose,
                         motion_frames_for_poses)
from unic.oracle import (CapsuleBody, ClothSpec, SimConfig, SimState,
                         build_capsule_body, build_skeleton, collide_capsule,
                         garment_by_name, generate_motion_clip, make_skirt,
                         simulate_sequence)
from unic.oracle.cloth import (capsule_penetration, color_constraints,
                               dihedral_angles, dihedral_gradients, make_state,
                               settle, stretch_residual, xpbd_step)
from unic.oracle.sequence import pin_world_targets

from conftest import rng


def patch_spec(rows=3, cols=3, spacing=0.1, **kw):
    xs = np.arange(cols) * spacing
    ys = np.arange(rows) * -spacing
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    rest = np.stack([gx.ravel(), gy.ravel(), np.zeros(rows * cols)], axis=1)
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            faces.append([a, a + 1, a + cols])
            faces.append([a + 1, a + cols + 1, a + cols])
    return ClothSpec(rest_pos=rest, faces=np.asarray(faces, dtype=np.int64),
                     mass=0.01, **kw)


# -- constraint coloring -------------------------------------------------------


def test_coloring_is_alias_free_partition():
    r = rng(40, 0)
    constraints = [tuple(r.choice(30, size=2, replace=False)) for _ in range(80)]
    constraints += [tuple(r.choice(30, size=4, replace=False)) for _ in range(40)]
    colors = color_constraints(constraints)
    seen = np.concatenate([np.asarray(c) for c in colors])
    assert sorted(seen.tolist()) == list(range(len(constraints)))
    for idx in colors:
        touched = set()
        for ci in idx:
            vs = set(constraints[int(ci)])
            assert not (touched & vs), "two constraints in a color share a vertex"
            touched |= vs


def test_coloring_chain_needs_two_colors():
    colors = color_constraints([(0, 1), (1, 2), (2, 3)])
    assert len(colors) == 2
    assert colors[0].tolist() == [0, 2]
    assert colors[1].tolist() == [1]


# -- solver basics ------------------------------------------------------------


def test_rest_cloth_without_gravity_stays_put():
    spec = patch_spec()
    cfg = SimConfig(gravity=(0.0, 0.0, 0.0))
    state = make_state(spec)
    xpbd_step(state, spec, [], cfg)
    assert np.max(np.abs(state.pos - spec.rest_pos)) < 1e-6


def test_free_particle_falls_ballistically():
    spec = ClothSpec(rest_pos=np.zeros((1, 3)), faces=np.zeros((0, 3), np.int64),
                     mass=0.02)
    cfg = SimConfig(damping=0.0)
    state = make_state(spec)
    xpbd_step(state, spec, [], cfg)
    g = np.array(cfg.gravity)
    dt_s = cfg.dt / cfg.substeps
    S = cfg.substeps
    assert np.allclose(state.vel[0], g * cfg.dt, atol=1e-12)
    # position integrates the staircase of substep velocities
    expected = g * dt_s * dt_s * S * (S + 1) / 2
    assert np.allclose(state.pos[0], expected, atol=1e-12)


def test_stretched_triangle_relaxes_to_rest_lengths():
    rest = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.05, 0.1, 0.0]])
    spec = ClothSpec(rest_pos=rest, faces=np.array([[0, 1, 2]]), mass=0.01)
    cfg = SimConfig(gravity=(0.0, 0.0, 0.0), damping=0.2)
    state = SimState(pos=rest * 1.3, vel=np.zeros_like(rest))
    settle(state, spec, [], cfg, tol=1e-9, max_steps=400)
    assert stretch_residual(state.pos, spec) < 1e-3


def test_pinned_vertices_interpolate_to_targets():
    spec = patch_spec(pinned=np.array([0, 2]))
    cfg = SimConfig()
    state = make_state(spec)
    target = spec.rest_pos[[0, 2]] + np.array([0.0, 0.05, 0.0])
    xpbd_step(state, spec, [], cfg, pin_targets=target,
              pin_targets_prev=spec.rest_pos[[0, 2]])
    assert np.allclose(state.pos[[0, 2]], target, atol=1e-12)


def test_solver_flags_divergence():
    spec = patch_spec()
    state = make_state(spec)
    state.pos[0, 0] = np.nan
    with pytest.raises(NumericError) as exc:
        xpbd_step(state, spec, [], SimConfig(), frame=12)
    assert exc.value.frame == 12


def test_settle_stops_early_when_still():
    spec = patch_spec(pinned=np.arange(9))  # everything pinned: no motion
    state = make_state(spec)
    steps = settle(state, spec, [], SimConfig(), tol=1e-7)
    assert steps == 1


# -- capsule projection ----------------------------------------------------------


def test_capsule_leaves_clear_points_alone():
    p = np.array([[0.0, 0.5, 0.4]])
    out, inside = collide_capsule(p, np.zeros(3), np.array([0.0, 1.0, 0.0]),
                                  radius=0.1, offset=0.003)
    assert not inside.any()
    assert np.array_equal(out, p)


def test_capsule_pushes_to_exact_shell():
    a, b = np.zeros(3), np.array([0.0, 1.0, 0.0])
    p = np.array([[0.05, 0.5, 0.0]])
    out, inside = collide_capsule(p, a, b, radius=0.1, offset=0.003)
    assert inside.all()
    assert np.linalg.norm(out[0] - [0.0, 0.5, 0.0]) == pytest.approx(0.103)
    # radial direction is preserved
    assert out[0, 1] == 0.5 and out[0, 2] == 0.0 and out[0, 0] > 0


def test_capsule_axis_point_uses_z_fallback():
    a, b = np.zeros(3), np.array([0.0, 1.0, 0.0])
    out, inside = collide_capsule(np.array([[0.0, 0.5, 0.0]]), a, b,
                                  radius=0.1, offset=0.003)
    assert inside.all()
    assert np.allclose(out[0], [0.0, 0.5, 0.103], atol=1e-12)


def test_capsule_z_axis_falls_back_to_x():
    a, b = np.zeros(3), np.array([0.0, 0.0, 1.0])
    out, _ = collide_capsule(np.array([[0.0, 0.0, 0.5]]), a, b,
                             radius=0.1, offset=0.003)
    assert np.allclose(out[0], [0.103, 0.0, 0.5], atol=1e-12)


def test_degenerate_capsule_acts_as_sphere():
    c = np.array([0.2, 0.3, 0.4])
    out, inside = collide_capsule(c[None], c, c, radius=0.05, offset=0.003)
    assert inside.all()
    assert np.allclose(out[0], c + [0.0, 0.0, 0.053], atol=1e-12)


def test_penetration_depth_metric():
    caps = [(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.1)]
    assert capsule_penetration(np.array([[0.5, 0.5, 0.0]]), caps) == 0.0
    depth = capsule_penetration(np.array([[0.04, 0.5, 0.0]]), caps)
    assert depth == pytest.approx(0.06)


# -- bending -------------------------------------------------------------------


def hinge_pos(fold):
    # shared edge 0-1 along y, wings at 2 (x>0) and 3 (folds out of plane)
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.1, 0.0], [0.1, 0.05, 0.0],
                     [-0.1 * np.cos(fold), 0.05, 0.1 * np.sin(fold)]])


def test_dihedral_angle_flat_and_signed():
    hinges = np.array([[0, 1, 2, 3]])
    flat, _ = dihedral_angles(hinge_pos(0.0), hinges)
    assert abs(flat[0]) < 1e-12
    up, _ = dihedral_angles(hinge_pos(0.5), hinges)
    down, _ = dihedral_angles(hinge_pos(-0.5), hinges)
    assert up[0] == pytest.approx(-down[0], abs=1e-12)
    assert abs(up[0]) == pytest.approx(0.5, abs=1e-9)


def test_dihedral_gradients_match_finite_differences():
    hinges = np.array([[0, 1, 2, 3]])
    pos = hinge_pos(0.7) + rng(40, 1).normal(0, 0.01, (4, 3))
    grads = dihedral_gradients(pos, hinges)
    assert grads[4].all()
    eps = 1e-7
    for v in range(4):
        for axis in range(3):
            plus = pos.copy()
            plus[v, axis] += eps
            minus = pos.copy()
            minus[v, axis] -= eps
            num = (dihedral_angles(plus, hinges)[0][0]
                   - dihedral_angles(minus, hinges)[0][0]) / (2 * eps)
            assert grads[v][0, axis] == pytest.approx(num, abs=2e-6), (v, axis)


# -- skirt on the body -----------------------------------------------------------


def test_settled_skirt_is_calm_and_clear(skeleton, capsule_body, tiny_skirt):
    cfg = SimConfig()
    pose = identity_pose(skeleton)
    rots, poss = forward_kinematics(skeleton, pose)
    caps = capsule_body.world_capsules(rots, poss)
    targets = pin_world_targets(tiny_skirt, rots, poss)
    state = SimState(pos=tiny_skirt.rest_pos @ pose.root_rot.T + pose.root_pos,
                     vel=np.zeros_like(tiny_skirt.rest_pos))
    settle(state, tiny_skirt, caps, cfg, targets, tol=1e-6, max_steps=600)
    settled = state.pos.copy()
    assert stretch_residual(settled, tiny_skirt) < 0.02
    for _ in range(100):
        xpbd_step(state, tiny_skirt, caps, cfg, pin_targets=targets,
                  pin_targets_prev=targets)
    drift = float(np.max(np.linalg.norm(state.pos - settled, axis=1)))
    assert drift < 1e-3, f"resettled skirt drifted {drift:.2e} m"


# -- motion clips ------------------------------------------------------------------


def root_speeds(poses, fps=30):
    p = np.stack([q.root_pos for q in poses])
    return np.linalg.norm(np.diff(p, axis=0), axis=1) * fps


def test_idle_clip_stays_near_origin():
    sk, poses = generate_motion_clip("idle", 2.0, seed=3)
    assert len(poses) == 60
    assert root_speeds(poses).max() < 0.05


def test_walk_clip_alternates_foot_contacts():
    sk, poses = generate_motion_clip("walk", 2.0, seed=5)
    frames = motion_frames_for_poses(poses, sk, dt=1 / 30)
    contacts = frames[:, frame_slices(sk.num_joints)["contacts"]]
    left, right = contacts[20:, 0], contacts[20:, 2]
    for leg in (left, right):
        assert leg.max() == 1.0 and leg.min() == 0.0, "no swing/stance cycle"
    assert np.any(left != right)


def test_sprint_stop_reaches_speed_then_stands():
    sk, poses = generate_motion_clip("sprint_stop", 4.0, seed=2)
    speeds = root_speeds(poses)
    assert speeds.max() > 3.0
    assert speeds[-15:].max() < 0.1


def test_clip_generation_is_seeded():
    _, a = generate_motion_clip("walk", 1.0, seed=11)
    _, b = generate_motion_clip("walk", 1.0, seed=11)
    _, c = generate_motion_clip("walk", 1.0, seed=12)
    assert all(np.array_equal(x.root_pos, y.root_pos)
               and np.array_equal(x.joint_rots, y.joint_rots)
               for x, y in zip(a, b))
    assert any(not np.array_equal(x.root_pos, y.root_pos)
               for x, y in zip(a, c))


def test_clip_kind_and_duration_validation():
    with pytest.raises(ValueError):
        generate_motion_clip("moonwalk", 1.0)
    with pytest.raises(ValueError):
        generate_motion_clip("idle", 0.0)


# -- full sequences --------------------------------------------------------------


def test_single_pose_yields_static_drape(skeleton, capsule_body, tiny_skirt):
    _, poses = generate_motion_clip("idle", 1.0, seed=3)
    ds = simulate_sequence(skeleton, poses[:1], tiny_skirt, capsule_body)
    assert ds.garment.shape == (1, 48, 3)
    assert ds.motion.shape[0] == 1


def test_pins_ride_their_bones(skeleton, capsule_body, tiny_skirt, walk_ds):
    _, poses = generate_motion_clip("walk", 2.0, seed=5)
    pins = tiny_skirt.pinned
    for t in (10, 30, 55):
        rots, poss = forward_kinematics(skeleton, poses[t])
        targets = pin_world_targets(tiny_skirt, rots, poss)
        got = walk_ds.garment[t][pins]
        assert np.max(np.abs(got - targets)) < 1e-6, t


def test_sequence_penetration_audit_raises(skeleton, capsule_body, tiny_skirt):
    _, poses = generate_motion_clip("idle", 0.2, seed=3)
    with pytest.raises(NumericError) as exc:
        simulate_sequence(skeleton, poses, tiny_skirt, capsule_body,
                          penetration_limit=-1.0)
    assert "penetrates" in str(exc.value)


def test_sequence_requires_poses(skeleton, capsule_body, tiny_skirt):
    with pytest.raises(ValueError):
        simulate_sequence(skeleton, [], tiny_skirt, capsule_body)


# -- garment construction ----------------------------------------------------------


def test_builtin_garment_sizes(skeleton):
    assert garment_by_name("skirt", skeleton).num_vertices == 441
    assert garment_by_name("skirt3k", skeleton).num_vertices == 3000
    assert garment_by_name("cape", skeleton).num_vertices == 144
    assert garment_by_name("tabard", skeleton).num_vertices == 224


def test_garment_pins_are_valid(skeleton):
    for name in ("skirt", "cape", "tabard"):
        spec = garment_by_name(name, skeleton)
        assert spec.pinned.size > 0
        assert spec.pinned.min() >= 0
        assert spec.pinned.max() < spec.num_vertices
        assert spec.pin_joints.shape == spec.pinned.shape
        assert spec.pin_local.shape == (spec.pinned.size, 3)
        assert np.all(spec.inv_mass[spec.pinned] == 0)


def test_unknown_garment_name_rejected(skeleton):
    from unic.errors import DataFormatError

    with pytest.raises(DataFormatError):
        garment_by_name("hoodie", skeleton)


def test_obj_garment_with_sidecar(tmp_path, skeleton):
    obj = tmp_path / "banner.obj"
    obj.write_text("v 0 0 0\nv 0.1 0 0\nv 0.1 0.1 0\nv 0 0.1 0\nf 1 2 3 4\n")
    (tmp_path / "banner.pins.json").write_text(
        '{"pins": [{"vertex": 3, "joint": "spine3"}],'
        ' "bend_compliance": 0.5}')
    spec = garment_by_name(str(obj), skeleton)
    assert spec.num_vertices == 4
    assert spec.pinned.tolist() == [3]
    assert spec.bend_compliance == 0.5


def test_obj_garment_sidecar_validation(tmp_path, skeleton):
    from unic.errors import DataFormatError

    obj = tmp_path / "banner.obj"
    obj.write_text("v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nf 1 2 3\n")
    side = tmp_path / "banner.pins.json"
    side.write_text('{"pins": [{"vertex": 9, "joint": "spine3"}]}')
    with pytest.raises(DataFormatError):
        garment_by_name(str(obj), skeleton)
    side.write_text('{"pins": [{"vertex": 0, "joint": "tail"}]}')
    with pytest.raises(DataFormatError):
        garment_by_name(str(obj), skeleton)
    side.write_text('{"pins": [')
    with pytest.raises(DataFormatError):
        garment_by_name(str(obj), skeleton)


def test_skirt_mass_scales_with_area(skeleton):
    small = make_skirt(skeleton, rings=6, segments=8)
    big = make_skirt(skeleton, rings=6, segments=8, hem_radius=0.6, length=0.9)
    assert big.mass > small.mass


def test_capsule_body_snapshot_matches_pose(skeleton, capsule_body):
    pose = identity_pose(skeleton)
    snap = capsule_body.snapshot(pose=pose)
    rots, poss = forward_kinematics(skeleton, pose)
    pos, nrm = capsule_body.shell_world(rots, poss)
    assert np.allclose(snap.vertices, pos, atol=1e-12)
    assert np.allclose(snap.normals, nrm, atol=1e-12)
