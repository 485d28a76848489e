import json

import numpy as np
import pytest

from unic import matching, service
from unic.errors import DataFormatError, DimensionError, NumericError
from unic.train import prepare_clip, rollout_dataset

from conftest import rng


@pytest.fixture(scope="module")
def motion_db(idle_ds, walk_ds, skeleton):
    return matching.MotionDatabase.build(
        [idle_ds.motion, walk_ds.motion], idle_ds.num_joints, skeleton)


@pytest.fixture(scope="module")
def motion_db3(idle_ds, walk_ds, skeleton):
    """Adds a clip with a stop transition so zero intent has a target."""
    from unic.motion import motion_frames_for_poses
    from unic.oracle import generate_motion_clip

    _, poses = generate_motion_clip("sprint_stop", 3.5, seed=7)
    stop = motion_frames_for_poses(poses, skeleton, dt=1 / 30).astype(np.float32)
    return matching.MotionDatabase.build(
        [idle_ds.motion, walk_ds.motion, stop], idle_ds.num_joints, skeleton)


def planar_speed(frame, num_joints):
    from unic.motion import frame_slices

    v = frame[frame_slices(num_joints)["root_vel"]]
    return float(np.hypot(v[0], v[2]))


# -- feature extraction -------------------------------------------------------


def test_feature_vector_width(idle_ds, motion_db):
    feats = matching.clip_features(idle_ds.motion, idle_ds.num_joints,
                                   motion_db.foot_joints)
    assert matching.FEATURE_DIM == 28
    assert feats.shape == (idle_ds.motion.shape[0], 28)


def test_database_rows_are_zscored(motion_db):
    mean = motion_db.rows.mean(axis=0)
    std = motion_db.rows.std(axis=0)
    assert np.max(np.abs(mean)) < 1e-9
    varying = motion_db.std != 1.0
    assert np.allclose(std[np.abs(std) > 1e-12], 1.0, atol=1e-9)
    assert varying.any()


def test_database_respects_end_margin(motion_db, idle_ds, walk_ds):
    for ci, motion in enumerate((idle_ds.motion, walk_ds.motion)):
        frames = motion_db.index[motion_db.index[:, 0] == ci, 1]
        assert frames.min() == 1
        assert frames.max() == len(motion) - 1 - matching.END_MARGIN
        assert motion_db.last_valid(ci) == len(motion) - 1 - matching.END_MARGIN


def test_database_needs_long_clips(idle_ds, skeleton):
    with pytest.raises(ValueError):
        matching.MotionDatabase.build([idle_ds.motion[:5]],
                                      idle_ds.num_joints, skeleton)


def test_search_finds_own_row(motion_db, walk_ds):
    feats = matching.clip_features(walk_ds.motion, walk_ds.num_joints,
                                   motion_db.foot_joints)
    for t in (5, 20, 40):
        assert motion_db.search(feats[t]) == (1, t)


def test_search_matches_brute_force(motion_db):
    r = rng(80, 0)
    for _ in range(25):
        row = motion_db.rows[int(r.integers(0, len(motion_db.rows)))]
        raw = motion_db.mean + motion_db.std * (row + r.normal(0, 0.3, 28))
        assert motion_db.search(raw) == motion_db.search_brute(raw)


def test_search_validates_width(motion_db):
    with pytest.raises(DimensionError):
        motion_db.search(np.zeros(27))


def test_idle_features_read_stationary(idle_ds, motion_db):
    feats = matching.clip_features(idle_ds.motion, idle_ds.num_joints,
                                   motion_db.foot_joints)
    # future planar displacement (cols 0..5) and root velocity (24..26)
    assert np.max(np.abs(feats[:, :6])) < 0.06
    assert np.max(np.abs(feats[:, 24:27])) < 0.1


def test_query_features_encode_intent(idle_ds, motion_db):
    frame = idle_ds.motion[10]
    q = matching.query_features(frame, idle_ds.num_joints,
                                motion_db.foot_joints, (0.0, 1.5))
    # straight-line trajectory at 1.5 m/s along +z, facing forward
    for i, k in enumerate(matching.FUTURE_OFFSETS):
        assert q[2 * i] == pytest.approx(0.0)
        assert q[2 * i + 1] == pytest.approx(1.5 * k / 30.0)
    assert tuple(q[6:8]) == (0.0, 1.0)
    q0 = matching.query_features(frame, idle_ds.num_joints,
                                 motion_db.foot_joints, (0.0, 0.0))
    assert np.all(q0[:6] == 0.0)


# -- cursor dynamics ---------------------------------------------------------------


def test_cursor_advances_sequentially_between_searches(motion_db, walk_ds):
    state = matching.MatchState(clip_id=1, frame=5, ticks_since_search=0)
    live = walk_ds.motion[5]
    for step in range(matching.SEARCH_INTERVAL - 1):
        clip, frame, jumped = matching.match_next(motion_db, state, live,
                                                  (0.0, 1.0))
        assert (clip, frame, jumped) == (1, 6 + step, False)


def test_exhausted_cursor_forces_research(motion_db, idle_ds):
    last = motion_db.last_valid(0)
    state = matching.MatchState(clip_id=0, frame=last, ticks_since_search=0)
    clip, frame, _ = matching.match_next(motion_db, state, idle_ds.motion[last],
                                         (0.0, 0.0))
    assert frame <= motion_db.last_valid(clip)
    assert state.ticks_since_search == 0


def test_stationary_intent_settles_to_standing(motion_db3, walk_ds):
    J = motion_db3.num_joints
    state = matching.MatchState(clip_id=1, frame=12, ticks_since_search=0)
    live = walk_ds.motion[12]
    for _ in range(4 * matching.SEARCH_INTERVAL):
        clip, frame, _ = matching.match_next(motion_db3, state, live,
                                             (0.0, 0.0))
        live = motion_db3.clips[clip][frame]
    assert planar_speed(live, J) < 0.2, \
        "zero-speed intent never reached a standing frame"


def test_moving_intent_reaches_locomotion(motion_db3, idle_ds):
    J = motion_db3.num_joints
    state = matching.MatchState(clip_id=0, frame=3, ticks_since_search=0)
    live = idle_ds.motion[3]
    for _ in range(4 * matching.SEARCH_INTERVAL):
        clip, frame, _ = matching.match_next(motion_db3, state, live,
                                             (0.0, 3.5))
        live = motion_db3.clips[clip][frame]
    assert planar_speed(live, J) > 0.5, \
        "forward intent never reached a moving frame"


# -- frame codec ---------------------------------------------------------------------


def test_frame_codec_round_trip():
    r = rng(80, 1)
    frame = service.EngineFrame(
        frame_index=1234,
        garment=r.normal(0, 1, (48, 3)).astype(np.float32),
        body=r.normal(0, 1, (30, 3)).astype(np.float32),
        server_fps=59.5, tick_ms=16.25)
    buf = service.encode_frame(frame)
    assert len(buf) == 20 + 12 * (48 + 30)
    back = service.decode_frame(buf)
    assert back.frame_index == 1234
    assert np.array_equal(back.garment, frame.garment)
    assert np.array_equal(back.body, frame.body)
    assert back.server_fps == pytest.approx(59.5)
    assert back.tick_ms == pytest.approx(16.25)


def test_frame_codec_rejects_bad_lengths():
    with pytest.raises(DataFormatError):
        service.decode_frame(b"\x00" * 10)
    frame = service.EngineFrame(0, np.zeros((2, 3), np.float32),
                                np.zeros((1, 3), np.float32), 0.0, 0.0)
    buf = service.encode_frame(frame)
    with pytest.raises(DataFormatError):
        service.decode_frame(buf + b"\x00")
    with pytest.raises(DataFormatError):
        service.decode_frame(buf[:-1])


# -- control parsing -----------------------------------------------------------------


def test_parse_control_accepts_and_clamps():
    c = service.parse_control('{"type": "control", "move": [0, 1], "speed": 2}')
    assert c.move == (0.0, 1.0) and c.speed == 2.0
    c = service.parse_control('{"type": "control", "move": [3, 4], "speed": 9}')
    assert c.move[0] == pytest.approx(0.6)
    assert c.move[1] == pytest.approx(0.8)
    assert c.speed == 5.0
    c = service.parse_control('{"type": "control", "speed": -2}')
    assert c.speed == 0.0 and c.move == (0.0, 0.0)
    assert service.parse_control('{"type": "reset"}') == "reset"


@pytest.mark.parametrize("text", [
    "not json",
    '{"no_type": 1}',
    '[1, 2]',
    '{"type": "warp"}',
    '{"type": "control", "move": [1]}',
    '{"type": "control", "move": "fast"}',
    '{"type": "control", "speed": "NaN"}',
    '{"type": "control", "move": [1, null]}',
])
def test_parse_control_rejects_malformed(text):
    with pytest.raises(DataFormatError):
        service.parse_control(text)


# -- engine: playback ---------------------------------------------------------------


def test_playback_engine_matches_library_rollout(fitted, walk_ds, skeleton):
    engine = service.Engine(fitted.model_, skeleton, walk_ds.garment[0],
                            playback=walk_ds)
    states = rollout_dataset(fitted.model_, walk_ds, resolve=True)
    for t in range(1, 21):
        frame = engine.tick()
        assert frame.frame_index == t
        assert np.array_equal(frame.garment, states[t]), t
        assert np.array_equal(frame.body, walk_ds.body_pos[t])


def test_playback_wraps_to_drape(fitted, idle_ds, skeleton):
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            playback=idle_ds)
    for _ in range(idle_ds.frames - 1):
        engine.tick()
    assert engine.frame_index == idle_ds.frames - 1
    frame = engine.tick()   # wraps: reset, then emits the drape
    assert frame.frame_index == 0
    assert np.array_equal(frame.garment, idle_ds.garment[0])


def test_zero_field_playback_keeps_garment_static(idle_ds, skeleton, tiny_hyper):
    from unic.model import init_model
    from unic.motion import motion_dim

    model = init_model(tiny_hyper, 23, motion_dim(23), 48, seed=1)
    model.field.layers[-1].weight.data[...] = 0
    model.field.layers[-1].bias.data[...] = 0
    engine = service.Engine(model, skeleton, idle_ds.garment[0],
                            playback=idle_ds)
    moved = []
    for t in range(1, 11):
        frame = engine.tick()
        moved.append(not np.array_equal(frame.body, idle_ds.body_pos[0]))
        assert np.array_equal(frame.garment, idle_ds.garment[0]), t
    assert any(moved), "body never animated; the check is vacuous"


def test_engine_recovers_from_numeric_error(fitted, idle_ds, skeleton,
                                            monkeypatch):
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            playback=idle_ds)
    good = engine.tick()
    real_step = service.fld.step
    tripped = {"n": 0}

    def failing_step(*args, **kwargs):
        if tripped["n"] == 0:
            tripped["n"] += 1
            raise NumericError("injected blowup", frame=kwargs.get("frame_index"))
        return real_step(*args, **kwargs)

    monkeypatch.setattr(service.fld, "step", failing_step)
    frame = engine.tick()
    assert engine.resets == 1
    assert np.array_equal(frame.garment, good.garment)  # held last valid state
    after = engine.tick()   # stream continues normally
    assert engine.resets == 1
    assert after.frame_index == 3
    assert np.all(np.isfinite(after.garment))


def test_engine_requires_exactly_one_source(fitted, idle_ds, skeleton):
    with pytest.raises(ValueError):
        service.Engine(fitted.model_, skeleton, idle_ds.garment[0])


def test_hello_describes_session(fitted, idle_ds, skeleton):
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            playback=idle_ds)
    doc = engine.hello()
    assert doc["type"] == "hello"
    assert doc["protocol"] == service.PROTOCOL_VERSION
    assert doc["fps"] == 30
    assert doc["vertices"] == 48
    assert doc["body_vertices"] == idle_ds.body_pos.shape[1]
    assert len(doc["garment_faces"]) == idle_ds.garment_faces.size
    assert len(doc["body_faces"]) == idle_ds.body_faces.size
    json.dumps(doc)   # must be serializable as-is


# -- engine: interactive ---------------------------------------------------------------


def test_interactive_engine_follows_intent(fitted, idle_ds, skeleton,
                                           capsule_body, motion_db3):
    J = motion_db3.num_joints
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            database=motion_db3, body=capsule_body,
                            garment_faces=idle_ds.garment_faces)
    engine.control = service.Control(move=(0.0, 1.0), speed=3.5)
    for _ in range(3 * matching.SEARCH_INTERVAL):
        frame = engine.tick()
        assert np.all(np.isfinite(frame.garment))
    assert planar_speed(engine.cur_frame, J) > 0.5, \
        "intent never animated locomotion"
    engine.control = service.Control(move=(0.0, 0.0), speed=0.0)
    for _ in range(5 * matching.SEARCH_INTERVAL):
        engine.tick()
    assert planar_speed(engine.cur_frame, J) < 0.2, \
        "release never came back to a stand"


def test_sharp_control_change_replans_next_tick(fitted, idle_ds, skeleton,
                                                capsule_body, motion_db3):
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            database=motion_db3, body=capsule_body,
                            garment_faces=idle_ds.garment_faces)
    engine.set_control(service.Control(move=(0.0, 1.0), speed=3.0))
    for _ in range(3):
        engine.tick()
    assert 0 < engine.match.ticks_since_search < matching.SEARCH_INTERVAL

    # Keepalives and gentle ramps keep the regular search cadence.
    before = engine.match.ticks_since_search
    engine.set_control(service.Control(move=(0.0, 1.0), speed=3.0))
    engine.set_control(service.Control(move=(0.0, 1.0), speed=3.1))
    assert engine.match.ticks_since_search == before

    # A direction flip makes the search due, so the next tick replans
    # instead of waiting out the rest of the interval.
    engine.set_control(service.Control(move=(1.0, 0.0), speed=3.0))
    assert engine.match.ticks_since_search == matching.SEARCH_INTERVAL
    engine.tick()
    assert engine.match.ticks_since_search == 0


def test_interactive_reset_restores_drape(fitted, idle_ds, skeleton,
                                          capsule_body, motion_db):
    engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                            database=motion_db, body=capsule_body)
    for _ in range(5):
        engine.tick()
    assert engine.frame_index == 5
    engine.reset()
    assert engine.frame_index == 0
    assert np.array_equal(engine.garment, idle_ds.garment[0])
    assert engine.match.clip_id == 0 and engine.match.frame == 0


def test_interactive_requires_body(fitted, idle_ds, skeleton, motion_db):
    with pytest.raises(ValueError):
        service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                       database=motion_db)


# -- websocket transport ----------------------------------------------------------------


async def _next_json(ws, timeout=10):
    import asyncio

    while True:
        msg = await asyncio.wait_for(ws.recv(), timeout)
        if isinstance(msg, str):
            return json.loads(msg)


async def _next_binary(ws, timeout=10):
    import asyncio

    while True:
        msg = await asyncio.wait_for(ws.recv(), timeout)
        if isinstance(msg, bytes):
            return msg


def test_serve_runs_a_full_session(fitted, idle_ds, skeleton):
    import asyncio

    import websockets

    async def scenario():
        engine = service.Engine(fitted.model_, skeleton, idle_ds.garment[0],
                                playback=idle_ds)
        loop = asyncio.get_running_loop()
        ready = loop.create_future()
        server = asyncio.create_task(
            service.serve(engine, host="127.0.0.1", port=0, ready=ready))
        port = await asyncio.wait_for(ready, 10)
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                hello = await _next_json(ws)
                assert hello["type"] == "hello"
                assert hello["vertices"] == 48

                first = service.decode_frame(await _next_binary(ws))
                assert first.garment.shape == (48, 3)

                # malformed control: error reply, session stays live
                await ws.send("this is not json")
                err = await _next_json(ws)
                assert err["type"] == "error"
                assert "JSON" in err["message"]

                # binary input: rejected the same way
                await ws.send(b"\x01\x02\x03")
                err = await _next_json(ws)
                assert err["type"] == "error"
                assert "binary" in err["message"]

                nxt = service.decode_frame(await _next_binary(ws))
                assert nxt.frame_index != first.frame_index

                # a valid control and a reset are accepted silently
                await ws.send(json.dumps(
                    {"type": "control", "move": [0, 1], "speed": 1.0}))
                await ws.send(json.dumps({"type": "reset"}))
                service.decode_frame(await _next_binary(ws))
        finally:
            server.cancel()
            try:
                await server
            except asyncio.CancelledError:
                pass

    import asyncio as aio

    aio.run(aio.wait_for(scenario(), 60))
