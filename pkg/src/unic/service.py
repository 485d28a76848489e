"""Interactive animation engine and its websocket transport.

The engine is synchronous and owns all state; one call to tick() advances
exactly one 1/30 s frame: pick the next motion frame (scripted playback
or motion-matched from player intent), run the deformation step, resolve
collisions against the body shell, and emit positions. The websocket
layer is a thin shell: JSON control in (latest wins), binary frames out
(bounded queue, drop-oldest), malformed input answered with an error
message on a live session.

Binary frame layout, little-endian:
    u32 frame_index | u32 V | u32 B | f32 server_fps | f32 tick_ms
    | f32[3V] garment positions | f32[3B] body positions
"""

import dataclasses
import json
import logging
import struct
import time

import numpy as np

from . import field as fld
from .collision import BodySnapshot, resolve as collision_resolve
from .errors import DataFormatError, NumericError
from .matching import FADE_TICKS, SEARCH_INTERVAL, MatchState, match_next
from .motion import (frame_slices, heading_yaw, pose_from_frame,
                     root_transform_from_frame, rot_y, sixd_to_rot)

log = logging.getLogger("unic.service")

TICK_DT = 1.0 / 30.0
RESOLVE_RADIUS = 0.005
REPLAN_SPEED_DELTA = 0.25   # m/s commanded-velocity jump that forces a search
PROTOCOL_VERSION = 1
SEND_QUEUE_FRAMES = 8

_HEADER = struct.Struct("<IIIff")


@dataclasses.dataclass
class EngineFrame:
    frame_index: int
    garment: np.ndarray     # (V, 3) float32
    body: np.ndarray        # (B, 3) float32
    server_fps: float
    tick_ms: float


def encode_frame(f):
    return (_HEADER.pack(f.frame_index, len(f.garment), len(f.body),
                         f.server_fps, f.tick_ms)
            + np.ascontiguousarray(f.garment, dtype="<f4").tobytes()
            + np.ascontiguousarray(f.body, dtype="<f4").tobytes())


def decode_frame(buf):
    if len(buf) < _HEADER.size:
        raise DataFormatError("frame shorter than its header")
    idx, V, B, fps, tick_ms = _HEADER.unpack_from(buf)
    need = _HEADER.size + 12 * (V + B)
    if len(buf) != need:
        raise DataFormatError(
            f"frame length {len(buf)}, expected {need} for V={V} B={B}")
    garment = np.frombuffer(buf, dtype="<f4", count=3 * V,
                            offset=_HEADER.size).reshape(V, 3)
    body = np.frombuffer(buf, dtype="<f4", count=3 * B,
                         offset=_HEADER.size + 12 * V).reshape(B, 3)
    return EngineFrame(idx, garment, body, fps, tick_ms)


@dataclasses.dataclass
class Control:
    move: tuple = (0.0, 0.0)   # planar direction, character root frame
    speed: float = 0.0         # m/s


class _Alignment:
    """Rigid yaw+translation carrying source-clip roots into the world."""

    def __init__(self, theta=0.0, src_xz=(0.0, 0.0), char_xz=(0.0, 0.0)):
        self.theta = theta
        self.rot = rot_y(theta)
        self.src_xz = np.asarray(src_xz, dtype=np.float64)
        self.char_xz = np.asarray(char_xz, dtype=np.float64)

    def apply(self, frame, num_joints, slices):
        from .motion import reroot_frame

        r = frame[slices["root_pos"]].astype(np.float64)
        d = np.array([r[0], r[2]]) - self.src_xz
        c, s = np.cos(self.theta), np.sin(self.theta)
        xz = self.char_xz + np.array([c * d[0] + s * d[1],
                                      -s * d[0] + c * d[1]])
        return reroot_frame(frame, num_joints, self.rot, xz)


class Engine:
    """Fixed-step animation loop; playback or interactive matching."""

    def __init__(self, model, skeleton, drape, playback=None, database=None,
                 body=None, garment_faces=None, workers=1,
                 resolve_radius=RESOLVE_RADIUS):
        if (playback is None) == (database is None):
            raise ValueError("pass exactly one of playback=, database=")
        if database is not None and body is None:
            raise ValueError("interactive mode needs the capsule body")
        self.model = model
        self.skeleton = skeleton
        self.workers = workers
        self.resolve_radius = resolve_radius
        self.playback = playback
        self.db = database
        self.body = body
        if playback is not None:
            self.garment_faces = np.asarray(playback.garment_faces)
            self.body_faces = np.asarray(playback.body_faces)
        else:
            self.garment_faces = np.asarray(
                garment_faces if garment_faces is not None
                else np.zeros((0, 3), dtype=np.int64))
            self.body_faces = np.asarray(body.shell_faces)
        self._slices = frame_slices(skeleton.num_joints)
        self.drape = np.asarray(drape, dtype=np.float32)
        self.control = Control()
        self._fps_ema = 0.0
        self.resets = 0
        self.reset()

    # state ------------------------------------------------------------

    def reset(self):
        self.frame_index = 0
        self.garment = self.drape.copy()
        self.last_valid = self.garment
        if self.db is not None:
            self.match = MatchState(clip_id=0, frame=0)
            self.align = _Alignment()
            self.cur_frame = self.db.clips[0][0].copy()
            self._fade = 0
            self._fade_from = None

    def set_control(self, control):
        """Adopt a steering command, replanning early on a sharp change.

        The matcher only re-queries the database every SEARCH_INTERVAL
        ticks; letting a direction flip wait out that window reads as
        input lag. A commanded-velocity jump above REPLAN_SPEED_DELTA
        therefore marks the search as already due, so the next tick
        picks a new clip. Identical keepalive messages and gentle speed
        ramps keep the regular cadence.
        """
        prev = self.control
        self.control = control
        if self.db is None:
            return
        dv = np.hypot(prev.move[0] * prev.speed - control.move[0] * control.speed,
                      prev.move[1] * prev.speed - control.move[1] * control.speed)
        if dv > REPLAN_SPEED_DELTA:
            self.match.ticks_since_search = SEARCH_INTERVAL

    # frame selection ----------------------------------------------------

    def _next_playback(self):
        ds = self.playback
        t = self.frame_index + 1
        if t >= ds.frames:
            self.reset()
            return None
        pair = np.concatenate([ds.motion[t - 1], ds.motion[t]])
        body = BodySnapshot(ds.body_pos[t].astype(np.float64),
                            ds.body_nrm[t].astype(np.float64),
                            cell_size=ds.cell_size)
        return t, pair, ds.motion[t], body

    def _next_interactive(self):
        t = self.frame_index + 1
        desired = (self.control.move[0] * self.control.speed,
                   self.control.move[1] * self.control.speed)
        prev_emit = self.cur_frame
        clip, f, jumped = match_next(self.db, self.match, prev_emit, desired)
        src = self.db.clips[clip][f]
        if jumped:
            s = self._slices
            R_e = sixd_to_rot(prev_emit[s["root_rot6"]].astype(np.float64))
            R_s = sixd_to_rot(src[s["root_rot6"]].astype(np.float64))
            r_e = prev_emit[s["root_pos"]]
            r_s = src[s["root_pos"]]
            self.align = _Alignment(
                theta=heading_yaw(R_e) - heading_yaw(R_s),
                src_xz=(r_s[0], r_s[2]), char_xz=(r_e[0], r_e[2]))
            self._fade = FADE_TICKS
            self._fade_from = prev_emit.copy()
        cur = self.align.apply(src, self.skeleton.num_joints, self._slices)
        if self._fade > 0:
            u = 1.0 - self._fade / (FADE_TICKS + 1.0)
            blend = (1.0 - u) * self._fade_from + u * cur
            s = self._slices
            blend[s["contacts"]] = (self._fade_from if u < 0.5 else cur)[s["contacts"]]
            cur = blend.astype(np.float32)
            self._fade -= 1
        pair = np.concatenate([prev_emit, cur])
        pose = pose_from_frame(cur, self.skeleton)
        snap = self.body.snapshot(pose)
        self.cur_frame = cur
        return t, pair, cur, snap

    # the tick -----------------------------------------------------------

    def tick(self):
        """Advance one frame; returns an EngineFrame."""
        t0 = time.perf_counter()
        nxt = (self._next_playback() if self.playback is not None
               else self._next_interactive())
        if nxt is None:   # playback wrapped; emit the fresh drape
            body = BodySnapshot(self.playback.body_pos[0].astype(np.float64),
                                self.playback.body_nrm[0].astype(np.float64),
                                cell_size=self.playback.cell_size)
            return self._emit(body.vertices, t0)
        t, pair, frame, body = nxt
        try:
            logits = self.model.encoder.encode_np(pair)
            z = self.model.sample_np(logits)[0]
            root = None
            if self.model.hyper.root_frame_queries:
                root = root_transform_from_frame(frame, self.skeleton.num_joints)
            g = fld.step(self.garment, z, self.model.field, root=root,
                         workers=self.workers,
                         positional_encoding=self.model.hyper.positional_encoding,
                         frame_index=t)
            g, _ = collision_resolve(g, body, self.resolve_radius)
            self.garment = g
            self.last_valid = g
        except NumericError as e:
            log.warning("tick %d: %s; restoring last valid state", t, e)
            self.garment = self.last_valid
            self.resets += 1
        self.frame_index = t
        return self._emit(body.vertices, t0)

    def _emit(self, body_vertices, t0):
        ms = (time.perf_counter() - t0) * 1000.0
        inst = 1000.0 / ms if ms > 0 else 0.0
        self._fps_ema = inst if self._fps_ema == 0 else (
            0.9 * self._fps_ema + 0.1 * inst)
        return EngineFrame(self.frame_index, self.garment,
                           np.asarray(body_vertices, dtype=np.float32),
                           float(self._fps_ema), float(ms))

    def hello(self):
        if self.playback is not None:
            body_count = int(self.playback.body_pos.shape[1])
        else:
            body_count = int(self.body.num_vertices)
        return {
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "fps": 30,
            "vertices": int(len(self.garment)),
            "body_vertices": body_count,
            "garment_faces": np.asarray(self.garment_faces,
                                        dtype=int).ravel().tolist(),
            "body_faces": np.asarray(self.body_faces,
                                     dtype=int).ravel().tolist(),
        }


def parse_control(text):
    """JSON control message -> Control or ('reset',); raises DataFormatError."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"control is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "type" not in doc:
        raise DataFormatError("control must be an object with a 'type'")
    kind = doc["type"]
    if kind == "reset":
        return "reset"
    if kind != "control":
        raise DataFormatError(f"unknown message type {kind!r}")
    try:
        move = doc.get("move", (0.0, 0.0))
        mx, mz = float(move[0]), float(move[1])
        speed = float(doc.get("speed", 0.0))
    except (TypeError, ValueError, IndexError) as e:
        raise DataFormatError(f"bad control payload: {e}") from e
    if not (np.isfinite(mx) and np.isfinite(mz) and np.isfinite(speed)):
        raise DataFormatError("control values must be finite")
    n = np.hypot(mx, mz)
    if n > 1.0:
        mx, mz = mx / n, mz / n
    return Control(move=(mx, mz), speed=max(0.0, min(speed, 5.0)))


async def serve(engine, host="127.0.0.1", port=8765, ready=None):
    """Run the engine at 30 Hz and fan frames out to websocket clients."""
    import asyncio

    import websockets

    clients = {}

    async def handler(ws):
        queue = asyncio.Queue(maxsize=SEND_QUEUE_FRAMES)
        clients[ws] = queue
        await ws.send(json.dumps(engine.hello()))

        async def sender():
            while True:
                await ws.send(await queue.get())

        send_task = asyncio.create_task(sender())
        try:
            async for message in ws:
                if isinstance(message, bytes):
                    await ws.send(json.dumps(
                        {"type": "error", "message": "binary input not accepted"}))
                    continue
                try:
                    parsed = parse_control(message)
                except DataFormatError as e:
                    await ws.send(json.dumps({"type": "error", "message": str(e)}))
                    continue
                if parsed == "reset":
                    engine.reset()
                else:
                    engine.set_control(parsed)   # latest wins
        finally:
            send_task.cancel()
            del clients[ws]

    async def tick_loop():
        loop = asyncio.get_running_loop()
        next_t = loop.time()
        while True:
            frame = engine.tick()
            payload = encode_frame(frame)
            for queue in clients.values():
                if queue.full():
                    queue.get_nowait()   # drop the oldest frame
                queue.put_nowait(payload)
            next_t += TICK_DT
            delay = next_t - loop.time()
            if delay < -1.0:   # fell far behind; resynchronize
                next_t = loop.time()
            await asyncio.sleep(max(0.0, delay))

    async with websockets.serve(handler, host, port) as server:
        if ready is not None:
            ready.set_result(server.sockets[0].getsockname()[1])
        await tick_loop()
