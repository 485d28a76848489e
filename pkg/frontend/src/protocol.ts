/**
 * Wire protocol for the unic animation service.
 *
 * Each connection starts with one JSON "hello" describing the mesh
 * topology, followed by a stream of binary frames. A binary frame is
 * little-endian:
 *
 *   u32 frameIndex | u32 garmentCount | u32 bodyCount | f32 serverFps | f32 tickMs
 *   f32[3 * garmentCount]   garment vertex positions (xyz)
 *   f32[3 * bodyCount]      body vertex positions (xyz)
 *
 * Controls travel the other way as JSON text messages. The frame parser
 * returns null on anything malformed so callers can drop and count bad
 * frames instead of crashing the render loop.
 */

export const PROTOCOL_VERSION = 1;
export const FRAME_HEADER_BYTES = 20;

/** Hard cap on per-mesh vertex counts; anything above is a corrupt header. */
const MAX_VERTICES = 4_000_000;

export interface HelloMessage {
  type: 'hello';
  protocol: number;
  fps: number;
  vertices: number;
  body_vertices: number;
  garment_faces: number[];
  body_faces: number[];
}

export interface MeshFrame {
  frameIndex: number;
  serverFps: number;
  tickMs: number;
  /** xyz triples, length 3 * garmentCount */
  garment: Float32Array;
  /** xyz triples, length 3 * bodyCount */
  body: Float32Array;
}

function isIndexArray(v: unknown, vertexCount: number): v is number[] {
  if (!Array.isArray(v) || v.length % 3 !== 0) return false;
  for (const i of v) {
    if (!Number.isInteger(i) || i < 0 || i >= vertexCount) return false;
  }
  return true;
}

/**
 * Parse and validate the hello message. Throws on anything that does not
 * match the documented shape; a bad hello is connection-fatal, unlike a
 * bad frame.
 */
export function parseHello(text: string): HelloMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new Error('hello is not valid JSON');
  }
  if (typeof doc !== 'object' || doc === null) {
    throw new Error('hello is not an object');
  }
  const d = doc as Record<string, unknown>;
  if (d.type !== 'hello') throw new Error(`expected hello, got ${String(d.type)}`);
  if (d.protocol !== PROTOCOL_VERSION) {
    throw new Error(`unsupported protocol ${String(d.protocol)}`);
  }
  const fps = d.fps;
  const vertices = d.vertices;
  const bodyVertices = d.body_vertices;
  if (typeof fps !== 'number' || fps <= 0) throw new Error('hello.fps must be positive');
  if (!Number.isInteger(vertices) || (vertices as number) <= 0 || (vertices as number) > MAX_VERTICES) {
    throw new Error('hello.vertices out of range');
  }
  if (!Number.isInteger(bodyVertices) || (bodyVertices as number) < 0 || (bodyVertices as number) > MAX_VERTICES) {
    throw new Error('hello.body_vertices out of range');
  }
  if (!isIndexArray(d.garment_faces, vertices as number)) {
    throw new Error('hello.garment_faces is not a flat triangle index list');
  }
  if (!isIndexArray(d.body_faces, bodyVertices as number)) {
    throw new Error('hello.body_faces is not a flat triangle index list');
  }
  return {
    type: 'hello',
    protocol: PROTOCOL_VERSION,
    fps: fps as number,
    vertices: vertices as number,
    body_vertices: bodyVertices as number,
    garment_faces: d.garment_faces as number[],
    body_faces: d.body_faces as number[],
  };
}

/**
 * Parse one binary frame. Returns null if the buffer is too short, the
 * counts are absurd, or the payload length does not match the header
 * exactly. The returned arrays are views into the message buffer, which
 * the websocket hands over fresh per message.
 */
export function parseFrame(buf: ArrayBuffer): MeshFrame | null {
  if (buf.byteLength < FRAME_HEADER_BYTES) return null;
  const view = new DataView(buf);
  const frameIndex = view.getUint32(0, true);
  const garmentCount = view.getUint32(4, true);
  const bodyCount = view.getUint32(8, true);
  const serverFps = view.getFloat32(12, true);
  const tickMs = view.getFloat32(16, true);
  if (garmentCount === 0 || garmentCount > MAX_VERTICES) return null;
  if (bodyCount > MAX_VERTICES) return null;
  const need = FRAME_HEADER_BYTES + 12 * (garmentCount + bodyCount);
  if (buf.byteLength !== need) return null;
  const garment = new Float32Array(buf, FRAME_HEADER_BYTES, 3 * garmentCount);
  const body = new Float32Array(buf, FRAME_HEADER_BYTES + 12 * garmentCount, 3 * bodyCount);
  return { frameIndex, serverFps, tickMs, garment, body };
}

/** Encode a steering message: planar direction plus target speed in m/s. */
export function encodeControl(moveX: number, moveZ: number, speed: number): string {
  return JSON.stringify({ type: 'control', move: [moveX, moveZ], speed });
}

/** Encode a request to restart the session from the rest pose. */
export function encodeReset(): string {
  return JSON.stringify({ type: 'reset' });
}
