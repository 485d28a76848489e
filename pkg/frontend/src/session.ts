/**
 * Connection lifecycle and frame bookkeeping for the viewer.
 *
 * The session owns the websocket: it parses the hello, validates every
 * binary frame against the announced topology, and keeps only the latest
 * complete frame for the render loop (latest wins, partial data never
 * escapes). Connection drops trigger reconnects with exponential backoff
 * so the page recovers without a reload. Sockets and timers are injected
 * so tests can drive the whole state machine synchronously.
 */

import {
  HelloMessage,
  MeshFrame,
  encodeControl,
  encodeReset,
  parseFrame,
  parseHello,
} from './protocol';

export type ConnectionStatus = 'connecting' | 'live' | 'reconnecting' | 'closed';

/** The slice of the WebSocket API the session uses; tests inject fakes. */
export interface SocketLike {
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionOptions {
  socketFactory?: SocketFactory;
  /** First retry delay; doubles per failure up to backoffMaxMs. */
  backoffMs?: number;
  backoffMaxMs?: number;
  schedule?: (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;
  cancel?: (handle: ReturnType<typeof setTimeout>) => void;
}

export interface SessionCounters {
  framesReceived: number;
  framesDropped: number;
  reconnects: number;
}

const defaultFactory: SocketFactory = (url) => new WebSocket(url) as unknown as SocketLike;

export class ViewerSession {
  readonly url: string;

  status: ConnectionStatus = 'closed';
  topology: HelloMessage | null = null;
  lastError = '';

  private socket: SocketLike | null = null;
  private latest: MeshFrame | null = null;
  private counters: SessionCounters = { framesReceived: 0, framesDropped: 0, reconnects: 0 };
  private retryDelay: number;
  private retryHandle: ReturnType<typeof setTimeout> | null = null;
  private disposed = false;
  private everConnected = false;

  private readonly factory: SocketFactory;
  private readonly backoffMs: number;
  private readonly backoffMaxMs: number;
  private readonly schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;
  private readonly cancel: (handle: ReturnType<typeof setTimeout>) => void;

  /** Called whenever the topology arrives, so the scene can (re)allocate. */
  onhello: ((hello: HelloMessage) => void) | null = null;
  /** Called on status changes, for the HUD. */
  onstatus: ((status: ConnectionStatus) => void) | null = null;

  constructor(url: string, opts: SessionOptions = {}) {
    this.url = url;
    this.factory = opts.socketFactory ?? defaultFactory;
    this.backoffMs = opts.backoffMs ?? 500;
    this.backoffMaxMs = opts.backoffMaxMs ?? 8000;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancel = opts.cancel ?? ((h) => clearTimeout(h));
    this.retryDelay = this.backoffMs;
  }

  connect(): void {
    if (this.disposed) return;
    this.setStatus(this.everConnected ? 'reconnecting' : 'connecting');
    let sock: SocketLike;
    try {
      sock = this.factory(this.url);
    } catch (err) {
      this.lastError = String(err);
      this.scheduleRetry();
      return;
    }
    sock.binaryType = 'arraybuffer';
    this.socket = sock;
    sock.onopen = () => {
      // Live only once the hello lands; the open socket alone renders nothing.
    };
    sock.onmessage = (ev) => this.handleMessage(ev.data);
    sock.onerror = () => {
      this.lastError = 'socket error';
    };
    sock.onclose = () => {
      if (this.socket !== sock) return;
      this.socket = null;
      this.scheduleRetry();
    };
  }

  dispose(): void {
    this.disposed = true;
    if (this.retryHandle !== null) {
      this.cancel(this.retryHandle);
      this.retryHandle = null;
    }
    const sock = this.socket;
    this.socket = null;
    if (sock) sock.close();
    this.setStatus('closed');
  }

  /** Latest complete frame, or null before the first one arrives. */
  latestFrame(): MeshFrame | null {
    return this.latest;
  }

  stats(): SessionCounters {
    return { ...this.counters };
  }

  sendControl(moveX: number, moveZ: number, speed: number): boolean {
    if (this.status !== 'live' || !this.socket) return false;
    this.socket.send(encodeControl(moveX, moveZ, speed));
    return true;
  }

  sendReset(): boolean {
    if (this.status !== 'live' || !this.socket) return false;
    this.socket.send(encodeReset());
    return true;
  }

  private handleMessage(data: unknown): void {
    if (typeof data === 'string') {
      this.handleText(data);
      return;
    }
    if (data instanceof ArrayBuffer) {
      this.handleFrame(data);
      return;
    }
    this.counters.framesDropped += 1;
  }

  private handleText(text: string): void {
    if (this.status !== 'live') {
      try {
        const hello = parseHello(text);
        this.topology = hello;
        this.latest = null;
        if (this.everConnected) this.counters.reconnects += 1;
        this.everConnected = true;
        this.retryDelay = this.backoffMs;
        this.setStatus('live');
        this.onhello?.(hello);
      } catch (err) {
        // A broken hello means the endpoint is not ours; drop the socket
        // and let backoff retry.
        this.lastError = String(err instanceof Error ? err.message : err);
        this.socket?.close();
      }
      return;
    }
    // Post-hello text is a server-side notice, e.g. a rejected control.
    try {
      const doc = JSON.parse(text) as { type?: string; message?: string };
      if (doc.type === 'error' && typeof doc.message === 'string') {
        this.lastError = doc.message;
      }
    } catch {
      this.lastError = 'unparseable server message';
    }
  }

  private handleFrame(buf: ArrayBuffer): void {
    const frame = parseFrame(buf);
    if (frame === null || this.topology === null) {
      this.counters.framesDropped += 1;
      return;
    }
    // Topology is fixed per session; a count mismatch is a corrupt frame.
    if (
      frame.garment.length !== 3 * this.topology.vertices ||
      frame.body.length !== 3 * this.topology.body_vertices
    ) {
      this.counters.framesDropped += 1;
      return;
    }
    this.latest = frame;
    this.counters.framesReceived += 1;
  }

  private scheduleRetry(): void {
    if (this.disposed) return;
    this.setStatus('reconnecting');
    if (this.retryHandle !== null) return;
    const delay = this.retryDelay;
    this.retryDelay = Math.min(this.retryDelay * 2, this.backoffMaxMs);
    this.retryHandle = this.schedule(() => {
      this.retryHandle = null;
      this.connect();
    }, delay);
  }

  private setStatus(status: ConnectionStatus): void {
    if (this.status === status) return;
    this.status = status;
    this.onstatus?.(status);
  }
}
