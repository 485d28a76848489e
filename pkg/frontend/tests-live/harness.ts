/**
 * Test rig for a real service process. Fixtures are produced through the
 * public CLI (gen-data, train) and the server is the installed `unic serve`
 * command, so everything here exercises exactly what a user would deploy.
 * Simulation is slow, so fixtures cache under UNIC_LIVE_DIR across runs.
 */

import { ChildProcess, spawn, spawnSync } from 'node:child_process';
import { existsSync, mkdirSync } from 'node:fs';
import { join } from 'node:path';
import WebSocket from 'ws';

import type { SocketFactory, SocketLike } from '../src/session';

export const UNIC = process.env.UNIC_BIN ?? 'unic';
export const FIXDIR = process.env.UNIC_LIVE_DIR ?? '/tmp/unic_live';

function cli(args: string[]): void {
  const res = spawnSync(UNIC, args, { stdio: 'inherit', timeout: 900_000 });
  if (res.error) throw res.error;
  if (res.status !== 0) {
    throw new Error(`${UNIC} ${args.join(' ')} exited with status ${res.status}`);
  }
}

function build(path: string, args: string[]): string {
  if (!existsSync(path)) cli(args);
  return path;
}

export interface Fixture {
  data: string;
  db: string[];
  model: string;
}

/** Small skirt, idle plus walk clips, lightly trained model. */
export function interactiveFixture(): Fixture {
  mkdirSync(FIXDIR, { recursive: true });
  const idle = build(join(FIXDIR, 'idle.unicdata'), [
    'gen-data', '--kind', 'idle', '--duration', '2.0', '--garment', 'skirt',
    '--seed', '0', '--out', join(FIXDIR, 'idle.unicdata'),
  ]);
  const walk = build(join(FIXDIR, 'walk.unicdata'), [
    'gen-data', '--kind', 'walk', '--duration', '2.5', '--garment', 'skirt',
    '--seed', '5', '--out', join(FIXDIR, 'walk.unicdata'),
  ]);
  const model = build(join(FIXDIR, 'small.unicckpt'), [
    'train', '--data', idle, walk, '--out', join(FIXDIR, 'small.unicckpt'),
    '--profile', 'desk', '--epochs', '5', '--budget', '4000', '--workers', '1',
  ]);
  return { data: idle, db: [walk], model };
}

/** Dense 3K-vertex skirt on a short idle clip, for client-cost checks. */
export function denseFixture(): Fixture {
  mkdirSync(FIXDIR, { recursive: true });
  const idle = build(join(FIXDIR, 'idle3k.unicdata'), [
    'gen-data', '--kind', 'idle', '--duration', '2.0', '--garment', 'skirt3k',
    '--seed', '0', '--out', join(FIXDIR, 'idle3k.unicdata'),
  ]);
  const model = build(join(FIXDIR, 'dense.unicckpt'), [
    'train', '--data', idle, '--out', join(FIXDIR, 'dense.unicckpt'),
    '--profile', 'desk', '--epochs', '1', '--budget', '1000', '--workers', '1',
  ]);
  return { data: idle, db: [], model };
}

export class LiveServer {
  readonly url: string;
  readonly port: number;
  stderr = '';

  private constructor(private proc: ChildProcess, port: number) {
    this.port = port;
    this.url = `ws://127.0.0.1:${port}`;
    this.proc.stderr?.setEncoding('utf8');
    this.proc.stderr?.on('data', (chunk: string) => {
      this.stderr += chunk;
    });
  }

  /** Spawn `unic serve`, retrying on occupied ports, resolve when ready. */
  static async start(fix: Fixture, interactive: boolean): Promise<LiveServer> {
    let lastErr = '';
    for (let attempt = 0; attempt < 4; attempt += 1) {
      const port = 18000 + Math.floor(Math.random() * 20000);
      const args = ['serve', '--model', fix.model, '--data', fix.data,
                    '--port', String(port), '--workers', '1'];
      if (fix.db.length > 0) args.push('--db', ...fix.db);
      if (interactive) args.push('--interactive');
      const proc = spawn(UNIC, args, { stdio: ['ignore', 'pipe', 'pipe'] });
      const ready = await new Promise<boolean>((resolve) => {
        let out = '';
        let err = '';
        const timer = setTimeout(() => resolve(false), 120_000);
        proc.stdout?.setEncoding('utf8');
        proc.stdout?.on('data', (chunk: string) => {
          out += chunk;
          if (out.includes(`serving`) && out.includes(`ws://`)) {
            clearTimeout(timer);
            resolve(true);
          }
        });
        proc.stderr?.setEncoding('utf8');
        proc.stderr?.on('data', (chunk: string) => {
          err += chunk;
        });
        proc.once('exit', () => {
          clearTimeout(timer);
          lastErr = err;
          resolve(false);
        });
      });
      if (ready) return new LiveServer(proc, port);
      proc.kill('SIGKILL');
    }
    throw new Error(`could not start ${UNIC} serve: ${lastErr}`);
  }

  /** Lines the engine logged while recovering from bad numerics. */
  recoveryLogLines(): string[] {
    return this.stderr.split('\n').filter((l) => l.includes('restoring last valid'));
  }

  async stop(): Promise<void> {
    if (this.proc.exitCode !== null) return;
    this.proc.kill('SIGTERM');
    await new Promise<void>((resolve) => {
      const timer = setTimeout(() => {
        this.proc.kill('SIGKILL');
        resolve();
      }, 5_000);
      this.proc.once('exit', () => {
        clearTimeout(timer);
        resolve();
      });
    });
  }
}

/**
 * Real websocket for ViewerSession, with a tap that sees every message
 * and its arrival time before the session does.
 */
export function nodeFactory(
  tap?: (data: unknown, at: number) => void,
): SocketFactory {
  return (url: string): SocketLike => {
    const sock = new WebSocket(url) as unknown as SocketLike & {
      onmessage: ((ev: { data: unknown }) => void) | null;
    };
    if (!tap) return sock;
    return new Proxy(sock, {
      set(target, prop, value) {
        if (prop === 'onmessage' && typeof value === 'function') {
          const inner = value as (ev: { data: unknown }) => void;
          target.onmessage = (ev) => {
            tap(ev.data, performance.now());
            inner(ev);
          };
          return true;
        }
        Reflect.set(target, prop, value);
        return true;
      },
    });
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Poll until check() passes; throws after the deadline with the label. */
export async function waitFor(
  check: () => boolean,
  ms: number,
  label: string,
): Promise<void> {
  const deadline = performance.now() + ms;
  while (performance.now() < deadline) {
    if (check()) return;
    await sleep(10);
  }
  throw new Error(`timed out after ${ms} ms waiting for ${label}`);
}
