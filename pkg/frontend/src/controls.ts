/**
 * Keyboard and scroll steering.
 *
 * WASD or arrow keys pick a direction in camera space, the scroll wheel
 * nudges the target speed, and the combined intent goes out as a JSON
 * control message at most 30 times a second, latest wins. With no keys
 * held the commanded speed decays to zero so the character coasts to a
 * stop instead of freezing mid-stride.
 */

export interface SteerIntent {
  moveX: number;
  moveZ: number;
  speed: number;
}

export const SEND_INTERVAL_MS = 1000 / 30;

const SPEED_MIN = 0;
const SPEED_MAX = 5;
const SPEED_STEP = 0.25;
/** Seconds for the commanded speed to fall by ~63% once keys are released. */
const DECAY_TAU_S = 0.35;
const SPEED_EPS = 0.02;

const KEY_AXES: Record<string, [number, number]> = {
  KeyW: [0, 1],
  ArrowUp: [0, 1],
  KeyS: [0, -1],
  ArrowDown: [0, -1],
  KeyA: [-1, 0],
  ArrowLeft: [-1, 0],
  KeyD: [1, 0],
  ArrowRight: [1, 0],
};

export class SteeringState {
  private pressed = new Set<string>();
  private targetSpeed = 1.5;
  private speed = 0;
  private lastDir: [number, number] = [0, 1];

  /** Returns true if the key participates in steering (caller preventDefaults). */
  keyDown(code: string): boolean {
    if (!(code in KEY_AXES)) return false;
    this.pressed.add(code);
    return true;
  }

  keyUp(code: string): void {
    this.pressed.delete(code);
  }

  /** Scroll wheel: up (negative deltaY) raises the target speed. */
  wheel(deltaY: number): void {
    const step = deltaY < 0 ? SPEED_STEP : -SPEED_STEP;
    this.targetSpeed = Math.min(SPEED_MAX, Math.max(SPEED_MIN, this.targetSpeed + step));
  }

  anyKeyHeld(): boolean {
    return this.pressed.size > 0;
  }

  currentTargetSpeed(): number {
    return this.targetSpeed;
  }

  /**
   * Advance the steering model by dt seconds and map the key vector from
   * camera space to world space. cameraForward is the camera's ground
   * plane look direction (x, z), not necessarily normalized.
   */
  update(dtSeconds: number, cameraForward: [number, number]): SteerIntent {
    let kx = 0;
    let kz = 0;
    for (const code of this.pressed) {
      const axis = KEY_AXES[code];
      if (!axis) continue;
      kx += axis[0];
      kz += axis[1];
    }
    const mag = Math.hypot(kx, kz);
    if (mag > 0) {
      kx /= mag;
      kz /= mag;
      const [dirX, dirZ] = this.toWorld(kx, kz, cameraForward);
      this.lastDir = [dirX, dirZ];
      this.speed = this.targetSpeed;
    } else {
      // Coast: keep the last heading, bleed the speed off exponentially.
      this.speed *= Math.exp(-dtSeconds / DECAY_TAU_S);
      if (this.speed < SPEED_EPS) this.speed = 0;
    }
    return { moveX: this.lastDir[0], moveZ: this.lastDir[1], speed: this.speed };
  }

  private toWorld(kx: number, kz: number, cameraForward: [number, number]): [number, number] {
    let [fx, fz] = cameraForward;
    const fmag = Math.hypot(fx, fz);
    if (fmag < 1e-6) {
      fx = 0;
      fz = 1;
    } else {
      fx /= fmag;
      fz /= fmag;
    }
    // Right-handed, y up: right = forward x up projected to the ground.
    const rx = -fz;
    const rz = fx;
    return [kx * rx + kz * fx, kx * rz + kz * fz];
  }
}

/**
 * Rate limiter for outgoing controls: remembers the newest intent and
 * forwards it at most once per SEND_INTERVAL_MS. Identical consecutive
 * intents are skipped once acknowledged by a successful send, except that
 * a moving intent repeats as a keepalive.
 */
export class ControlSender {
  private lastSentAt = -Infinity;
  private lastSent: SteerIntent | null = null;

  constructor(private readonly send: (intent: SteerIntent) => boolean) {}

  /** Offer the newest intent; nowMs is the caller's clock. */
  offer(intent: SteerIntent, nowMs: number): boolean {
    if (nowMs - this.lastSentAt < SEND_INTERVAL_MS) return false;
    if (this.lastSent && intent.speed === 0 && this.lastSent.speed === 0) {
      // Fully stopped and already said so; stay quiet until input returns.
      return false;
    }
    if (!this.send(intent)) return false;
    this.lastSentAt = nowMs;
    this.lastSent = { ...intent };
    return true;
  }
}

/**
 * Hook the DOM events up to a SteeringState. Returns an unsubscribe
 * function. Kept separate from the state machine so tests can drive the
 * state directly.
 */
export function bindSteering(target: EventTarget, state: SteeringState): () => void {
  const onKeyDown = (ev: Event) => {
    const ke = ev as KeyboardEvent;
    if (state.keyDown(ke.code)) ke.preventDefault();
  };
  const onKeyUp = (ev: Event) => {
    state.keyUp((ev as KeyboardEvent).code);
  };
  const onWheel = (ev: Event) => {
    const we = ev as WheelEvent;
    state.wheel(we.deltaY);
    we.preventDefault();
  };
  target.addEventListener('keydown', onKeyDown);
  target.addEventListener('keyup', onKeyUp);
  target.addEventListener('wheel', onWheel, { passive: false });
  return () => {
    target.removeEventListener('keydown', onKeyDown);
    target.removeEventListener('keyup', onKeyUp);
    target.removeEventListener('wheel', onWheel);
  };
}
