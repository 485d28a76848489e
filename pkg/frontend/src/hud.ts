/**
 * Heads-up overlay: connection status, server and client frame rates,
 * drop counters, and the current speed target. Formatting is split from
 * the DOM write so it can be unit tested.
 */

import { ConnectionStatus } from './session';

export interface HudState {
  status: ConnectionStatus;
  serverFps: number;
  clientFps: number;
  frameIndex: number;
  framesDropped: number;
  reconnects: number;
  targetSpeed: number;
  lastError: string;
}

export function formatHud(s: HudState): string {
  const lines = [
    `status   ${s.status}`,
    `server   ${s.serverFps.toFixed(1)} fps  (frame ${s.frameIndex})`,
    `client   ${s.clientFps.toFixed(1)} fps`,
    `speed    ${s.targetSpeed.toFixed(2)} m/s target (scroll to change)`,
    `steer    WASD / arrows, drag to orbit, R to reset`,
  ];
  if (s.framesDropped > 0) lines.push(`dropped  ${s.framesDropped} bad frame(s)`);
  if (s.reconnects > 0) lines.push(`recovery ${s.reconnects} reconnect(s)`);
  if (s.lastError) lines.push(`note     ${s.lastError}`);
  return lines.join('\n');
}

export class Hud {
  private readonly el: HTMLElement;

  constructor(parent: HTMLElement) {
    this.el = document.createElement('pre');
    this.el.style.cssText = [
      'position:fixed',
      'top:10px',
      'left:12px',
      'margin:0',
      'padding:8px 10px',
      'background:rgba(18,20,24,0.72)',
      'color:#dfe6ee',
      'font:12px/1.45 ui-monospace,monospace',
      'border-radius:6px',
      'pointer-events:none',
      'white-space:pre',
    ].join(';');
    parent.appendChild(this.el);
  }

  update(state: HudState): void {
    this.el.textContent = formatHud(state);
  }
}
