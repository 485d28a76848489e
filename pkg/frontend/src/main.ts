/**
 * Viewer entry point: wires the session, steering, scene and HUD into a
 * render loop. The service address comes from the ?ws= query parameter
 * and defaults to the local serve command.
 */

import * as THREE from 'three';
import { ViewerSession } from './session';
import { SteeringState, ControlSender, bindSteering } from './controls';
import { MeshScene } from './scene';
import { Hud } from './hud';

const DEFAULT_URL = 'ws://127.0.0.1:8765';

function serviceUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('ws');
  return fromQuery || DEFAULT_URL;
}

function main(): void {
  const renderer = new THREE.WebGLRenderer({ antialias: true });
  renderer.setPixelRatio(window.devicePixelRatio);
  renderer.setSize(window.innerWidth, window.innerHeight);
  document.body.appendChild(renderer.domElement);

  const scene = new MeshScene();
  scene.setAspect(window.innerWidth / window.innerHeight);
  window.addEventListener('resize', () => {
    renderer.setSize(window.innerWidth, window.innerHeight);
    scene.setAspect(window.innerWidth / window.innerHeight);
  });

  const session = new ViewerSession(serviceUrl());
  session.onhello = (hello) => scene.allocate(hello);
  session.connect();

  const steering = new SteeringState();
  const unbind = bindSteering(window, steering);
  window.addEventListener('beforeunload', () => {
    unbind();
    session.dispose();
  });
  window.addEventListener('keydown', (ev) => {
    if (ev.code === 'KeyR') session.sendReset();
  });

  // Drag to orbit; the wheel is reserved for the speed target.
  let dragging = false;
  renderer.domElement.addEventListener('pointerdown', (ev) => {
    dragging = true;
    renderer.domElement.setPointerCapture(ev.pointerId);
  });
  renderer.domElement.addEventListener('pointerup', () => {
    dragging = false;
  });
  renderer.domElement.addEventListener('pointermove', (ev) => {
    if (!dragging) return;
    scene.orbitBy(-ev.movementX * 0.005, ev.movementY * 0.004);
  });

  const sender = new ControlSender((intent) =>
    session.sendControl(intent.moveX, intent.moveZ, intent.speed),
  );

  const hud = new Hud(document.body);
  let lastTime = performance.now();
  let lastDrawnFrame = -1;
  let clientFps = 0;

  function tick(now: number): void {
    const dt = Math.min(0.1, (now - lastTime) / 1000);
    lastTime = now;
    if (dt > 0) clientFps += (1 / dt - clientFps) * 0.08;

    const frame = session.latestFrame();
    if (frame && frame.frameIndex !== lastDrawnFrame) {
      scene.updateFrame(frame);
      lastDrawnFrame = frame.frameIndex;
    }
    const forward = scene.updateCamera(dt);
    sender.offer(steering.update(dt, forward), now);

    renderer.render(scene.scene, scene.camera);
    hud.update({
      status: session.status,
      serverFps: frame ? frame.serverFps : 0,
      clientFps,
      frameIndex: frame ? frame.frameIndex : 0,
      framesDropped: session.stats().framesDropped,
      reconnects: session.stats().reconnects,
      targetSpeed: steering.currentTargetSpeed(),
      lastError: session.lastError,
    });
    requestAnimationFrame(tick);
  }
  requestAnimationFrame(tick);
}

main();
