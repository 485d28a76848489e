/**
 * Three.js scene for the streamed meshes.
 *
 * Geometry is allocated once per hello and every frame rewrites the same
 * position buffers in place; topology never changes while connected. The
 * camera orbits a target that follows the body root, so the character
 * stays framed while it walks. Rendering itself (WebGLRenderer, canvas)
 * lives in main.ts; everything here also runs headless, which is what the
 * tests do.
 */

import * as THREE from 'three';
import { HelloMessage, MeshFrame } from './protocol';

const GARMENT_COLOR = 0xb03a48;
const BODY_COLOR = 0x8a9bae;
const FOLLOW_RATE = 5.0;

export class MeshScene {
  readonly scene: THREE.Scene;
  readonly camera: THREE.PerspectiveCamera;

  garmentMesh: THREE.Mesh | null = null;
  bodyMesh: THREE.Mesh | null = null;

  private garmentGeo: THREE.BufferGeometry | null = null;
  private bodyGeo: THREE.BufferGeometry | null = null;

  private target = new THREE.Vector3(0, 0.9, 0);
  private yaw = Math.PI;
  private pitch = 0.25;
  private distance = 3.2;

  constructor() {
    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x1c2026);
    this.camera = new THREE.PerspectiveCamera(45, 16 / 9, 0.05, 100);

    const hemi = new THREE.HemisphereLight(0xe8eef5, 0x30343a, 0.9);
    const sun = new THREE.DirectionalLight(0xffffff, 1.4);
    sun.position.set(2.5, 4.0, 1.5);
    this.scene.add(hemi, sun);
    this.scene.add(new THREE.GridHelper(10, 20, 0x3a414b, 0x2a2f36));

    this.updateCamera(0);
  }

  /** (Re)build both meshes from a fresh hello. */
  allocate(hello: HelloMessage): void {
    this.clearMeshes();
    this.garmentGeo = makeGeometry(hello.vertices, hello.garment_faces);
    this.garmentMesh = new THREE.Mesh(
      this.garmentGeo,
      new THREE.MeshPhongMaterial({ color: GARMENT_COLOR, side: THREE.DoubleSide, shininess: 12 }),
    );
    this.garmentMesh.frustumCulled = false;
    this.scene.add(this.garmentMesh);

    if (hello.body_vertices > 0) {
      this.bodyGeo = makeGeometry(hello.body_vertices, hello.body_faces);
      this.bodyMesh = new THREE.Mesh(
        this.bodyGeo,
        new THREE.MeshPhongMaterial({ color: BODY_COLOR, shininess: 30 }),
      );
      this.bodyMesh.frustumCulled = false;
      this.scene.add(this.bodyMesh);
    }
  }

  /** Copy a complete frame into the existing buffers. */
  updateFrame(frame: MeshFrame): void {
    if (this.garmentGeo) writePositions(this.garmentGeo, frame.garment);
    if (this.bodyGeo && frame.body.length > 0) writePositions(this.bodyGeo, frame.body);
  }

  /** Mouse drag orbits the camera around the followed target. */
  orbitBy(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    this.pitch = Math.min(1.35, Math.max(-0.3, this.pitch + dPitch));
  }

  zoomBy(factor: number): void {
    this.distance = Math.min(12, Math.max(0.8, this.distance * factor));
  }

  /**
   * Ease the follow target toward the body root and re-place the camera.
   * Returns the camera's ground plane forward direction for steering.
   */
  updateCamera(dtSeconds: number): [number, number] {
    const root = this.currentRoot();
    if (root) {
      const a = 1 - Math.exp(-FOLLOW_RATE * Math.max(0, dtSeconds));
      this.target.lerp(root, a);
    }
    const cp = Math.cos(this.pitch);
    this.camera.position.set(
      this.target.x + this.distance * cp * Math.sin(this.yaw),
      this.target.y + this.distance * Math.sin(this.pitch),
      this.target.z + this.distance * cp * Math.cos(this.yaw),
    );
    this.camera.lookAt(this.target);
    return [-Math.sin(this.yaw), -Math.cos(this.yaw)];
  }

  setAspect(aspect: number): void {
    this.camera.aspect = aspect;
    this.camera.updateProjectionMatrix();
  }

  followTarget(): THREE.Vector3 {
    return this.target.clone();
  }

  private currentRoot(): THREE.Vector3 | null {
    const geo = this.bodyGeo ?? this.garmentGeo;
    if (!geo) return null;
    const pos = geo.getAttribute('position') as THREE.BufferAttribute;
    const arr = pos.array as Float32Array;
    if (arr.length === 0) return null;
    let x = 0;
    let y = 0;
    let z = 0;
    const n = arr.length / 3;
    for (let i = 0; i < arr.length; i += 3) {
      x += arr[i] ?? 0;
      y += arr[i + 1] ?? 0;
      z += arr[i + 2] ?? 0;
    }
    return new THREE.Vector3(x / n, y / n, z / n);
  }

  private clearMeshes(): void {
    for (const mesh of [this.garmentMesh, this.bodyMesh]) {
      if (!mesh) continue;
      this.scene.remove(mesh);
      mesh.geometry.dispose();
      (mesh.material as THREE.Material).dispose();
    }
    this.garmentMesh = null;
    this.bodyMesh = null;
    this.garmentGeo = null;
    this.bodyGeo = null;
  }
}

function makeGeometry(vertexCount: number, flatFaces: number[]): THREE.BufferGeometry {
  const geo = new THREE.BufferGeometry();
  const positions = new Float32Array(3 * vertexCount);
  geo.setAttribute('position', new THREE.BufferAttribute(positions, 3));
  geo.setIndex(flatFaces);
  geo.computeVertexNormals();
  return geo;
}

function writePositions(geo: THREE.BufferGeometry, data: Float32Array): void {
  const attr = geo.getAttribute('position') as THREE.BufferAttribute;
  (attr.array as Float32Array).set(data);
  attr.needsUpdate = true;
  geo.computeVertexNormals();
  geo.computeBoundingSphere();
}
