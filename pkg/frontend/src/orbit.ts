/**
 * Orbit camera: a z-up spherical rig around a target point.
 *
 * State updates are pure so input handling and tests stay simple; the
 * initial pose reproduces the server's default framing (backed off along
 * -y, elevated, looking at the grid center).
 */

import type { CameraState, Vec3 } from "./protocol.js";

export interface OrbitState {
  target: Vec3;
  distance: number;
  /** Radians around +z, measured from +x toward +y. */
  azimuth: number;
  /** Radians above the horizon; clamped short of the poles. */
  polar: number;
  fov: number;
}

const POLAR_LIMIT = Math.PI / 2 - 0.035;
const MIN_DISTANCE = 1e-3;

export function orbitForScene(dims: [number, number, number]): OrbitState {
  const maxDim = Math.max(dims[0], dims[1], dims[2]);
  const back = 1.9 * maxDim;
  const lift = 0.42 * back;
  return {
    target: [dims[0] * 0.5, dims[1] * 0.5, dims[2] * 0.5],
    distance: Math.hypot(back, lift),
    azimuth: -Math.PI / 2,
    polar: Math.atan2(lift, back),
    fov: 45,
  };
}

export function orbitCamera(s: OrbitState): CameraState {
  const horizontal = s.distance * Math.cos(s.polar);
  const offset: Vec3 = [
    horizontal * Math.cos(s.azimuth),
    horizontal * Math.sin(s.azimuth),
    s.distance * Math.sin(s.polar),
  ];
  return {
    pos: [s.target[0] + offset[0], s.target[1] + offset[1], s.target[2] + offset[2]],
    target: [...s.target] as Vec3,
    up: [0, 0, 1],
    fov: s.fov,
  };
}

/** Drag rotation: dx/dy in pixels, full width sweep = one half turn. */
export function rotate(s: OrbitState, dx: number, dy: number, viewWidth = 640): OrbitState {
  const perPixel = Math.PI / viewWidth;
  const polar = Math.min(POLAR_LIMIT, Math.max(-POLAR_LIMIT, s.polar + dy * perPixel));
  return { ...s, azimuth: s.azimuth - dx * perPixel, polar };
}

/** Wheel zoom: positive deltas move away, exponential so it never flips. */
export function zoom(s: OrbitState, wheelDelta: number): OrbitState {
  const distance = Math.max(MIN_DISTANCE, s.distance * Math.exp(wheelDelta * 0.001));
  return { ...s, distance };
}

/** Pan in the view plane; dx/dy in pixels at the target's depth. */
export function pan(s: OrbitState, dx: number, dy: number, viewHeight = 360): OrbitState {
  const worldPerPixel =
    (2 * s.distance * Math.tan(((s.fov / 2) * Math.PI) / 180)) / viewHeight;
  const cam = orbitCamera(s);
  const fwd = norm3(sub3(cam.target, cam.pos));
  const right = norm3(cross3(fwd, cam.up));
  const up = cross3(right, fwd);
  const move = add3(
    scale3(right, -dx * worldPerPixel),
    scale3(up, dy * worldPerPixel),
  );
  return { ...s, target: add3(s.target, move) as Vec3 };
}

function sub3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function add3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

function scale3(a: Vec3, k: number): Vec3 {
  return [a[0] * k, a[1] * k, a[2] * k];
}

function cross3(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm3(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]);
  return n > 0 ? scale3(a, 1 / n) : [0, 0, 0];
}
