/**
 * Wire protocol shared with the frame service.
 *
 * Text messages are JSON both ways; rendered frames arrive as binary:
 * a 9-byte little-endian header (u32 frame id, u16 width, u16 height,
 * u8 format) followed by the pixel payload. Format 0 is raw RGBA8 in
 * row-major order starting at the top row, format 1 is a PNG file.
 */

export const FORMAT_RAW = 0;
export const FORMAT_PNG = 1;
export const FRAME_HEADER_BYTES = 9;

export interface FrameMessage {
  frameId: number;
  width: number;
  height: number;
  format: number;
  payload: Uint8Array;
}

export interface StatsMessage {
  type: "stats";
  frameId: number;
  renderMs: number;
  voxelSteps: number;
  tests: number;
  quality: "moving" | "still";
}

export interface SceneMessage {
  type: "scene";
  scene: string;
  dims: [number, number, number];
  bins: number;
  segments: number;
  memoryBytes: number;
}

export interface ErrorMessage {
  type: "error";
  message: string;
  frameId?: number;
}

export type ServerMessage = StatsMessage | SceneMessage | ErrorMessage;

export function decodeFrame(buffer: ArrayBuffer): FrameMessage {
  if (buffer.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(
      `frame message of ${buffer.byteLength} bytes is shorter than its header`,
    );
  }
  const view = new DataView(buffer);
  const frame: FrameMessage = {
    frameId: view.getUint32(0, true),
    width: view.getUint16(4, true),
    height: view.getUint16(6, true),
    format: view.getUint8(8),
    payload: new Uint8Array(buffer, FRAME_HEADER_BYTES),
  };
  if (frame.format === FORMAT_RAW) {
    const expected = frame.width * frame.height * 4;
    if (frame.payload.byteLength !== expected) {
      throw new Error(
        `raw frame payload is ${frame.payload.byteLength} bytes, ` +
          `expected ${expected} for ${frame.width}x${frame.height}`,
      );
    }
  }
  return frame;
}

export function parseServerMessage(text: string): ServerMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch {
    throw new Error("server message is not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null) {
    throw new Error("server message is not a JSON object");
  }
  const msg = parsed as { type?: unknown };
  if (msg.type === "stats" || msg.type === "scene" || msg.type === "error") {
    return parsed as ServerMessage;
  }
  throw new Error(`unknown server message type ${String(msg.type)}`);
}

export type Vec3 = [number, number, number];

export interface CameraState {
  pos: Vec3;
  target: Vec3;
  up: Vec3;
  fov: number;
}

export function cameraMessage(camera: CameraState): string {
  return JSON.stringify({
    type: "camera",
    pos: camera.pos,
    target: camera.target,
    up: camera.up,
    fov: camera.fov,
  });
}

export function paramsMessage(fields: Record<string, unknown>): string {
  return JSON.stringify({ type: "params", ...fields });
}

export function loadSceneMessage(ref: { name?: string; path?: string }): string {
  if (ref.name !== undefined) {
    return JSON.stringify({ type: "loadScene", name: ref.name });
  }
  if (ref.path !== undefined) {
    return JSON.stringify({ type: "loadScene", path: ref.path });
  }
  throw new Error("loadScene needs a name or a path");
}

export function requestFrameMessage(): string {
  return JSON.stringify({ type: "requestFrame" });
}
