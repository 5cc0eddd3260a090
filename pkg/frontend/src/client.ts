/**
 * WebSocket session against the frame service.
 *
 * Owns reconnect with exponential backoff and fans decoded server traffic
 * out to plain callbacks. Camera updates are rate limited client side so a
 * drag gesture cannot flood the socket; the server still coalesces whatever
 * gets through.
 *
 * The socket constructor is injectable so tests (and the node e2e runner,
 * which uses the `ws` package) can run without a browser.
 */

import { FrameFilter } from "./frameFilter.js";
import {
  cameraMessage,
  decodeFrame,
  loadSceneMessage,
  paramsMessage,
  parseServerMessage,
  requestFrameMessage,
  type CameraState,
  type ErrorMessage,
  type FrameMessage,
  type SceneMessage,
  type StatsMessage,
} from "./protocol.js";
import { Throttle } from "./throttle.js";

export interface WebSocketLike {
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface ViewerClientOptions {
  webSocketFactory?: WebSocketFactory;
  /** Minimum spacing between camera messages, default 60 Hz. */
  cameraIntervalMs?: number;
  reconnect?: boolean;
  now?: () => number;
}

const BACKOFF_START_MS = 500;
const BACKOFF_CAP_MS = 5000;

export class ViewerClient {
  onStats: ((msg: StatsMessage) => void) | null = null;
  onScene: ((msg: SceneMessage) => void) | null = null;
  onError: ((msg: ErrorMessage) => void) | null = null;
  onFrame: ((frame: FrameMessage) => Promise<void> | void) | null = null;
  onStatus: ((status: ConnectionStatus) => void) | null = null;

  private readonly url: string;
  private readonly makeSocket: WebSocketFactory;
  private readonly reconnect: boolean;
  private readonly cameraThrottle: Throttle;
  private readonly filter: FrameFilter;
  private socket: WebSocketLike | null = null;
  private backoffMs = BACKOFF_START_MS;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;
  private openNow = false;

  constructor(url: string, opts: ViewerClientOptions = {}) {
    this.url = url;
    this.makeSocket =
      opts.webSocketFactory ??
      ((u) => new (globalThis as any).WebSocket(u) as WebSocketLike);
    this.reconnect = opts.reconnect ?? true;
    this.cameraThrottle = new Throttle(
      opts.cameraIntervalMs ?? 1000 / 60,
      (payload) => this.sendRaw(payload),
      opts.now,
    );
    this.filter = new FrameFilter(async (frame) => {
      if (this.onFrame) await this.onFrame(frame);
    });
  }

  get isOpen(): boolean {
    return this.openNow;
  }

  connect(): void {
    if (this.closed || this.socket) return;
    this.onStatus?.("connecting");
    const ws = this.makeSocket(this.url);
    this.socket = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.openNow = true;
      this.backoffMs = BACKOFF_START_MS;
      this.onStatus?.("open");
    };
    ws.onmessage = (ev) => this.dispatch(ev.data);
    ws.onerror = () => {
      /* onclose always follows; nothing extra to do */
    };
    ws.onclose = () => {
      if (this.socket !== ws) return;
      this.socket = null;
      this.openNow = false;
      this.cameraThrottle.cancel();
      this.onStatus?.("closed");
      if (this.reconnect && !this.closed) this.scheduleRetry();
    };
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.cameraThrottle.cancel();
    const ws = this.socket;
    this.socket = null;
    this.openNow = false;
    if (ws) ws.close();
    this.onStatus?.("closed");
  }

  loadScene(ref: { name?: string; path?: string }): void {
    this.sendRaw(loadSceneMessage(ref));
  }

  requestFrame(): void {
    this.sendRaw(requestFrameMessage());
  }

  sendParams(fields: Record<string, unknown>): void {
    this.sendRaw(paramsMessage(fields));
  }

  sendCamera(camera: CameraState): void {
    this.cameraThrottle.push(cameraMessage(camera));
  }

  private sendRaw(payload: string): void {
    if (this.socket && this.openNow) this.socket.send(payload);
  }

  private scheduleRetry(): void {
    const wait = this.backoffMs;
    this.backoffMs = Math.min(BACKOFF_CAP_MS, this.backoffMs * 2);
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      this.connect();
    }, wait);
  }

  private dispatch(data: unknown): void {
    if (typeof data === "string") {
      let msg;
      try {
        msg = parseServerMessage(data);
      } catch (err) {
        console.warn("dropping unreadable server message:", err);
        return;
      }
      if (msg.type === "stats") this.onStats?.(msg);
      else if (msg.type === "scene") this.onScene?.(msg);
      else this.onError?.(msg);
      return;
    }
    const buffer = toArrayBuffer(data);
    if (!buffer) {
      console.warn("dropping binary message of unknown shape");
      return;
    }
    let frame: FrameMessage;
    try {
      frame = decodeFrame(buffer);
    } catch (err) {
      console.warn("dropping undecodable frame:", err);
      return;
    }
    this.filter.push(frame);
  }
}

function toArrayBuffer(data: unknown): ArrayBuffer | null {
  if (data instanceof ArrayBuffer) return data;
  // node's `ws` hands Buffer views even with binaryType arraybuffer set
  if (ArrayBuffer.isView(data)) {
    const view = data as Uint8Array;
    return view.buffer.slice(view.byteOffset, view.byteOffset + view.byteLength) as ArrayBuffer;
  }
  return null;
}
