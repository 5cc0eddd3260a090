import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ViewerClient, type WebSocketLike } from "../src/client";
import { FORMAT_RAW, FRAME_HEADER_BYTES } from "../src/protocol";

class FakeWebSocket implements WebSocketLike {
  binaryType = "blob";
  onopen: ((ev?: unknown) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  sent: string[] = [];
  closedByClient = false;

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closedByClient = true;
    this.onclose?.();
  }
  open(): void {
    this.onopen?.();
  }
  text(payload: string): void {
    this.onmessage?.({ data: payload });
  }
  binary(buffer: ArrayBuffer): void {
    this.onmessage?.({ data: buffer });
  }
}

function rawFrame(frameId: number, width = 2, height = 2): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES + width * height * 4);
  const view = new DataView(buf);
  view.setUint32(0, frameId, true);
  view.setUint16(4, width, true);
  view.setUint16(6, height, true);
  view.setUint8(8, FORMAT_RAW);
  return buf;
}

function makeClient(opts: { cameraIntervalMs?: number } = {}) {
  const sockets: FakeWebSocket[] = [];
  const client = new ViewerClient("ws://test/", {
    webSocketFactory: () => {
      const ws = new FakeWebSocket();
      sockets.push(ws);
      return ws;
    },
    cameraIntervalMs: opts.cameraIntervalMs ?? 50,
  });
  return { client, sockets };
}

const tick = () => new Promise<void>((r) => setTimeout(r, 0));

describe("ViewerClient", () => {
  beforeEach(() => {
    vi.spyOn(console, "warn").mockImplementation(() => undefined);
  });
  afterEach(() => {
    vi.restoreAllMocks();
    vi.useRealTimers();
  });

  it("requests arraybuffer binaries and reports status transitions", () => {
    const { client, sockets } = makeClient();
    const statuses: string[] = [];
    client.onStatus = (s) => statuses.push(s);
    client.connect();
    expect(sockets).toHaveLength(1);
    expect(sockets[0].binaryType).toBe("arraybuffer");
    expect(statuses).toEqual(["connecting"]);
    sockets[0].open();
    expect(statuses).toEqual(["connecting", "open"]);
    expect(client.isOpen).toBe(true);
    client.close();
    expect(statuses).toEqual(["connecting", "open", "closed"]);
  });

  it("dispatches text messages to the right callbacks", () => {
    const { client, sockets } = makeClient();
    const seen: string[] = [];
    client.onStats = (m) => seen.push(`stats:${m.frameId}`);
    client.onScene = (m) => seen.push(`scene:${m.scene}`);
    client.onError = (m) => seen.push(`error:${m.message}`);
    client.connect();
    sockets[0].open();
    sockets[0].text(
      '{"type":"stats","frameId":1,"renderMs":5,"voxelSteps":10,"tests":20,"quality":"moving"}',
    );
    sockets[0].text(
      '{"type":"scene","scene":"tornado","dims":[8,8,8],"bins":4,"segments":9,"memoryBytes":99}',
    );
    sockets[0].text('{"type":"error","message":"bad"}');
    sockets[0].text("not json at all");
    expect(seen).toEqual(["stats:1", "scene:tornado", "error:bad"]);
  });

  it("decodes binary frames and drops stale ids", async () => {
    const { client, sockets } = makeClient();
    const frames: number[] = [];
    client.onFrame = (f) => {
      frames.push(f.frameId);
    };
    client.connect();
    sockets[0].open();
    sockets[0].binary(rawFrame(1));
    sockets[0].binary(rawFrame(3));
    sockets[0].binary(rawFrame(2));
    await tick();
    expect(frames).toEqual([1, 3]);
  });

  it("accepts node-style Buffer views of binary data", async () => {
    const { client, sockets } = makeClient();
    const frames: number[] = [];
    client.onFrame = (f) => {
      frames.push(f.frameId);
    };
    client.connect();
    sockets[0].open();
    const buf = rawFrame(9);
    // simulate ws delivering a view over a larger pool buffer
    const pool = new ArrayBuffer(buf.byteLength + 16);
    new Uint8Array(pool, 8, buf.byteLength).set(new Uint8Array(buf));
    sockets[0].onmessage?.({ data: new Uint8Array(pool, 8, buf.byteLength) });
    await tick();
    expect(frames).toEqual([9]);
  });

  it("throttles camera messages to the newest pose", () => {
    vi.useFakeTimers();
    const { client, sockets } = makeClient({ cameraIntervalMs: 50 });
    client.connect();
    sockets[0].open();
    const cam = (x: number) => ({
      pos: [x, 0, 0] as [number, number, number],
      target: [0, 0, 0] as [number, number, number],
      up: [0, 0, 1] as [number, number, number],
      fov: 45,
    });
    client.sendCamera(cam(1));
    client.sendCamera(cam(2));
    client.sendCamera(cam(3));
    expect(sockets[0].sent).toHaveLength(1);
    expect(JSON.parse(sockets[0].sent[0]).pos[0]).toBe(1);
    vi.advanceTimersByTime(60);
    expect(sockets[0].sent).toHaveLength(2);
    expect(JSON.parse(sockets[0].sent[1]).pos[0]).toBe(3);
  });

  it("sends scene, params and frame requests unthrottled", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].open();
    client.loadScene({ name: "tornado" });
    client.sendParams({ tau: 0.9 });
    client.requestFrame();
    const types = sockets[0].sent.map((p) => JSON.parse(p).type);
    expect(types).toEqual(["loadScene", "params", "requestFrame"]);
  });

  it("drops outbound traffic while the socket is not open", () => {
    const { client, sockets } = makeClient();
    client.connect();
    client.requestFrame();
    expect(sockets[0].sent).toHaveLength(0);
  });

  it("reconnects with exponential backoff and resets it on success", () => {
    vi.useFakeTimers();
    const { client, sockets } = makeClient();
    const statuses: string[] = [];
    client.onStatus = (s) => statuses.push(s);
    client.connect();
    sockets[0].open();
    sockets[0].onclose?.(); // dropped by the server
    expect(statuses).toEqual(["connecting", "open", "closed"]);
    expect(sockets).toHaveLength(1);
    vi.advanceTimersByTime(499);
    expect(sockets).toHaveLength(1);
    vi.advanceTimersByTime(1);
    expect(sockets).toHaveLength(2); // first retry after 500 ms
    sockets[1].onclose?.(); // retry failed
    vi.advanceTimersByTime(1000);
    expect(sockets).toHaveLength(3); // second retry after 1000 ms
    sockets[2].open(); // success resets the backoff
    sockets[2].onclose?.();
    vi.advanceTimersByTime(500);
    expect(sockets).toHaveLength(4);
  });

  it("close() stops reconnect attempts", () => {
    vi.useFakeTimers();
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].open();
    client.close();
    expect(sockets[0].closedByClient).toBe(true);
    vi.advanceTimersByTime(60_000);
    expect(sockets).toHaveLength(1);
  });
});
