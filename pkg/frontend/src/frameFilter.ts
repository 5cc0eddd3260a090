/**
 * Keeps displayed frames monotonic and decoding serialized.
 *
 * Frames can be superseded while an earlier one is still being decoded
 * (PNG decode is async), so at most one undecoded frame is held: a newer
 * arrival replaces it. Frames with ids at or below the newest accepted id
 * are dropped outright.
 */

import type { FrameMessage } from "./protocol.js";

export type PresentFn = (frame: FrameMessage) => Promise<void>;
export type DropFn = (reason: "stale" | "superseded", frame: FrameMessage) => void;

export class FrameFilter {
  private newestId = 0;
  private pending: FrameMessage | null = null;
  private presenting = false;

  constructor(
    private readonly present: PresentFn,
    private readonly onDrop?: DropFn,
  ) {}

  /** Newest frame id accepted so far (0 before any frame). */
  get lastFrameId(): number {
    return this.newestId;
  }

  push(frame: FrameMessage): void {
    if (frame.frameId <= this.newestId) {
      this.onDrop?.("stale", frame);
      return;
    }
    this.newestId = frame.frameId;
    if (this.pending !== null) {
      this.onDrop?.("superseded", this.pending);
    }
    this.pending = frame;
    void this.pump();
  }

  private async pump(): Promise<void> {
    if (this.presenting) {
      return;
    }
    this.presenting = true;
    try {
      while (this.pending !== null) {
        const frame = this.pending;
        this.pending = null;
        try {
          await this.present(frame);
        } catch (err) {
          // pump() is fire-and-forget, so a decode failure must not escape
          console.warn(`presenting frame ${frame.frameId} failed:`, err);
        }
      }
    } finally {
      this.presenting = false;
    }
  }
}
