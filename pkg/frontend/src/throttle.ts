/**
 * Trailing-edge rate limiter for outbound messages.
 *
 * The first push in a quiet period goes out immediately; pushes inside the
 * minimum interval overwrite each other and the newest one is sent when the
 * interval expires, so the receiver always ends on the latest value.
 */

export class Throttle {
  private lastSent = -Infinity;
  private queued: string | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly intervalMs: number,
    private readonly send: (payload: string) => void,
    private readonly now: () => number = () => Date.now(),
  ) {}

  push(payload: string): void {
    const t = this.now();
    if (this.timer === null && t - this.lastSent >= this.intervalMs) {
      this.lastSent = t;
      this.send(payload);
      return;
    }
    this.queued = payload;
    if (this.timer === null) {
      const wait = Math.max(0, this.intervalMs - (t - this.lastSent));
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  /** True while a queued payload is waiting for the interval to expire. */
  get pending(): boolean {
    return this.queued !== null;
  }

  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.queued = null;
  }

  private flush(): void {
    this.timer = null;
    if (this.queued === null) {
      return;
    }
    const payload = this.queued;
    this.queued = null;
    this.lastSent = this.now();
    this.send(payload);
  }
}
