/**
 * Live-frame age estimation. Preview frames are generated the instant a
 * command is issued, so their timestamps track the simulator's "now";
 * anchoring that against the local wall clock lets the console age the
 * delayed live frames without a shared clock.
 */

export class LagTracker {
  private anchorSimMs: number | null = null;
  private anchorWallMs = 0;
  private lastLiveSimMs: number | null = null;

  /** Feed a fresh (undelayed) timestamp, e.g. from a preview frame. */
  onFresh(tUs: number, wallMs: number): void {
    const simMs = tUs / 1000;
    // keep the most advanced estimate of the simulator clock
    if (this.anchorSimMs === null ||
        simMs + (this.anchorWallMs - wallMs) > this.anchorSimMs) {
      this.anchorSimMs = simMs;
      this.anchorWallMs = wallMs;
    }
  }

  /** Feed a live (delayed) frame timestamp. */
  onLive(tUs: number, wallMs: number): void {
    this.lastLiveSimMs = tUs / 1000;
    // with no preview stream (MMT mode) the live frames are the only
    // clock source; they still bound the simulator time from below
    if (this.anchorSimMs === null) {
      this.anchorSimMs = tUs / 1000;
      this.anchorWallMs = wallMs;
    }
  }

  /** Age of the newest live frame in ms, or null before any frame. */
  badgeMs(wallMs: number): number | null {
    if (this.lastLiveSimMs === null || this.anchorSimMs === null) {
      return null;
    }
    const simNow = this.anchorSimMs + (wallMs - this.anchorWallMs);
    return Math.max(0, simNow - this.lastLiveSimMs);
  }
}

/** Sliding one-second window frame-rate meter. */
export class FrameRateMeter {
  private times: number[] = [];

  tick(nowMs: number): void {
    this.times.push(nowMs);
    this.evict(nowMs);
  }

  fps(nowMs: number): number {
    this.evict(nowMs);
    return this.times.length;
  }

  private evict(nowMs: number): void {
    while (this.times.length > 0 && this.times[0] <= nowMs - 1000) {
      this.times.shift();
    }
  }
}
