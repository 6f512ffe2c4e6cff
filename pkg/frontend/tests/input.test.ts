import { describe, expect, it } from "vitest";

import { ADVANCE_M_PER_TICK, MAX_RATE_HZ, MM_PER_PX, ProbeInput } from
  "../src/input.js";

describe("ProbeInput", () => {
  it("drag right 100 px moves pose x by the configured scale", () => {
    const input = new ProbeInput();
    input.drag(100, 0);
    const msg = input.maybeEmit(0)!;
    expect(msg.type).toBe("pose");
    if (msg.type === "pose") {
      expect(msg.pose[4]).toBeCloseTo(100 * MM_PER_PX * 1e-3, 12);
      expect(msg.pose[5]).toBeCloseTo(0, 12);
    }
  });

  it("scroll advances along the probe push axis", () => {
    const input = new ProbeInput();
    input.scroll(3);
    const msg = input.maybeEmit(0)!;
    if (msg.type === "pose") {
      expect(msg.pose[5]).toBeCloseTo(3 * ADVANCE_M_PER_TICK, 12);
    }
  });

  it("modifier drag tilts without translating", () => {
    const input = new ProbeInput();
    input.drag(50, 0, true);
    const msg = input.maybeEmit(0)!;
    if (msg.type === "pose") {
      expect(msg.pose[4]).toBe(0);
      expect(msg.pose[0]).toBeLessThan(1); // quaternion rotated off identity
      const norm = Math.hypot(msg.pose[0], msg.pose[1], msg.pose[2],
                              msg.pose[3]);
      expect(norm).toBeCloseTo(1, 12);
    }
  });

  it("clutch suppresses pose output until release", () => {
    const input = new ProbeInput();
    const down = input.setClutch(true);
    expect(down).toEqual({ type: "button", down: true });
    input.drag(40, 10);
    input.drag(-5, 3);
    expect(input.maybeEmit(100)).toBeNull();
    expect(input.maybeEmit(200)).toBeNull();
    const up = input.setClutch(false);
    expect(up).toEqual({ type: "button", down: false });
    expect(input.maybeEmit(300)).not.toBeNull();
  });

  it("throttles to at most 60 messages per second", () => {
    const input = new ProbeInput();
    let sent = 0;
    for (let ms = 0; ms < 1000; ms++) {
      input.drag(1, 0);
      if (input.maybeEmit(ms) !== null) {
        sent++;
      }
    }
    expect(sent).toBeLessThanOrEqual(MAX_RATE_HZ);
    expect(sent).toBeGreaterThan(MAX_RATE_HZ / 2);
  });

  it("timestamps are strictly monotone even for equal clock reads", () => {
    const input = new ProbeInput();
    const stamps: number[] = [];
    for (let i = 0; i < 5; i++) {
      input.drag(1, 0);
      const msg = input.maybeEmit(i * 100);
      if (msg !== null && msg.type === "pose") {
        stamps.push(msg.t);
      }
    }
    input.drag(1, 0);
    // clock stuck at the same value: timestamp must still advance
    const stuck = input.maybeEmit(400 + 100)!;
    if (stuck.type === "pose") {
      stamps.push(stuck.t);
    }
    for (let i = 1; i < stamps.length; i++) {
      expect(stamps[i]).toBeGreaterThan(stamps[i - 1]);
    }
  });

  it("emits nothing without motion", () => {
    const input = new ProbeInput();
    expect(input.maybeEmit(0)).toBeNull();
  });
});
