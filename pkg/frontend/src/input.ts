/**
 * Pointer-to-pose mapping: drag moves the virtual probe in the image
 * plane, modifier+drag tilts it, scroll advances it along the probe axis.
 * Output is throttled to at most 60 pose messages per second with
 * monotone timestamps, and fully suppressed while the clutch is held.
 */
import type { ClientMessage, Pose } from "./protocol.js";

export const MM_PER_PX = 0.5;              // drag translation scale
export const TILT_RAD_PER_PX = 0.002;      // modifier-drag tilt scale
export const ADVANCE_M_PER_TICK = 0.0005;  // scroll advance per wheel tick
export const MAX_RATE_HZ = 60;

type Quat = [number, number, number, number];

function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

function quatFromAxisAngle(axis: number[], angle: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]) || 1;
  const s = Math.sin(angle / 2);
  return [Math.cos(angle / 2),
          (axis[0] / n) * s, (axis[1] / n) * s, (axis[2] / n) * s];
}

function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]) || 1;
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

/** Rotate a vector by the pose quaternion (body axis -> world). */
function rotate(q: Quat, v: number[]): number[] {
  const [w, x, y, z] = q;
  const qv: Quat = [0, v[0], v[1], v[2]];
  const conj: Quat = [w, -x, -y, -z];
  const r = quatMultiply(quatMultiply(q, qv), conj);
  return [r[1], r[2], r[3]];
}

export class ProbeInput {
  pose: Pose;
  clutched = false;
  private dirty = false;
  private lastSentMs = -Infinity;
  private lastTimestampUs = 0;

  constructor(initialPose: Pose = [1, 0, 0, 0, 0, 0, 0]) {
    this.pose = [...initialPose];
  }

  private quat(): Quat {
    return [this.pose[0], this.pose[1], this.pose[2], this.pose[3]];
  }

  /** Drag by (dx, dy) pixels; with the modifier held it tilts instead. */
  drag(dxPx: number, dyPx: number, modifier = false): void {
    if (modifier) {
      const tilt = quatFromAxisAngle([0, 1, 0], dxPx * TILT_RAD_PER_PX);
      const tilt2 = quatFromAxisAngle([1, 0, 0], dyPx * TILT_RAD_PER_PX);
      const q = quatNormalize(
        quatMultiply(quatMultiply(this.quat(), tilt), tilt2));
      this.pose = [...q, this.pose[4], this.pose[5], this.pose[6]];
    } else {
      // translate along the in-image axes of the current orientation
      const scale = MM_PER_PX * 1e-3;
      const delta = rotate(this.quat(), [dxPx * scale, dyPx * scale, 0]);
      this.pose[4] += delta[0];
      this.pose[5] += delta[1];
      this.pose[6] += delta[2];
    }
    this.dirty = true;
  }

  /** Scroll advances the probe along its push axis (in-image y). */
  scroll(ticks: number): void {
    const delta = rotate(this.quat(), [0, ticks * ADVANCE_M_PER_TICK, 0]);
    this.pose[4] += delta[0];
    this.pose[5] += delta[1];
    this.pose[6] += delta[2];
    this.dirty = true;
  }

  /** Clutch press/release; returns the button message to send. */
  setClutch(down: boolean): ClientMessage {
    this.clutched = down;
    return { type: "button", down };
  }

  /**
   * Pose message for the accumulated motion, or null when clutched,
   * unchanged, or inside the 60 Hz throttle window. Timestamps are
   * strictly monotone.
   */
  maybeEmit(nowMs: number): ClientMessage | null {
    if (!this.dirty || this.clutched) {
      return null;
    }
    if (nowMs - this.lastSentMs < 1000 / MAX_RATE_HZ) {
      return null;
    }
    this.lastSentMs = nowMs;
    this.dirty = false;
    const tUs = Math.max(this.lastTimestampUs + 1, Math.round(nowMs * 1000));
    this.lastTimestampUs = tUs;
    return { type: "pose", pose: [...this.pose], t: tUs };
  }
}
