/**
 * Message schema shared with the gateway. Client messages carry operator
 * input; server messages carry frames and telemetry. All parsing is
 * tolerant: anything malformed decodes to null and is ignored upstream.
 */

/** Pose as a flat array: [qw, qx, qy, qz, x, y, z] (meters). */
export type Pose = number[];

export interface FrameMessage {
  type: "preview_frame" | "live_frame";
  w: number;
  h: number;
  /** generation timestamp, microseconds of the simulator clock */
  t: number;
  /** base64 of 8-bit grayscale pixels, row-major */
  data: string;
}

export interface StateMessage {
  type: "state";
  follower_pose: number[] | null;
  force: number;
  fsm_mode: string;
  align_error: number | null;
}

export interface StatsMessage {
  type: "stats";
  rtt_ms: number;
  drops: number;
}

export type ServerMessage = FrameMessage | StateMessage | StatsMessage;

export type ClientMessage =
  | { type: "pose"; pose: Pose; t: number }
  | { type: "button"; down: boolean }
  | { type: "set_delay"; ms: number }
  | { type: "set_mode"; mode: "mmt" | "vhmmt" }
  | { type: "start" }
  | { type: "stop" };

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

/** Decode one server message; null for malformed JSON or unknown shapes. */
export function parseServerMessage(text: string): ServerMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) {
    return null;
  }
  const msg = obj as Record<string, unknown>;
  switch (msg.type) {
    case "preview_frame":
    case "live_frame":
      if (isFiniteNumber(msg.w) && isFiniteNumber(msg.h) &&
          isFiniteNumber(msg.t) && typeof msg.data === "string") {
        return msg as unknown as FrameMessage;
      }
      return null;
    case "state":
      if (isFiniteNumber(msg.force) && typeof msg.fsm_mode === "string") {
        return msg as unknown as StateMessage;
      }
      return null;
    case "stats":
      if (isFiniteNumber(msg.rtt_ms) && isFiniteNumber(msg.drops)) {
        return msg as unknown as StatsMessage;
      }
      return null;
    default:
      return null;
  }
}

/**
 * Expand base64 grayscale pixels to RGBA for a canvas ImageData buffer.
 * Returns null when the payload does not decode to exactly w*h bytes.
 */
export function decodeGrayscale(
    data: string, w: number,
    h: number): Uint8ClampedArray<ArrayBuffer> | null {
  let raw: string;
  try {
    raw = atob(data);
  } catch {
    return null;
  }
  if (raw.length !== w * h) {
    return null;
  }
  const rgba = new Uint8ClampedArray(w * h * 4);
  for (let i = 0; i < w * h; i++) {
    const v = raw.charCodeAt(i);
    rgba[4 * i] = v;
    rgba[4 * i + 1] = v;
    rgba[4 * i + 2] = v;
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}
