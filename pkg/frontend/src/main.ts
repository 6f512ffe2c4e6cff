/**
 * Console wiring: connects to the gateway, maps pointer input to probe
 * pose commands, and renders the model preview next to the delayed live
 * image with force, session-state, and lag telemetry.
 */
import { GatewayClient } from "./client.js";
import { ProbeInput } from "./input.js";
import { FrameRateMeter, LagTracker } from "./lag.js";
import { FrameMessage, decodeGrayscale } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function drawFrame(canvas: HTMLCanvasElement, frame: FrameMessage): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const rgba = decodeGrayscale(frame.data, frame.w, frame.h);
  if (rgba === null) {
    // decode failure: placeholder, never crash
    ctx.fillStyle = "#333";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    return;
  }
  canvas.width = frame.w;
  canvas.height = frame.h;
  ctx.putImageData(new ImageData(rgba, frame.w, frame.h), 0, 0);
}

function start(): void {
  const preview = el<HTMLCanvasElement>("preview");
  const live = el<HTMLCanvasElement>("live");
  const lagBadge = el<HTMLSpanElement>("lag-badge");
  const fpsBadge = el<HTMLSpanElement>("fps-badge");
  const fsmBadge = el<HTMLSpanElement>("fsm-badge");
  const statusBadge = el<HTMLSpanElement>("status-badge");
  const forceBar = el<HTMLDivElement>("force-bar");
  const forceLabel = el<HTMLSpanElement>("force-label");

  const input = new ProbeInput();
  const lag = new LagTracker();
  const previewFps = new FrameRateMeter();
  const url = `ws://${location.host}/ws`;
  const client = new GatewayClient(url, (u) => {
    const ws = new WebSocket(u);
    const adapter = {
      send: (d: string) => ws.send(d),
      close: () => ws.close(),
      onopen: null as (() => void) | null,
      onmessage: null as ((ev: { data: string }) => void) | null,
      onclose: null as (() => void) | null,
    };
    ws.onopen = () => adapter.onopen?.();
    ws.onmessage = (ev) => adapter.onmessage?.({ data: String(ev.data) });
    ws.onclose = () => adapter.onclose?.();
    return adapter;
  });

  client.onStatus = (status) => {
    statusBadge.textContent = status;
    statusBadge.className = `badge ${status}`;
  };
  client.onMessage = (msg) => {
    const now = performance.now();
    if (msg.type === "preview_frame") {
      drawFrame(preview, msg);
      lag.onFresh(msg.t, now);
      previewFps.tick(now);
    } else if (msg.type === "live_frame") {
      drawFrame(live, msg);
      lag.onLive(msg.t, now);
    } else if (msg.type === "state") {
      fsmBadge.textContent = msg.fsm_mode +
        (msg.align_error !== null
          ? ` (align err ${msg.align_error.toFixed(3)} rad)` : "");
      const pct = Math.min(100, (msg.force / 20) * 100);
      forceBar.style.width = `${pct}%`;
      forceLabel.textContent = `${msg.force.toFixed(1)} N`;
    }
  };
  client.connect();

  // pointer input on the preview canvas
  let dragging = false;
  preview.addEventListener("pointerdown", (ev) => {
    dragging = true;
    preview.setPointerCapture(ev.pointerId);
  });
  preview.addEventListener("pointerup", () => { dragging = false; });
  preview.addEventListener("pointermove", (ev) => {
    if (dragging) {
      input.drag(ev.movementX, ev.movementY, ev.shiftKey);
    }
  });
  preview.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    input.scroll(Math.sign(ev.deltaY));
  }, { passive: false });
  window.addEventListener("keydown", (ev) => {
    if (ev.code === "Space" && !ev.repeat) {
      client.send(input.setClutch(true));
    }
  });
  window.addEventListener("keyup", (ev) => {
    if (ev.code === "Space") {
      client.send(input.setClutch(false));
    }
  });

  el<HTMLButtonElement>("start-btn").addEventListener(
    "click", () => client.send({ type: "start" }));
  el<HTMLButtonElement>("stop-btn").addEventListener(
    "click", () => client.send({ type: "stop" }));
  el<HTMLSelectElement>("delay-select").addEventListener("change", (ev) => {
    const ms = Number((ev.target as HTMLSelectElement).value);
    client.send({ type: "set_delay", ms });
  });
  el<HTMLSelectElement>("mode-select").addEventListener("change", (ev) => {
    const mode = (ev.target as HTMLSelectElement).value as "mmt" | "vhmmt";
    client.send({ type: "set_mode", mode });
  });

  const loop = () => {
    const now = performance.now();
    const poseMsg = input.maybeEmit(now);
    if (poseMsg !== null) {
      client.send(poseMsg);
    }
    const age = lag.badgeMs(now);
    lagBadge.textContent = age === null ? "—" : `${Math.round(age)} ms`;
    fpsBadge.textContent = `${previewFps.fps(now)} fps`;
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
}

window.addEventListener("DOMContentLoaded", start);
