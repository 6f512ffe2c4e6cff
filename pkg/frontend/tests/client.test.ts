import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { GatewayClient, SocketLike } from "../src/client.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }
}

describe("GatewayClient", () => {
  let sockets: FakeSocket[];
  let client: GatewayClient;

  beforeEach(() => {
    vi.useFakeTimers();
    sockets = [];
    client = new GatewayClient("ws://test/ws", () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    }, 500, 5000);
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("dispatches parsed messages and drops malformed ones", () => {
    const seen: string[] = [];
    client.onMessage = (m) => seen.push(m.type);
    client.connect();
    sockets[0].onopen!();
    sockets[0].onmessage!({ data: JSON.stringify(
      { type: "stats", rtt_ms: 0, drops: 0 }) });
    sockets[0].onmessage!({ data: "{broken" });
    sockets[0].onmessage!({ data: JSON.stringify({ type: "nope" }) });
    expect(seen).toEqual(["stats"]);
  });

  it("send returns false while disconnected, true when open", () => {
    client.connect();
    expect(client.send({ type: "start" })).toBe(false);
    sockets[0].onopen!();
    expect(client.send({ type: "start" })).toBe(true);
    expect(JSON.parse(sockets[0].sent[0])).toEqual({ type: "start" });
  });

  it("reconnects with exponential backoff after a drop", () => {
    const statuses: string[] = [];
    client.onStatus = (s) => statuses.push(s);
    client.connect();
    sockets[0].onopen!();
    sockets[0].onclose!();          // connection drops
    expect(sockets.length).toBe(1);
    vi.advanceTimersByTime(500);    // first retry
    expect(sockets.length).toBe(2);
    sockets[1].onclose!();          // fails again
    vi.advanceTimersByTime(500);    // backoff doubled: not yet
    expect(sockets.length).toBe(2);
    vi.advanceTimersByTime(500);
    expect(sockets.length).toBe(3);
    sockets[2].onopen!();
    expect(client.isOpen).toBe(true);
    expect(statuses).toContain("connecting");
    expect(statuses).toContain("open");
    expect(statuses).toContain("closed");
  });

  it("close() stops reconnect attempts", () => {
    client.connect();
    sockets[0].onopen!();
    client.close();
    vi.advanceTimersByTime(60_000);
    expect(sockets.length).toBe(1);
    expect(client.send({ type: "stop" })).toBe(false);
  });
});
