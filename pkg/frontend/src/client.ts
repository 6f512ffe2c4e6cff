/**
 * Gateway connection with automatic reconnect. The socket implementation
 * is injected so the protocol logic is testable without a browser.
 */
import { ClientMessage, ServerMessage, parseServerMessage } from
  "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = "connecting" | "open" | "closed";

export class GatewayClient {
  onMessage: (msg: ServerMessage) => void = () => {};
  onStatus: (status: ConnectionStatus) => void = () => {};

  private socket: SocketLike | null = null;
  private open = false;
  private stopped = false;
  private retryMs: number;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
      private url: string,
      private factory: SocketFactory,
      private baseRetryMs = 500,
      private maxRetryMs = 5000) {
    this.retryMs = baseRetryMs;
  }

  get isOpen(): boolean {
    return this.open;
  }

  connect(): void {
    this.stopped = false;
    this.onStatus("connecting");
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.open = true;
      this.retryMs = this.baseRetryMs;
      this.onStatus("open");
    };
    socket.onmessage = (ev) => {
      const msg = parseServerMessage(ev.data);
      if (msg !== null) {
        this.onMessage(msg);
      }
    };
    socket.onclose = () => {
      this.open = false;
      this.socket = null;
      this.onStatus("closed");
      if (!this.stopped) {
        this.timer = setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, this.maxRetryMs);
      }
    };
  }

  /** Send a client message; false when the connection is down. */
  send(msg: ClientMessage): boolean {
    if (!this.open || this.socket === null) {
      return false;
    }
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.socket?.close();
    this.socket = null;
    this.open = false;
  }
}
