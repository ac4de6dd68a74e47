// WebSocket client with automatic reconnect and last-frame handoff.

import { Backoff, parseFrame, type ServerFrame } from "./protocol.js";

export interface NetCallbacks {
  onFrame: (frame: ServerFrame) => void;
  onStatus: (connected: boolean) => void;
}

export class BridgeClient {
  private socket: WebSocket | null = null;
  private backoff = new Backoff();
  private closed = false;

  constructor(
    readonly url: string,
    readonly callbacks: NetCallbacks,
  ) {}

  connect(): void {
    if (this.closed) return;
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.addEventListener("open", () => {
      this.backoff.reset();
      this.callbacks.onStatus(true);
    });
    socket.addEventListener("message", (event) => {
      try {
        this.callbacks.onFrame(parseFrame(String(event.data)));
      } catch {
        // ignore unparseable frames
      }
    });
    const retry = () => {
      if (this.closed) return;
      this.callbacks.onStatus(false);
      const delay = this.backoff.nextDelay();
      setTimeout(() => this.connect(), delay);
    };
    socket.addEventListener("close", retry);
    socket.addEventListener("error", () => socket.close());
  }

  send(text: string): boolean {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(text);
      return true;
    }
    return false;
  }

  shutdown(): void {
    this.closed = true;
    this.socket?.close();
  }
}
