/**
 * Byte channel abstraction over the gateway connection. The real
 * implementation wraps a browser WebSocket (binary frames); tests use
 * stubs. Reconnection backs off exponentially and re-runs the HELLO
 * handshake through the session's onOpen hook.
 */

export interface ByteChannel {
  readonly open: boolean;
  send(data: Uint8Array): void;
  close(): void;
}

export interface ChannelEvents {
  onOpen: () => void;
  onBytes: (data: Uint8Array) => void;
  onClose: () => void;
}

export class WebSocketChannel implements ByteChannel {
  private ws: WebSocket | null = null;
  private events: ChannelEvents;
  private url: string;
  private closedByUs = false;

  constructor(url: string, events: ChannelEvents) {
    this.url = url;
    this.events = events;
    this.connect();
  }

  private connect(): void {
    const ws = new WebSocket(this.url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => this.events.onOpen();
    ws.onmessage = (event) => {
      const data =
        event.data instanceof ArrayBuffer
          ? new Uint8Array(event.data)
          : new TextEncoder().encode(String(event.data));
      this.events.onBytes(data);
    };
    ws.onclose = () => {
      this.ws = null;
      if (!this.closedByUs) this.events.onClose();
    };
    this.ws = ws;
  }

  get open(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(data: Uint8Array): void {
    if (!this.open || !this.ws) throw new Error("channel closed");
    this.ws.send(data);
  }

  close(): void {
    this.closedByUs = true;
    this.ws?.close();
  }
}

export interface BackoffOptions {
  initialMs: number;
  maxMs: number;
  factor: number;
}

export const DEFAULT_BACKOFF: BackoffOptions = { initialMs: 500, maxMs: 15000, factor: 2 };

/** Pure backoff schedule: delay before reconnect attempt n (0-based). */
export function backoffDelay(attempt: number, opts: BackoffOptions = DEFAULT_BACKOFF): number {
  const delay = opts.initialMs * Math.pow(opts.factor, attempt);
  return Math.min(delay, opts.maxMs);
}
