/**
 * twin_v1 codec: length-delimited canonical-JSON frames.
 *
 * The byte encoding must match the gateway exactly (the protocol doc pins
 * frozen examples): object keys sorted, compact separators, non-ASCII
 * escaped as \uXXXX, timestamps as integral epoch milliseconds. Keys are
 * ASCII throughout, so JS code-unit key sorting equals the gateway's
 * code-point sorting.
 */

export type MessageKind =
  | "STATE_UPDATE"
  | "COMMAND"
  | "ACK"
  | "NACK"
  | "HELLO"
  | "PING";

const KINDS: ReadonlySet<string> = new Set([
  "STATE_UPDATE",
  "COMMAND",
  "ACK",
  "NACK",
  "HELLO",
  "PING",
]);

export interface ChannelMessage {
  kind: MessageKind;
  seq: number;
  payload: Record<string, unknown>;
  sentAt: number; // epoch milliseconds, integral
}

export const PROTOCOL_NAME = "twin_v1";
export const MAX_FRAME_BYTES = 1 << 20;

export class ProtocolError extends Error {}

function escapeString(value: string): string {
  let out = JSON.stringify(value);
  out = out.replace(/[-￿]/g, (ch) => {
    return "\\u" + ch.charCodeAt(0).toString(16).padStart(4, "0");
  });
  return out;
}

function canonNumber(value: number): string {
  if (!Number.isFinite(value)) {
    throw new ProtocolError("non-finite numbers are not representable");
  }
  // JS renders integral doubles without a fraction part already (420, not
  // 420.0), matching the canonical profile.
  return String(value);
}

/** Canonical JSON text for a value (sorted keys, no whitespace, ASCII). */
export function canonicalJson(value: unknown): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      return canonNumber(value);
    case "string":
      return escapeString(value);
    case "object":
      break;
    default:
      throw new ProtocolError(`unencodable value of type ${typeof value}`);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const record = value as Record<string, unknown>;
  const keys = Object.keys(record).sort();
  const parts = keys.map((k) => escapeString(k) + ":" + canonicalJson(record[k]));
  return "{" + parts.join(",") + "}";
}

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export function encodeFrame(msg: ChannelMessage): Uint8Array {
  if (!Number.isInteger(msg.seq) || msg.seq < 0) {
    throw new ProtocolError("seq must be a non-negative integer");
  }
  if (!Number.isInteger(msg.sentAt)) {
    throw new ProtocolError("sent_at must be integral epoch milliseconds");
  }
  const body = encoder.encode(
    canonicalJson({
      kind: msg.kind,
      payload: msg.payload,
      seq: msg.seq,
      sent_at: msg.sentAt,
    }),
  );
  if (body.length > MAX_FRAME_BYTES) throw new ProtocolError("frame too large");
  const prefix = encoder.encode(String(body.length) + "\n");
  const frame = new Uint8Array(prefix.length + body.length);
  frame.set(prefix, 0);
  frame.set(body, prefix.length);
  return frame;
}

export function decodeBody(body: Uint8Array): ChannelMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(decoder.decode(body));
  } catch (err) {
    throw new ProtocolError(`body is not valid JSON: ${err}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ProtocolError("body must be a JSON object");
  }
  const record = doc as Record<string, unknown>;
  const kind = record["kind"];
  if (typeof kind !== "string" || !KINDS.has(kind)) {
    throw new ProtocolError(`unknown message kind ${String(kind)}`);
  }
  const seq = record["seq"];
  const sentAt = record["sent_at"];
  const payload = record["payload"];
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 0) {
    throw new ProtocolError("seq must be a non-negative integer");
  }
  if (typeof sentAt !== "number" || !Number.isInteger(sentAt)) {
    throw new ProtocolError("sent_at must be integral epoch milliseconds");
  }
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new ProtocolError("payload must be an object");
  }
  return {
    kind: kind as MessageKind,
    seq,
    payload: payload as Record<string, unknown>,
    sentAt,
  };
}

/** Incremental frame parser over an arbitrary byte stream. */
export class FrameDecoder {
  private buffer = new Uint8Array(0);

  feed(data: Uint8Array): ChannelMessage[] {
    const merged = new Uint8Array(this.buffer.length + data.length);
    merged.set(this.buffer, 0);
    merged.set(data, this.buffer.length);
    this.buffer = merged;
    const out: ChannelMessage[] = [];
    for (;;) {
      const msg = this.tryPop();
      if (msg === null) return out;
      out.push(msg);
    }
  }

  private tryPop(): ChannelMessage | null {
    const newline = this.buffer.indexOf(0x0a);
    if (newline === -1) {
      if (this.buffer.length > 20) throw new ProtocolError("length prefix too long");
      return null;
    }
    const prefix = decoder.decode(this.buffer.subarray(0, newline));
    if (!/^\d+$/.test(prefix)) {
      throw new ProtocolError(`bad length prefix ${JSON.stringify(prefix)}`);
    }
    const length = parseInt(prefix, 10);
    if (length > MAX_FRAME_BYTES) throw new ProtocolError("frame too large");
    if (this.buffer.length < newline + 1 + length) return null;
    const body = this.buffer.subarray(newline + 1, newline + 1 + length);
    const msg = decodeBody(body);
    this.buffer = this.buffer.slice(newline + 1 + length);
    return msg;
  }
}

// -- constructors ----------------------------------------------------------

export function helloMessage(seq: number, role: string, sentAt: number): ChannelMessage {
  return {
    kind: "HELLO",
    seq,
    payload: { role, protocol: PROTOCOL_NAME },
    sentAt,
  };
}

export function commandMessage(
  seq: number,
  tag: string,
  target: string,
  sentAt: number,
): ChannelMessage {
  return { kind: "COMMAND", seq, payload: { tag, target }, sentAt };
}
