import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  FrameDecoder,
  ProtocolError,
  canonicalJson,
  commandMessage,
  decodeBody,
  encodeFrame,
  helloMessage,
} from "../src/protocol.js";

const text = new TextDecoder();

// Frozen vectors from the protocol doc: the gateway produces exactly these
// bytes, so we must too.
const COMMAND_FRAME =
  '92\n{"kind":"COMMAND","payload":{"tag":"MV101","target":"OPEN"},' +
  '"sent_at":1743465600000,"seq":1}';
const HELLO_FRAME =
  '94\n{"kind":"HELLO","payload":{"protocol":"twin_v1","role":"HMI"},' +
  '"sent_at":1743465600000,"seq":0}';

describe("canonical json", () => {
  it("sorts keys and stays compact", () => {
    expect(canonicalJson({ b: 1, a: 2 })).toBe('{"a":2,"b":1}');
  });

  it("renders integral numbers without a fraction", () => {
    expect(canonicalJson({ x: 420.0 })).toBe('{"x":420}');
    expect(canonicalJson({ x: 0.5 })).toBe('{"x":0.5}');
  });

  it("escapes non-ascii", () => {
    expect(canonicalJson({ x: "café" })).toBe('{"x":"caf\\u00e9"}');
  });

  it("rejects non-finite numbers", () => {
    expect(() => canonicalJson({ x: Number.NaN })).toThrow(ProtocolError);
  });
});

describe("frame encoding", () => {
  it("command frame is byte-identical to the protocol doc example", () => {
    const frame = encodeFrame(commandMessage(1, "MV101", "OPEN", 1743465600000));
    expect(text.decode(frame)).toBe(COMMAND_FRAME);
  });

  it("hello frame matches the doc example", () => {
    const frame = encodeFrame(helloMessage(0, "HMI", 1743465600000));
    expect(text.decode(frame)).toBe(HELLO_FRAME);
  });

  it("round-trips through the decoder", () => {
    const msg = commandMessage(7, "P101", "ON", 123456);
    const [decoded] = new FrameDecoder().feed(encodeFrame(msg));
    expect(decoded).toEqual(msg);
  });

  it("rejects fractional timestamps", () => {
    expect(() => encodeFrame(commandMessage(1, "MV101", "OPEN", 1.5))).toThrow(ProtocolError);
  });
});

describe("frame decoding", () => {
  it("parses a gateway-encoded state update byte-for-byte", () => {
    const raw = readFileSync(join(__dirname, "fixtures", "state_update_frame.bin"));
    const frames = new FrameDecoder().feed(new Uint8Array(raw));
    expect(frames).toHaveLength(1);
    const msg = frames[0];
    expect(msg.kind).toBe("STATE_UPDATE");
    const tags = msg.payload["tags"] as Record<string, unknown>;
    expect(Object.keys(tags)).toHaveLength(68);
    expect(tags["MV101"]).toBe("OPEN");
    expect(tags["LIT101"]).toBe(810); // 800 gal + one minute at 10 gal/min
    expect(msg.payload["alarms"]).toEqual([["T101", "LL"]]);
  });

  it("reassembles frames fed one byte at a time", () => {
    const frame = encodeFrame(commandMessage(3, "MV201", "CLOSED", 99));
    const decoder = new FrameDecoder();
    const out = [];
    for (const byte of frame) out.push(...decoder.feed(new Uint8Array([byte])));
    expect(out).toHaveLength(1);
    expect(out[0].payload).toEqual({ tag: "MV201", target: "CLOSED" });
  });

  it("splits concatenated frames", () => {
    const a = encodeFrame(commandMessage(1, "MV101", "OPEN", 1));
    const b = encodeFrame(commandMessage(2, "MV101", "CLOSED", 2));
    const merged = new Uint8Array(a.length + b.length);
    merged.set(a, 0);
    merged.set(b, a.length);
    expect(new FrameDecoder().feed(merged)).toHaveLength(2);
  });

  it("rejects garbage length prefixes", () => {
    expect(() => new FrameDecoder().feed(new TextEncoder().encode("xx\n{}"))).toThrow(
      ProtocolError,
    );
  });

  it("rejects unknown kinds", () => {
    const body = new TextEncoder().encode(
      '{"kind":"BOGUS","payload":{},"seq":0,"sent_at":0}',
    );
    expect(() => decodeBody(body)).toThrow(ProtocolError);
  });
});
