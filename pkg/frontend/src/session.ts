/**
 * Live session against the twin gateway: HELLO handshake, state-update
 * ingestion, and the command path with ACK/NACK handling.
 *
 * If the channel is closed when a command is issued, the intent is queued
 * (at most one) and then dropped with a notice — a stale actuation is
 * never silently resent.
 */

import type { ByteChannel } from "./channel.js";
import { HmiViewModel, parseTagName } from "./model.js";
import {
  ChannelMessage,
  FrameDecoder,
  ProtocolError,
  commandMessage,
  encodeFrame,
  helloMessage,
} from "./protocol.js";

/** One user actuation: only actuator tags may carry intents. */
export interface CommandIntent {
  tag: string;
  target: string;
  issuedAt: number; // client timestamp, epoch ms
}

const HANDSHAKE_REJECTIONS = new Set(["address", "protocol", "slots", "hello", "session"]);

export class HmiSession {
  readonly model: HmiViewModel;
  private channel: ByteChannel;
  private decoder = new FrameDecoder();
  private now: () => number;
  private commandSeq = 0;
  private outstanding = new Map<number, { tag: string; target: string }>();
  private queuedIntent: CommandIntent | null = null;
  private helloSeq = 0;

  constructor(model: HmiViewModel, channel: ByteChannel, now: () => number = Date.now) {
    this.model = model;
    this.channel = channel;
    this.now = now;
  }

  /** Swap in a fresh channel after a reconnect. */
  attachChannel(channel: ByteChannel): void {
    this.channel = channel;
  }

  /** Open the handshake (also used on every reconnect). */
  hello(): void {
    this.model.setStatus("connecting");
    this.channel.send(encodeFrame(helloMessage(this.helloSeq, "HMI", this.now())));
  }

  /** Feed raw bytes from the channel. */
  receive(data: Uint8Array): void {
    let messages: ChannelMessage[];
    try {
      messages = this.decoder.feed(data);
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.model.notice(`protocol error: ${err.message}`);
        return;
      }
      throw err;
    }
    for (const msg of messages) this.handle(msg);
  }

  private handle(msg: ChannelMessage): void {
    switch (msg.kind) {
      case "HELLO":
        this.model.setStatus("connected");
        break;
      case "STATE_UPDATE":
        this.model.applyStateUpdate(msg);
        break;
      case "ACK": {
        const of = Number(msg.payload["of"]);
        const sent = this.outstanding.get(of);
        if (sent) {
          this.outstanding.delete(of);
          this.model.commandAcked(sent.tag, sent.target);
        }
        break;
      }
      case "NACK": {
        const reason = String(msg.payload["reason"] ?? "unknown");
        const of = Number(msg.payload["of"]);
        const sent = this.outstanding.get(of);
        if (sent) {
          this.outstanding.delete(of);
          this.model.commandNacked(sent.tag, sent.target, reason);
        } else if (HANDSHAKE_REJECTIONS.has(reason)) {
          this.model.setStatus("rejected", reason);
        } else {
          this.model.notice(`unmatched refusal: ${reason}`);
        }
        break;
      }
      case "PING":
        break;
    }
  }

  /**
   * Send a command intent. Returns the encoded frame when it went out,
   * null when it could not be sent.
   */
  sendCommand(intent: CommandIntent): Uint8Array | null {
    const parsed = parseTagName(intent.tag);
    if (!parsed || (parsed.kind !== "MV" && parsed.kind !== "P")) {
      this.model.notice(`${intent.tag} is not an actuator; intent ignored`);
      return null;
    }
    if (!this.channel.open) {
      if (this.queuedIntent === null) {
        this.queuedIntent = intent;
        this.model.notice(`channel closed; ${intent.tag} → ${intent.target} queued`);
      } else {
        this.model.notice(
          `channel closed; ${intent.tag} → ${intent.target} dropped (one already queued)`,
        );
      }
      return null;
    }
    this.commandSeq += 1;
    const msg = commandMessage(this.commandSeq, intent.tag, intent.target, intent.issuedAt);
    const frame = encodeFrame(msg);
    this.outstanding.set(this.commandSeq, { tag: intent.tag, target: intent.target });
    this.channel.send(frame);
    return frame;
  }

  /** Channel re-opened: redo the handshake; a queued intent is dropped
   * with a notice, never silently replayed. */
  onReconnected(): void {
    this.decoder = new FrameDecoder();
    if (this.queuedIntent !== null) {
      const q = this.queuedIntent;
      this.queuedIntent = null;
      this.model.notice(`queued ${q.tag} → ${q.target} dropped after reconnect`);
    }
    this.hello();
  }

  onDisconnected(): void {
    this.model.setStatus("disconnected");
    this.outstanding.clear();
  }
}
