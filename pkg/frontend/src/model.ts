/**
 * View model for the plant mimic: one widget per tag, alarms, connection
 * status, and the last applied state sequence number.
 *
 * The widget set mirrors whatever tag set the twin publishes (the
 * reference plant's 68 tags); kinds and stages are decoded from the tag
 * names. State updates apply only with a strictly newer seq — stale
 * snapshots can never regress the view.
 */

import type { ChannelMessage } from "./protocol.js";

export type TagKind = "LIT" | "FIT" | "AIT" | "MV" | "P";

const TAG_NAME = /^(LIT|FIT|AIT|MV|P)([1-9])(\d{2})$/;

export interface Widget {
  tag: string;
  kind: TagKind;
  stage: number;
  /** latest numeric reading (sensors) */
  value: number | null;
  /** latest position string (actuators) */
  position: string | null;
  /** true for valves and pumps: the widget renders a control */
  isControl: boolean;
  /** target commanded and ACKed but not yet confirmed by a state update */
  pendingTarget: string | null;
}

export interface Alarm {
  subject: string;
  condition: string;
}

export type ConnectionStatus = "disconnected" | "connecting" | "connected" | "rejected";

export function parseTagName(name: string): { kind: TagKind; stage: number } | null {
  const m = TAG_NAME.exec(name);
  if (!m) return null;
  return { kind: m[1] as TagKind, stage: parseInt(m[2], 10) };
}

export class HmiViewModel {
  readonly widgets = new Map<string, Widget>();
  lastStateSeq = -1;
  simTime = 0;
  status: ConnectionStatus = "disconnected";
  statusDetail = "";
  alarms: Alarm[] = [];
  toasts: string[] = [];
  notices: string[] = [];

  /** Controls are usable only while the channel is live. */
  get controlsEnabled(): boolean {
    return this.status === "connected";
  }

  setStatus(status: ConnectionStatus, detail = ""): void {
    this.status = status;
    this.statusDetail = detail;
  }

  toast(text: string): void {
    this.toasts.push(text);
  }

  notice(text: string): void {
    this.notices.push(text);
  }

  private ensureWidget(tag: string): Widget | null {
    let widget = this.widgets.get(tag);
    if (widget) return widget;
    const parsed = parseTagName(tag);
    if (!parsed) return null;
    widget = {
      tag,
      kind: parsed.kind,
      stage: parsed.stage,
      value: null,
      position: null,
      isControl: parsed.kind === "MV" || parsed.kind === "P",
      pendingTarget: null,
    };
    this.widgets.set(tag, widget);
    return widget;
  }

  /**
   * Apply a STATE_UPDATE. Returns false (view untouched) when the seq is
   * not strictly newer than the last applied one.
   */
  applyStateUpdate(msg: ChannelMessage): boolean {
    if (msg.kind !== "STATE_UPDATE") return false;
    if (msg.seq <= this.lastStateSeq) return false;
    const tags = msg.payload["tags"];
    if (typeof tags !== "object" || tags === null) return false;
    this.lastStateSeq = msg.seq;
    const simTime = msg.payload["sim_time"];
    if (typeof simTime === "number") this.simTime = simTime;

    for (const [tag, raw] of Object.entries(tags as Record<string, unknown>)) {
      const widget = this.ensureWidget(tag);
      if (!widget) continue;
      if (typeof raw === "number") {
        widget.value = raw;
      } else if (typeof raw === "string") {
        widget.position = raw;
        if (widget.pendingTarget === raw) widget.pendingTarget = null;
      }
    }

    const alarms = msg.payload["alarms"];
    this.alarms = [];
    if (Array.isArray(alarms)) {
      for (const row of alarms) {
        if (Array.isArray(row) && row.length >= 2) {
          this.alarms.push({ subject: String(row[0]), condition: String(row[1]) });
        }
      }
    }
    return true;
  }

  /** An ACK arrived: show the commanded target as pending until a state
   * update confirms it. */
  commandAcked(tag: string, target: string): void {
    const widget = this.widgets.get(tag);
    if (widget) widget.pendingTarget = target;
  }

  commandNacked(tag: string, target: string, reason: string): void {
    this.toast(`${tag} → ${target} refused: ${reason}`);
  }

  stageNumbers(): number[] {
    const stages = new Set<number>();
    for (const w of this.widgets.values()) stages.add(w.stage);
    return [...stages].sort((a, b) => a - b);
  }

  widgetsForStage(stage: number): Widget[] {
    return [...this.widgets.values()]
      .filter((w) => w.stage === stage)
      .sort((a, b) => a.tag.localeCompare(b.tag));
  }
}
