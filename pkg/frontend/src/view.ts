/**
 * DOM rendering of the plant mimic: six stage columns in flow order,
 * alarm banner on top, level gauges for tanks, flow/analyzer readouts,
 * and toggle controls for valves and pumps.
 */

import { HmiViewModel, Widget } from "./model.js";
import type { CommandIntent } from "./session.js";

export interface ViewCallbacks {
  onIntent: (intent: CommandIntent) => void;
}

const STAGE_NAMES: Record<number, string> = {
  1: "Raw intake",
  2: "Chemical dosing",
  3: "Ultrafiltration",
  4: "Dechlorination",
  5: "Reverse osmosis",
  6: "Product / backwash",
};

// Gauge scale per level sensor; anything unknown renders unscaled.
const LEVEL_SPANS: Record<string, number> = {
  LIT101: 1500,
  LIT201: 1200,
  LIT202: 60,
  LIT203: 60,
  LIT204: 60,
  LIT301: 1200,
  LIT401: 1200,
  LIT402: 60,
  LIT501: 50,
  LIT601: 2000,
  LIT602: 800,
};

export class MimicView {
  private root: HTMLElement;
  private model: HmiViewModel;
  private callbacks: ViewCallbacks;
  private widgetEls = new Map<string, HTMLElement>();
  private bannerEl: HTMLElement;
  private statusEl: HTMLElement;
  private columnsEl: HTMLElement;
  private toastHost: HTMLElement;
  private shownToasts = 0;

  constructor(root: HTMLElement, model: HmiViewModel, callbacks: ViewCallbacks) {
    this.root = root;
    this.model = model;
    this.callbacks = callbacks;
    this.root.innerHTML = "";
    this.statusEl = this.el("div", "status-line");
    this.bannerEl = this.el("div", "alarm-banner");
    this.columnsEl = this.el("div", "stage-columns");
    this.toastHost = this.el("div", "toast-host");
    this.root.append(this.statusEl, this.bannerEl, this.columnsEl, this.toastHost);
  }

  private el(tag: string, cls: string): HTMLElement {
    const node = this.root.ownerDocument.createElement(tag);
    node.className = cls;
    return node;
  }

  /** Re-render everything from the current view model. */
  render(): void {
    this.renderStatus();
    this.renderAlarms();
    this.renderWidgets();
    this.renderToasts();
  }

  private renderStatus(): void {
    const detail = this.model.statusDetail ? ` (${this.model.statusDetail})` : "";
    this.statusEl.textContent =
      `twin: ${this.model.status}${detail} | t=${this.model.simTime.toFixed(0)}s ` +
      `| state seq ${this.model.lastStateSeq}`;
    this.statusEl.dataset.status = this.model.status;
  }

  private renderAlarms(): void {
    if (this.model.alarms.length === 0) {
      this.bannerEl.textContent = "no active alarms";
      this.bannerEl.dataset.active = "false";
      return;
    }
    this.bannerEl.dataset.active = "true";
    this.bannerEl.textContent = this.model.alarms
      .map((a) => `${a.condition} ${a.subject}`)
      .join("   ");
  }

  private renderWidgets(): void {
    for (const stage of this.model.stageNumbers()) {
      for (const widget of this.model.widgetsForStage(stage)) {
        let node = this.widgetEls.get(widget.tag);
        if (!node) {
          node = this.buildWidget(widget);
          this.widgetEls.set(widget.tag, node);
          this.stageColumn(stage).appendChild(node);
        }
        this.updateWidget(node, widget);
      }
    }
  }

  private stageColumn(stage: number): HTMLElement {
    const id = `stage-${stage}`;
    let column = this.columnsEl.querySelector<HTMLElement>(`#${id} .widgets`);
    if (column) return column;
    const wrap = this.el("section", "stage-column");
    wrap.id = id;
    const title = this.el("h2", "stage-title");
    title.textContent = `${stage}. ${STAGE_NAMES[stage] ?? "stage " + stage}`;
    const widgets = this.el("div", "widgets");
    wrap.append(title, widgets);
    this.columnsEl.appendChild(wrap);
    return widgets;
  }

  private buildWidget(widget: Widget): HTMLElement {
    const node = this.el("div", `widget widget-${widget.kind.toLowerCase()}`);
    node.dataset.tag = widget.tag;
    const label = this.el("span", "tag-label");
    label.textContent = widget.tag;
    node.appendChild(label);
    if (widget.kind === "LIT") {
      const gauge = this.el("div", "gauge");
      gauge.appendChild(this.el("div", "gauge-fill"));
      node.appendChild(gauge);
      node.appendChild(this.el("span", "reading"));
    } else if (widget.kind === "FIT" || widget.kind === "AIT") {
      node.appendChild(this.el("span", "reading"));
    } else {
      const active = widget.kind === "MV" ? "OPEN" : "ON";
      const idle = widget.kind === "MV" ? "CLOSED" : "OFF";
      for (const target of [active, idle]) {
        const button = this.el("button", "toggle") as HTMLButtonElement;
        button.textContent = target;
        button.dataset.target = target;
        button.addEventListener("click", () => {
          this.callbacks.onIntent({ tag: widget.tag, target, issuedAt: Date.now() });
        });
        node.appendChild(button);
      }
      node.appendChild(this.el("span", "position"));
    }
    return node;
  }

  private updateWidget(node: HTMLElement, widget: Widget): void {
    if (widget.kind === "LIT") {
      const fill = node.querySelector<HTMLElement>(".gauge-fill");
      const span = LEVEL_SPANS[widget.tag];
      if (fill && widget.value !== null && widget.value >= 0 && span) {
        fill.style.height = `${Math.min(100, (widget.value / span) * 100)}%`;
      }
      const reading = node.querySelector<HTMLElement>(".reading");
      if (reading) reading.textContent = this.formatReading(widget, "gal");
    } else if (widget.kind === "FIT" || widget.kind === "AIT") {
      const reading = node.querySelector<HTMLElement>(".reading");
      const unit = widget.kind === "FIT" ? "gal/min" : "";
      if (reading) reading.textContent = this.formatReading(widget, unit);
    } else {
      const position = node.querySelector<HTMLElement>(".position");
      if (position) {
        position.textContent = widget.pendingTarget
          ? `${widget.position ?? "?"} → ${widget.pendingTarget}…`
          : widget.position ?? "?";
      }
      for (const button of node.querySelectorAll<HTMLButtonElement>("button.toggle")) {
        button.disabled = !this.model.controlsEnabled;
        button.dataset.current = String(button.dataset.target === widget.position);
      }
    }
  }

  private formatReading(widget: Widget, unit: string): string {
    if (widget.value === null) return "—";
    if (widget.value === -1) return "OFFLINE";
    const text = widget.value.toFixed(widget.kind === "LIT" ? 0 : 2);
    return unit ? `${text} ${unit}` : text;
  }

  private renderToasts(): void {
    while (this.shownToasts < this.model.toasts.length) {
      const toast = this.el("div", "toast");
      toast.textContent = this.model.toasts[this.shownToasts];
      this.toastHost.appendChild(toast);
      this.shownToasts += 1;
      const doomed = toast;
      setTimeout(() => doomed.remove(), 6000);
    }
  }
}
