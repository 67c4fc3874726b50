/**
 * Bootstrap: login gate, websocket channel with backoff reconnect, view
 * wiring. The login accepts the configured operator credentials — there
 * is deliberately no lockout or server-side account system; real access
 * control is the gateway's network allow-list.
 */

import { WebSocketChannel, backoffDelay } from "./channel.js";
import { HmiViewModel } from "./model.js";
import { HmiSession } from "./session.js";
import { MimicView } from "./view.js";

const OPERATOR_CREDENTIALS = { username: "support", password: "Password123" };

function defaultGatewayUrl(): string {
  const host = location.hostname || "127.0.0.1";
  return `ws://${host}:8844/`;
}

function start(): void {
  const app = document.getElementById("app");
  const login = document.getElementById("login");
  if (!app || !login) throw new Error("missing app scaffold");

  const form = login.querySelector("form");
  const error = login.querySelector<HTMLElement>(".login-error");
  form?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form as HTMLFormElement);
    const user = String(data.get("username") ?? "");
    const pass = String(data.get("password") ?? "");
    if (user !== OPERATOR_CREDENTIALS.username || pass !== OPERATOR_CREDENTIALS.password) {
      if (error) error.textContent = "invalid credentials";
      return;
    }
    const url = String(data.get("gateway") || defaultGatewayUrl());
    login.style.display = "none";
    app.style.display = "block";
    connect(app, url);
  });
}

function connect(root: HTMLElement, url: string): void {
  const model = new HmiViewModel();
  let session: HmiSession | undefined;
  const view = new MimicView(root, model, {
    onIntent: (intent) => {
      session?.sendCommand(intent);
      view.render();
    },
  });

  let attempts = 0;
  let everConnected = false;

  const open = () => {
    const channel = new WebSocketChannel(url, {
      onOpen: () => {
        attempts = 0;
        if (everConnected) session?.onReconnected();
        else session?.hello();
        everConnected = true;
        view.render();
      },
      onBytes: (data) => {
        session?.receive(data);
        view.render();
      },
      onClose: () => {
        session?.onDisconnected();
        view.render();
        if (model.status === "rejected") return; // no point retrying an allow-list reject
        const delay = backoffDelay(attempts);
        attempts += 1;
        setTimeout(open, delay);
      },
    });
    if (session) session.attachChannel(channel);
    else session = new HmiSession(model, channel);
  };

  open();
  view.render();
}

document.addEventListener("DOMContentLoaded", start);
