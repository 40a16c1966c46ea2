// Browser bootstrap: one WebSocket, one reducer loop, straight DOM
// rendering. The page never simulates anything; it renders whatever
// the gateway pushes and proposes commands back.

import { decodeFrame, encodeFrame } from "./protocol.js";
import {
  ViewModel,
  banner,
  buildViewModel,
  initialViewModel,
  setConnection,
  takeSeq,
  Role,
} from "./viewmodel.js";
import { availableActions, commandFromInteraction } from "./commands.js";

const params = new URLSearchParams(window.location.search);
const token = params.get("token") ?? "";
const role = (params.get("role") === "viewer" ? "viewer" : "operator") as Role;
const wsUrl =
  params.get("ws") ?? `ws://${window.location.hostname}:${Number(window.location.port || 7452) - 1}`;

let vm: ViewModel = initialViewModel(role);
let socket: WebSocket | null = null;
let backoffMs = 500;

function connect(): void {
  vm = setConnection(vm, "connecting");
  render();
  socket = new WebSocket(wsUrl);

  socket.onopen = () => {
    backoffMs = 500;
    const hello = takeSeq(vm);
    vm = hello.vm;
    socket!.send(encodeFrame("HELLO", hello.seq, vm.lastServerTs, { token, role }));
    const sub = takeSeq(vm);
    vm = sub.vm;
    socket!.send(encodeFrame("SUBSCRIBE", sub.seq, vm.lastServerTs, { patterns: ["*"] }));
  };

  socket.onmessage = (event) => {
    try {
      vm = buildViewModel(vm, decodeFrame(String(event.data).trim()));
    } catch (err) {
      console.warn("dropped frame:", err);
      return;
    }
    render();
  };

  socket.onclose = () => {
    vm = setConnection(vm, "closed");
    render();
    setTimeout(connect, backoffMs);
    backoffMs = Math.min(backoffMs * 2, 15_000);
  };
}

function send(line: string): void {
  if (socket && socket.readyState === WebSocket.OPEN) socket.send(line);
}

function onAction(deviceId: string, action: string, arg?: string): void {
  try {
    const out = commandFromInteraction(vm, deviceId, action, arg);
    vm = out.vm;
    send(out.line);
    render();
  } catch (err) {
    console.warn(err);
  }
}

// -- rendering ----------------------------------------------------------

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function describe(state: Record<string, unknown>): string {
  return Object.entries(state)
    .map(([key, value]) => {
      if (typeof value === "number") return `${key}: ${value.toFixed(1)}`;
      return `${key}: ${value}`;
    })
    .join("  ");
}

function renderSparkline(canvas: HTMLCanvasElement, series: number[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || series.length < 2) return;
  const lo = Math.min(...series);
  const hi = Math.max(...series);
  const span = hi - lo || 1;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.beginPath();
  series.forEach((value, i) => {
    const x = (i / (series.length - 1)) * canvas.width;
    const y = canvas.height - ((value - lo) / span) * (canvas.height - 4) - 2;
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.strokeStyle = "#2b7";
  ctx.lineWidth = 1.5;
  ctx.stroke();
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.textContent = "";

  const level = banner(vm);
  const alarmBar = el("div", `banner banner-${level.toLowerCase()}`);
  alarmBar.textContent =
    level === "None" ? `shop normal — ${vm.connection}` : `${level.toUpperCase()} ALARM`;
  root.appendChild(alarmBar);

  const strip = el("div", "envstrip");
  if (vm.env) {
    const pct = vm.env.batteryCapacityWh > 0 ? (100 * vm.env.batteryWh) / vm.env.batteryCapacityWh : 0;
    strip.appendChild(el("span", "env", `indoor ${vm.env.indoorC.toFixed(1)}°C`));
    strip.appendChild(el("span", "env", `smoke ${(100 * vm.env.smoke).toFixed(0)}%`));
    strip.appendChild(el("span", "env", `mains ${vm.env.mainsAvailable ? "on" : "OUT"}`));
    strip.appendChild(el("span", "env", `solar ${vm.env.solarW.toFixed(0)} W`));
    strip.appendChild(el("span", "env", `battery ${pct.toFixed(0)}%`));
    const canvas = document.createElement("canvas");
    canvas.width = 160;
    canvas.height = 28;
    canvas.className = "sparkline";
    strip.appendChild(canvas);
    renderSparkline(canvas, vm.indoorHistory);
  } else {
    strip.appendChild(el("span", "env", "waiting for telemetry…"));
  }
  root.appendChild(strip);

  const grid = el("div", "grid");
  for (const deviceId of Object.keys(vm.tiles).sort()) {
    const tile = vm.tiles[deviceId]!;
    const card = el("div", `tile${tile.pendingSeq !== null ? " pending" : ""}`);
    card.appendChild(el("div", "tile-id", tile.deviceId));
    card.appendChild(el("div", "tile-kind", tile.kind));
    card.appendChild(el("div", "tile-state", describe(tile.state)));
    const controls = el("div", "controls");
    for (const option of availableActions(tile, vm.role)) {
      const button = document.createElement("button");
      button.textContent = option.label;
      button.disabled = tile.pendingSeq !== null;
      button.onclick = () => onAction(tile.deviceId, option.action, option.arg);
      controls.appendChild(button);
    }
    card.appendChild(controls);
    grid.appendChild(card);
  }
  root.appendChild(grid);
}

connect();
