// Pure view state: a reducer folds incoming frames into tiles, an
// environment strip and an alarm banner. No timers, no sockets, no
// DOM — replaying a recorded frame sequence always yields the same
// model, which is exactly how the tests drive it.

import { ParsedFrame } from "./protocol.js";

export type Role = "operator" | "viewer";
export type Alarm = "None" | "Security" | "Smoke" | "Fire";
export type Connection = "connecting" | "ready" | "closed";

export interface Tile {
  deviceId: string;
  kind: string;
  state: Record<string, unknown>;
  pendingSeq: number | null;
}

export interface EnvStrip {
  indoorC: number;
  outdoorC: number;
  smoke: number;
  fireActive: boolean;
  mainsAvailable: boolean;
  solarW: number;
  batteryWh: number;
  batteryCapacityWh: number;
}

export interface ViewModel {
  connection: Connection;
  sessionId: string | null;
  role: Role;
  tiles: Record<string, Tile>;
  env: EnvStrip | null;
  indoorHistory: number[];
  alarms: { fire: boolean; smoke: boolean; security: boolean };
  nextSeq: number;
  lastServerTs: number;
}

export const HISTORY_LIMIT = 120;

export function initialViewModel(role: Role): ViewModel {
  return {
    connection: "connecting",
    sessionId: null,
    role,
    tiles: {},
    env: null,
    indoorHistory: [],
    alarms: { fire: false, smoke: false, security: false },
    nextSeq: 1,
    lastServerTs: 0,
  };
}

/** Reserve the next client sequence number (HELLO, SUBSCRIBE and every
 * COMMAND all consume one). */
export function takeSeq(vm: ViewModel): { seq: number; vm: ViewModel } {
  return { seq: vm.nextSeq, vm: { ...vm, nextSeq: vm.nextSeq + 1 } };
}

export function banner(vm: ViewModel): Alarm {
  if (vm.alarms.fire) return "Fire";
  if (vm.alarms.smoke) return "Smoke";
  if (vm.alarms.security) return "Security";
  return "None";
}

export function setConnection(vm: ViewModel, connection: Connection): ViewModel {
  return { ...vm, connection };
}

function reduceState(vm: ViewModel, frame: ParsedFrame): ViewModel {
  const deviceId = frame.body.device_id;
  const kind = frame.body.kind;
  const state = frame.body.state;
  if (typeof deviceId !== "string" || typeof kind !== "string" || typeof state !== "object" || state === null) {
    return vm; // tolerate frames from newer servers
  }
  const previous = vm.tiles[deviceId];
  const tile: Tile = {
    deviceId,
    kind,
    state: state as Record<string, unknown>,
    pendingSeq: previous ? previous.pendingSeq : null,
  };
  return { ...vm, tiles: { ...vm.tiles, [deviceId]: tile } };
}

function reduceEvent(vm: ViewModel, frame: ParsedFrame): ViewModel {
  const name = frame.body.name;
  const payload = frame.body.payload as Record<string, unknown> | undefined;
  if (name === "env" && payload) {
    const env: EnvStrip = {
      indoorC: Number(payload.indoor_c),
      outdoorC: Number(payload.outdoor_c),
      smoke: Number(payload.smoke),
      fireActive: Boolean(payload.fire_active),
      mainsAvailable: Boolean(payload.mains_available),
      solarW: Number(payload.solar_w),
      batteryWh: Number(payload.battery_wh),
      batteryCapacityWh: Number(payload.battery_capacity_wh),
    };
    const indoorHistory = [...vm.indoorHistory, env.indoorC].slice(-HISTORY_LIMIT);
    return { ...vm, env, indoorHistory };
  }
  if (name === "fire" || name === "smoke" || name === "security") {
    const active = Boolean(payload && payload.active);
    return { ...vm, alarms: { ...vm.alarms, [name]: active } };
  }
  return vm;
}

function clearPending(vm: ViewModel, refSeq: unknown): ViewModel {
  if (typeof refSeq !== "number") return vm;
  let changed = false;
  const tiles: Record<string, Tile> = {};
  for (const [id, tile] of Object.entries(vm.tiles)) {
    if (tile.pendingSeq === refSeq) {
      tiles[id] = { ...tile, pendingSeq: null };
      changed = true;
    } else {
      tiles[id] = tile;
    }
  }
  return changed ? { ...vm, tiles } : vm;
}

/** Fold one incoming frame into the model. Unknown content is ignored
 * rather than fatal so older dashboards survive newer gateways. */
export function buildViewModel(prev: ViewModel, frame: ParsedFrame): ViewModel {
  const vm = { ...prev, lastServerTs: frame.tsMs };
  switch (frame.type) {
    case "WELCOME": {
      const sessionId = frame.body.session_id;
      const role = frame.body.role;
      return {
        ...vm,
        connection: "ready",
        sessionId: typeof sessionId === "string" ? sessionId : null,
        role: role === "viewer" ? "viewer" : "operator",
      };
    }
    case "STATE":
      return reduceState(vm, frame);
    case "EVENT":
      return reduceEvent(vm, frame);
    case "ACK":
    case "NACK":
      return clearPending(vm, frame.body.ref_seq);
    default:
      return vm; // PONG and anything server-initiated we do not track
  }
}

export function foldFrames(vm: ViewModel, lines: string[], decode: (line: string) => ParsedFrame): ViewModel {
  let model = vm;
  for (const line of lines) {
    if (line.trim().length === 0) continue;
    model = buildViewModel(model, decode(line));
  }
  return model;
}
