// Interaction surface: which controls each tile renders, and the
// canonical COMMAND frame a click produces. The action tables mirror
// the gateway's device state machines so an illegal action is never
// offered in the first place (a viewer gets no controls at all).

import { encodeFrame } from "./protocol.js";
import { Tile, ViewModel, takeSeq } from "./viewmodel.js";

export interface ActionOption {
  action: string;
  arg?: string;
  label: string;
}

const FAN_SPEEDS = ["Off", "Low", "High"] as const;

function onOff(on: boolean, offLabel = "turn off", onLabel = "turn on"): ActionOption[] {
  return on ? [{ action: "TurnOff", label: offLabel }] : [{ action: "TurnOn", label: onLabel }];
}

export function availableActions(tile: Tile, role: string): ActionOption[] {
  if (role !== "operator") return [];
  const state = tile.state;
  switch (tile.kind) {
    case "Light":
    case "AirConditioner":
    case "Siren":
    case "FireSprinkler":
    case "Printer":
      return onOff(Boolean(state.on));
    case "CctvCamera":
      // cameras only have a remote power-on
      return state.on ? [] : [{ action: "TurnOn", label: "turn on" }];
    case "Window":
      return state.open
        ? [{ action: "Close", label: "close" }]
        : [{ action: "Open", label: "open" }];
    case "Door":
      if (state.open) return [{ action: "Close", label: "close" }];
      if (state.locked) return [{ action: "Unlock", label: "unlock" }];
      return [
        { action: "Open", label: "open" },
        { action: "Lock", label: "lock" },
      ];
    case "Fan":
      return FAN_SPEEDS.filter((s) => s !== state.speed).map((s) => ({
        action: "SetSpeed",
        arg: s,
        label: `speed ${s.toLowerCase()}`,
      }));
    case "MotionDetector":
      return state.armed
        ? [{ action: "Disarm", label: "disarm" }]
        : [{ action: "Arm", label: "arm" }];
    case "SmokeSource":
    case "FireSource":
      return state.active
        ? [{ action: "Deactivate", label: "stop" }]
        : [{ action: "Activate", label: "start" }];
    default:
      return []; // read-only sensors
  }
}

export interface OutboundCommand {
  vm: ViewModel;
  line: string;
}

/** Build the COMMAND frame for a control click and mark the tile
 * pending until its ACK/NACK arrives. */
export function commandFromInteraction(
  vm: ViewModel,
  deviceId: string,
  action: string,
  arg?: string,
): OutboundCommand {
  const tile = vm.tiles[deviceId];
  if (!tile) throw new Error(`no tile for ${deviceId}`);
  const offered = availableActions(tile, vm.role).some(
    (opt) => opt.action === action && (opt.arg === undefined || opt.arg === arg),
  );
  if (!offered) throw new Error(`${action} is not available for ${deviceId}`);

  const { seq, vm: bumped } = takeSeq(vm);
  const body: Record<string, unknown> = { device_id: deviceId, action };
  if (arg !== undefined) body.arg = arg;
  const line = encodeFrame("COMMAND", seq, vm.lastServerTs, body);
  const tiles = { ...bumped.tiles, [deviceId]: { ...tile, pendingSeq: seq } };
  return { vm: { ...bumped, tiles }, line };
}
