"""Device state machines for every appliance in the simulated shop.

Each device kind has a closed command set.  Commands are declarative
("SetSpeed High", not "toggle"), so re-applying a satisfied command is a
no-op instead of an oscillation.  The door is the one exception: its
commands are guarded edges of a physical transition graph, and locking
an open door is rejected outright.

All transition functions are pure; callers get a new state back and the
input is never mutated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

DEVICE_ID_RE = re.compile(r"^[a-z0-9-]{1,32}$")

FAN_SPEEDS = ("Off", "Low", "High")
POWER_SOURCES = ("Mains", "Battery")


class DeviceError(Exception):
    """Base class for device command failures."""


class IllegalAction(DeviceError):
    """Action is not part of the target kind's command set."""


class IllegalTransition(DeviceError):
    """Action exists for the kind but is not legal in the current state."""


class ManifestError(Exception):
    """Manifest violates a structural invariant (ids, refs, kinds)."""


class DeviceKind(str, Enum):
    LIGHT = "Light"
    FAN = "Fan"
    WINDOW = "Window"
    AIR_CONDITIONER = "AirConditioner"
    DOOR = "Door"
    SIREN = "Siren"
    FIRE_SPRINKLER = "FireSprinkler"
    SMOKE_DETECTOR = "SmokeDetector"
    FIRE_DETECTOR = "FireDetector"
    MOTION_DETECTOR = "MotionDetector"
    CCTV_CAMERA = "CctvCamera"
    THERMOSTAT = "Thermostat"
    SOLAR_PANEL = "SolarPanel"
    BATTERY = "Battery"
    POWER_METER = "PowerMeter"
    SMOKE_SOURCE = "SmokeSource"
    FIRE_SOURCE = "FireSource"
    PRINTER = "Printer"


@dataclass(frozen=True)
class DeviceState:
    """Snapshot of one device's dynamic fields. Treat as immutable."""

    kind: DeviceKind
    fields: dict[str, Any]

    def get(self, name: str) -> Any:
        return self.fields[name]

    def replace(self, **updates: Any) -> "DeviceState":
        merged = dict(self.fields)
        merged.update(updates)
        return DeviceState(self.kind, merged)


@dataclass(frozen=True)
class Command:
    device_id: str
    action: str
    arg: str | None = None

    def __str__(self) -> str:
        if self.arg is None:
            return f"{self.device_id} {self.action}"
        return f"{self.device_id} {self.action}({self.arg})"


# Default dynamic fields per kind.  Detector/monitor fields are written
# by the environment refresh, never by remote commands.
_DEFAULT_FIELDS: dict[DeviceKind, dict[str, Any]] = {
    DeviceKind.LIGHT: {"on": False, "source": "Mains"},
    DeviceKind.FAN: {"speed": "Off"},
    DeviceKind.WINDOW: {"open": False},
    DeviceKind.AIR_CONDITIONER: {"on": False},
    DeviceKind.DOOR: {"open": False, "locked": False},
    DeviceKind.SIREN: {"on": False},
    DeviceKind.FIRE_SPRINKLER: {"on": False},
    DeviceKind.SMOKE_DETECTOR: {"triggered": False},
    DeviceKind.FIRE_DETECTOR: {"triggered": False},
    DeviceKind.MOTION_DETECTOR: {"armed": True, "motion": False},
    DeviceKind.CCTV_CAMERA: {"on": True},
    DeviceKind.THERMOSTAT: {"reading_c": 20.0},
    DeviceKind.SOLAR_PANEL: {"output_w": 0.0},
    DeviceKind.BATTERY: {"charge_wh": 600.0},
    DeviceKind.POWER_METER: {"reading_w": 0.0},
    DeviceKind.SMOKE_SOURCE: {"active": False},
    DeviceKind.FIRE_SOURCE: {"active": False},
    DeviceKind.PRINTER: {"on": False},
}

# Declarative actions: action name -> field updates (or a callable for
# argument-taking actions).  Absent kinds are read-only sensors.
_SET_ACTIONS: dict[DeviceKind, dict[str, dict[str, Any]]] = {
    DeviceKind.LIGHT: {"TurnOn": {"on": True}, "TurnOff": {"on": False}},
    DeviceKind.WINDOW: {"Open": {"open": True}, "Close": {"open": False}},
    DeviceKind.AIR_CONDITIONER: {"TurnOn": {"on": True}, "TurnOff": {"on": False}},
    DeviceKind.SIREN: {"TurnOn": {"on": True}, "TurnOff": {"on": False}},
    DeviceKind.FIRE_SPRINKLER: {"TurnOn": {"on": True}, "TurnOff": {"on": False}},
    DeviceKind.MOTION_DETECTOR: {"Arm": {"armed": True}, "Disarm": {"armed": False}},
    # Cameras can only be switched back on remotely; the always-on policy
    # makes a remote off switch pointless.
    DeviceKind.CCTV_CAMERA: {"TurnOn": {"on": True}},
    DeviceKind.SMOKE_SOURCE: {"Activate": {"active": True}, "Deactivate": {"active": False}},
    DeviceKind.FIRE_SOURCE: {"Activate": {"active": True}, "Deactivate": {"active": False}},
    DeviceKind.PRINTER: {"TurnOn": {"on": True}, "TurnOff": {"on": False}},
}

DOOR_ACTIONS = ("Open", "Close", "Lock", "Unlock")

SENSOR_KINDS = frozenset(
    {
        DeviceKind.SMOKE_DETECTOR,
        DeviceKind.FIRE_DETECTOR,
        DeviceKind.THERMOSTAT,
        DeviceKind.SOLAR_PANEL,
        DeviceKind.BATTERY,
        DeviceKind.POWER_METER,
    }
)


def default_state(kind: DeviceKind) -> DeviceState:
    return DeviceState(kind, dict(_DEFAULT_FIELDS[kind]))


def kind_actions(kind: DeviceKind) -> frozenset[str]:
    """The closed command set of a kind, ignoring the current state."""
    if kind is DeviceKind.DOOR:
        return frozenset(DOOR_ACTIONS)
    if kind is DeviceKind.FAN:
        return frozenset({"SetSpeed"})
    return frozenset(_SET_ACTIONS.get(kind, {}))


def _door_edges(state: DeviceState) -> dict[str, dict[str, Any]]:
    open_, locked = state.get("open"), state.get("locked")
    if open_:
        return {"Close": {"open": False}}
    if locked:
        return {"Unlock": {"locked": False}}
    return {"Open": {"open": True}, "Lock": {"locked": True}}


def legal_commands(kind: DeviceKind, state: DeviceState) -> frozenset[str]:
    """Actions apply_command would accept for this exact state.

    For declarative kinds this is the whole command set (satisfied
    commands are legal no-ops).  For the door it is the outgoing edges
    of the current state only.
    """
    if state.kind is not kind:
        raise ValueError(f"state kind {state.kind} does not match {kind}")
    if kind is DeviceKind.DOOR:
        return frozenset(_door_edges(state))
    return kind_actions(kind)


def apply_command(state: DeviceState, cmd: Command) -> DeviceState:
    """Run one command through a device's transition table.

    Raises IllegalAction when the action is not in the kind's command
    set, IllegalTransition when it is but the current state forbids it
    (door graph only).
    """
    kind = state.kind
    if cmd.action not in kind_actions(kind):
        raise IllegalAction(f"{kind.value} does not accept {cmd.action!r}")

    if kind is DeviceKind.DOOR:
        edges = _door_edges(state)
        if cmd.action not in edges:
            raise IllegalTransition(
                f"door cannot {cmd.action} while "
                f"{'open' if state.get('open') else 'closed'} and "
                f"{'locked' if state.get('locked') else 'unlocked'}"
            )
        return state.replace(**edges[cmd.action])

    if kind is DeviceKind.FAN:
        if cmd.arg not in FAN_SPEEDS:
            raise IllegalAction(f"SetSpeed arg must be one of {FAN_SPEEDS}, got {cmd.arg!r}")
        return state.replace(speed=cmd.arg)

    return state.replace(**_SET_ACTIONS[kind][cmd.action])


@dataclass
class Device:
    """One manifest entry: identity, kind, initial state, static params."""

    id: str
    kind: DeviceKind
    state: DeviceState
    params: dict[str, Any] = field(default_factory=dict)


class DeviceManifest:
    """Validated, ordered collection of manifest entries."""

    def __init__(self, devices: Iterable[Device]):
        self.devices = list(devices)
        self._by_id = {}
        for dev in self.devices:
            if not DEVICE_ID_RE.match(dev.id):
                raise ManifestError(f"bad device id {dev.id!r}")
            if dev.id in self._by_id:
                raise ManifestError(f"duplicate device id {dev.id!r}")
            self._by_id[dev.id] = dev
        self._check_refs()

    def _check_refs(self) -> None:
        for dev in self.devices:
            backing = dev.params.get("backed_by")
            if backing is None:
                continue
            if dev.kind is not DeviceKind.LIGHT:
                raise ManifestError(f"{dev.id}: only lights may be battery backed")
            target = self._by_id.get(backing)
            if target is None or target.kind is not DeviceKind.BATTERY:
                raise ManifestError(f"{dev.id}: backed_by {backing!r} is not a battery")

    def __len__(self) -> int:
        return len(self.devices)

    def __iter__(self):
        return iter(self.devices)

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._by_id

    def get(self, device_id: str) -> Device:
        return self._by_id[device_id]

    def ids(self) -> list[str]:
        return sorted(self._by_id)

    def initial_states(self) -> dict[str, DeviceState]:
        return {d.id: DeviceState(d.kind, dict(d.state.fields)) for d in self.devices}

    def to_json(self) -> list[dict[str, Any]]:
        return [
            {
                "id": d.id,
                "kind": d.kind.value,
                "state": dict(d.state.fields),
                "params": dict(d.params),
            }
            for d in self.devices
        ]

    @classmethod
    def from_json(cls, doc: Any) -> "DeviceManifest":
        if not isinstance(doc, list):
            raise ManifestError("manifest must be a JSON array of device records")
        devices = []
        for rec in doc:
            try:
                kind = DeviceKind(rec["kind"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ManifestError(f"bad manifest record: {rec!r}") from exc
            state = default_state(kind)
            for key, value in rec.get("state", {}).items():
                if key not in state.fields:
                    raise ManifestError(f"{rec.get('id')}: unknown state field {key!r}")
                state.fields[key] = value
            devices.append(
                Device(
                    id=rec.get("id", ""),
                    kind=kind,
                    state=state,
                    params=dict(rec.get("params", {})),
                )
            )
        return cls(devices)

    @classmethod
    def from_file(cls, path: str) -> "DeviceManifest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def default_manifest() -> DeviceManifest:
    """The shop topology used throughout: 2 cameras, 1 motion detector,
    2 lights (light-1 battery backed and on around the clock), 1 door,
    2 fans, 4 windows, 1 AC, smoke/fire detectors, sprinkler, siren,
    solar panel + battery + power meter, smoke and fire sources, a
    printer, and a thermostat.
    """
    devices: list[Device] = []

    def add(dev_id: str, kind: DeviceKind, params: dict[str, Any] | None = None, **state: Any):
        st = default_state(kind)
        st.fields.update(state)
        devices.append(Device(dev_id, kind, st, params or {}))

    add("cctv-1", DeviceKind.CCTV_CAMERA)
    add("cctv-2", DeviceKind.CCTV_CAMERA)
    add("motion-1", DeviceKind.MOTION_DETECTOR)
    add("light-0", DeviceKind.LIGHT, {"load_w": 10.0})
    add("light-1", DeviceKind.LIGHT, {"load_w": 10.0, "backed_by": "battery-1"}, on=True)
    add("door-1", DeviceKind.DOOR)
    add("fan-1", DeviceKind.FAN)
    add("fan-2", DeviceKind.FAN)
    add("window-1", DeviceKind.WINDOW)
    add("window-2", DeviceKind.WINDOW)
    add("window-3", DeviceKind.WINDOW)
    add("window-4", DeviceKind.WINDOW)
    add("ac-1", DeviceKind.AIR_CONDITIONER)
    add("smoke-detector-1", DeviceKind.SMOKE_DETECTOR)
    add("fire-detector-1", DeviceKind.FIRE_DETECTOR)
    add("sprinkler-1", DeviceKind.FIRE_SPRINKLER)
    add("siren-1", DeviceKind.SIREN)
    add("solar-1", DeviceKind.SOLAR_PANEL)
    add("battery-1", DeviceKind.BATTERY, {"capacity_wh": 600.0})
    add("meter-1", DeviceKind.POWER_METER)
    add("smoke-source-1", DeviceKind.SMOKE_SOURCE)
    add("fire-source-1", DeviceKind.FIRE_SOURCE)
    add("printer-1", DeviceKind.PRINTER)
    add("thermostat-1", DeviceKind.THERMOSTAT)
    return DeviceManifest(devices)
