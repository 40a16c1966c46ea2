"""Layered automation rules for the shop.

Rules live in five priority layers (fire > smoke > security > occupancy
> climate).  Evaluation resolves conflicts per actuator at the *target*
level: every firing rule claims the actuators it cares about in layer
order, and only the winning, still-unsatisfied targets turn into
commands.  Claiming happens even when the winner's target is already
satisfied, which is what keeps a lower layer from flipping an actuator
back (climate may never shut a window the fire layer is holding open).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import IntEnum
from typing import Any, Callable

from .devices import Command, DeviceKind, DeviceState
from .environment import EnvState, light_is_powered


class PolicyError(Exception):
    pass


class NonFiniteTemperature(PolicyError):
    pass


class UnknownDevice(PolicyError):
    """A rule references a device id absent from the world."""


class Layer(IntEnum):
    """Priority classes; lower value wins conflicts."""

    FIRE = 0
    SMOKE = 1
    SECURITY = 2
    OCCUPANCY = 3
    CLIMATE = 4

    @classmethod
    def parse(cls, name: str) -> "Layer":
        try:
            return cls[name.upper()]
        except KeyError:
            raise PolicyError(f"unknown layer {name!r}") from None


@dataclass(frozen=True)
class ClimateThresholds:
    all_off_below_c: float = 10.0
    windows_open_from_c: float = 11.0
    fan_low_from_c: float = 12.0
    fan_band_top_c: float = 15.0
    ac_on_above_c: float = 20.0
    fan_drop_above_c: float = 22.0

    def __post_init__(self) -> None:
        seq = [
            self.all_off_below_c,
            self.windows_open_from_c,
            self.fan_low_from_c,
            self.fan_band_top_c,
            self.ac_on_above_c,
            self.fan_drop_above_c,
        ]
        if any(a >= b for a, b in zip(seq, seq[1:])):
            raise PolicyError(f"thresholds must be strictly increasing, got {seq}")


@dataclass(frozen=True)
class ActuatorTargets:
    """Desired positions per actuator group; None means no preference."""

    windows: str | None = None   # "Open" | "Closed"
    fan: str | None = None       # "Off" | "Low" | "High"
    ac: bool | None = None
    lights: bool | None = None
    siren: bool | None = None
    sprinkler: bool | None = None
    printer: bool | None = None
    cctv: bool | None = None

    def items(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value


Condition = Callable[[EnvState, dict[str, DeviceState]], bool]
TargetsFn = Callable[[EnvState], ActuatorTargets]


@dataclass(frozen=True)
class Rule:
    id: str
    layer: Layer
    condition: Condition
    targets: ActuatorTargets | TargetsFn

    def targets_for(self, env: EnvState) -> ActuatorTargets:
        if callable(self.targets):
            return self.targets(env)
        return self.targets


@dataclass(frozen=True)
class PolicySet:
    rules: tuple[Rule, ...]
    thresholds: ClimateThresholds = ClimateThresholds()


def climate_targets(indoor_c: float, th: ClimateThresholds | None = None) -> ActuatorTargets:
    """Resolved temperature band table.

    The bands tile the whole axis: below 11 everything is off (the
    unspecified 10..11 gap is folded into the all-off band), 11..12
    opens windows, 12..15 adds a low fan, above 15 the fan goes high,
    above 20 the windows close and the AC takes over, and above 22 the
    fan falls back to low.
    """
    th = th or ClimateThresholds()
    if not math.isfinite(indoor_c):
        raise NonFiniteTemperature(f"indoor temperature is {indoor_c!r}")
    t = indoor_c
    if t < th.windows_open_from_c:
        return ActuatorTargets(windows="Closed", fan="Off", ac=False)
    if t < th.fan_low_from_c:
        return ActuatorTargets(windows="Open", fan="Off", ac=False)
    if t <= th.fan_band_top_c:
        return ActuatorTargets(windows="Open", fan="Low", ac=False)
    if t <= th.ac_on_above_c:
        return ActuatorTargets(windows="Open", fan="High", ac=False)
    if t <= th.fan_drop_above_c:
        return ActuatorTargets(windows="Closed", fan="High", ac=True)
    return ActuatorTargets(windows="Closed", fan="Low", ac=True)


def _doors(devices: dict[str, DeviceState]) -> list[DeviceState]:
    return [d for d in devices.values() if d.kind is DeviceKind.DOOR]


def shop_locked(devices: dict[str, DeviceState]) -> bool:
    doors = _doors(devices)
    return bool(doors) and all(not d.get("open") and d.get("locked") for d in doors)


def shop_open(devices: dict[str, DeviceState]) -> bool:
    doors = _doors(devices)
    return bool(doors) and all(d.get("open") and not d.get("locked") for d in doors)


def _fire_detected(env: EnvState, devices: dict[str, DeviceState]) -> bool:
    return any(
        d.get("triggered") for d in devices.values() if d.kind is DeviceKind.FIRE_DETECTOR
    )


def _smoke_detected(env: EnvState, devices: dict[str, DeviceState]) -> bool:
    return any(
        d.get("triggered") for d in devices.values() if d.kind is DeviceKind.SMOKE_DETECTOR
    )


def _motion_seen(devices: dict[str, DeviceState]) -> bool:
    return any(
        d.get("motion") for d in devices.values() if d.kind is DeviceKind.MOTION_DETECTOR
    )


def builtin_policy(thresholds: ClimateThresholds | None = None) -> PolicySet:
    """The embedded rule set.

    fire        detector tripped: sprinkler and siren on, windows open,
                everything else powered down (the battery-backed light
                keeps its around-the-clock exemption, and the siren and
                sprinkler are naturally exempt from "all off").
    smoke       smoke without fire: siren on, windows open.
    security    locked shop plus motion: siren on.
    occupancy   open shop lights up; a locked shop powers down lights
                (battery-backed one excepted), fans, windows, AC and
                printer.  Cameras run around the clock.
    climate     the temperature band table, active only while the shop
                is unlocked so it cannot fight the closing-down rule.
    """
    th = thresholds or ClimateThresholds()
    rules = (
        Rule(
            id="fire-response",
            layer=Layer.FIRE,
            condition=_fire_detected,
            targets=ActuatorTargets(
                sprinkler=True,
                siren=True,
                windows="Open",
                fan="Off",
                ac=False,
                lights=False,
                printer=False,
                cctv=False,
            ),
        ),
        Rule(
            id="smoke-alarm",
            layer=Layer.SMOKE,
            condition=lambda env, devs: _smoke_detected(env, devs)
            and not _fire_detected(env, devs),
            targets=ActuatorTargets(siren=True, windows="Open"),
        ),
        Rule(
            id="security-motion",
            layer=Layer.SECURITY,
            condition=lambda env, devs: shop_locked(devs) and _motion_seen(devs),
            targets=ActuatorTargets(siren=True),
        ),
        Rule(
            id="occupancy-open",
            layer=Layer.OCCUPANCY,
            condition=lambda env, devs: shop_open(devs),
            targets=ActuatorTargets(lights=True),
        ),
        Rule(
            id="occupancy-closed",
            layer=Layer.OCCUPANCY,
            condition=lambda env, devs: shop_locked(devs),
            targets=ActuatorTargets(
                lights=False, fan="Off", windows="Closed", ac=False, printer=False
            ),
        ),
        Rule(
            id="cctv-always-on",
            layer=Layer.OCCUPANCY,
            condition=lambda env, devs: True,
            targets=ActuatorTargets(cctv=True),
        ),
        Rule(
            id="climate-bands",
            layer=Layer.CLIMATE,
            condition=lambda env, devs: not any(d.get("locked") for d in _doors(devs)),
            targets=lambda env: climate_targets(env.indoor_c, th),
        ),
    )
    return PolicySet(rules=rules, thresholds=th)


# Actuator groups: target field -> (device kind, state field the target
# compares against).
_GROUPS: dict[str, tuple[DeviceKind, str]] = {
    "windows": (DeviceKind.WINDOW, "open"),
    "fan": (DeviceKind.FAN, "speed"),
    "ac": (DeviceKind.AIR_CONDITIONER, "on"),
    "lights": (DeviceKind.LIGHT, "on"),
    "siren": (DeviceKind.SIREN, "on"),
    "sprinkler": (DeviceKind.FIRE_SPRINKLER, "on"),
    "printer": (DeviceKind.PRINTER, "on"),
    "cctv": (DeviceKind.CCTV_CAMERA, "on"),
}


def _command_toward(
    group: str, device_id: str, dev: DeviceState, target: Any
) -> Command | None:
    """Command moving one device to its target, or None when satisfied
    (or unreachable: cameras have no off switch, so a False target only
    holds the claim)."""
    if group == "windows":
        if dev.get("open") == (target == "Open"):
            return None
        return Command(device_id, "Open" if target == "Open" else "Close")
    if group == "fan":
        if dev.get("speed") == target:
            return None
        return Command(device_id, "SetSpeed", target)
    if group == "cctv":
        if target is True and not dev.get("on"):
            return Command(device_id, "TurnOn")
        return None
    if dev.get("on") == target:
        return None
    return Command(device_id, "TurnOn" if target else "TurnOff")


def evaluate(
    policy: PolicySet,
    env: EnvState,
    devices: dict[str, DeviceState],
    device_params: dict[str, dict[str, Any]] | None = None,
) -> list[tuple[Layer, Command]]:
    """Commands that move the world toward the winning targets.

    Satisfied targets emit nothing, so a world already in position
    evaluates to an empty list.
    """
    return [(layer, cmd) for _, layer, cmd in evaluate_detailed(policy, env, devices, device_params)]


def evaluate_detailed(
    policy: PolicySet,
    env: EnvState,
    devices: dict[str, DeviceState],
    device_params: dict[str, dict[str, Any]] | None = None,
) -> list[tuple[str, Layer, Command]]:
    """Like evaluate, with the winning rule id attached to each command."""
    params_by_id = device_params or {}

    firing = [
        (idx, rule)
        for idx, rule in enumerate(policy.rules)
        if rule.condition(env, devices)
    ]
    # Layer beats policy position; position breaks ties inside a layer.
    firing.sort(key=lambda pair: (pair[1].layer, pair[0]))

    claimed: dict[str, tuple[str, Layer, Any, str]] = {}
    for _, rule in firing:
        targets = rule.targets_for(env)
        for group, target in targets.items():
            kind, _ = _GROUPS[group]
            for dev_id in sorted(devices):
                if devices[dev_id].kind is not kind or dev_id in claimed:
                    continue
                claimed[dev_id] = (rule.id, rule.layer, target, group)

    out: list[tuple[str, Layer, Command]] = []
    for dev_id in sorted(claimed):
        rule_id, layer, target, group = claimed[dev_id]
        dev = devices[dev_id]
        if group == "lights":
            exempt = params_by_id.get(dev_id, {}).get("backed_by") is not None
            if target is False and exempt:
                continue  # the battery-backed light stays on around the clock
            if target is True and not light_is_powered(dev_id, devices, params_by_id, env):
                continue  # no supply; a TurnOn would just flip back off
        cmd = _command_toward(group, dev_id, dev, target)
        if cmd is not None:
            out.append((rule_id, layer, cmd))
    return out


def resolve(commands: list[tuple[Layer, Command]]) -> list[Command]:
    """Collapse raw (layer, command) pairs to one command per device:
    highest-priority layer wins, earliest entry breaks ties, output
    sorted by device id."""
    winners: dict[str, tuple[Layer, int, Command]] = {}
    for position, (layer, cmd) in enumerate(commands):
        held = winners.get(cmd.device_id)
        if held is None or (layer, position) < (held[0], held[1]):
            winners[cmd.device_id] = (layer, position, cmd)
    return [winners[dev_id][2] for dev_id in sorted(winners)]


# ---------------------------------------------------------------------------
# Policy override files: a JSON rule list with flat `field op literal`
# conditions joined by AND.

_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}

_ENV_FIELDS = frozenset(f.name for f in fields(EnvState))


def _compile_clause(clause: dict[str, Any]) -> Condition:
    try:
        path, op_name, literal = clause["field"], clause["op"], clause["value"]
    except (KeyError, TypeError):
        raise PolicyError(f"clause needs field/op/value: {clause!r}") from None
    if op_name not in _OPS:
        raise PolicyError(f"unknown operator {op_name!r}")
    op = _OPS[op_name]

    if path.startswith("env."):
        attr = path[4:]
        if attr not in _ENV_FIELDS:
            raise PolicyError(f"unknown env field {attr!r}")
        return lambda env, devs: op(getattr(env, attr), literal)

    dev_id, _, field_name = path.partition(".")
    if not field_name:
        raise PolicyError(f"condition field must be 'env.<f>' or '<device>.<f>': {path!r}")

    def check(env: EnvState, devs: dict[str, DeviceState]) -> bool:
        if dev_id not in devs:
            raise UnknownDevice(f"rule condition references unknown device {dev_id!r}")
        dev_fields = devs[dev_id].fields
        if field_name not in dev_fields:
            raise PolicyError(f"{dev_id} has no field {field_name!r}")
        return op(dev_fields[field_name], literal)

    return check


def _compile_condition(clauses: list[dict[str, Any]]) -> Condition:
    compiled = [_compile_clause(c) for c in clauses]
    return lambda env, devs: all(c(env, devs) for c in compiled)


def _parse_targets(doc: dict[str, Any]) -> ActuatorTargets:
    unknown = set(doc) - set(_GROUPS)
    if unknown:
        raise PolicyError(f"unknown target group(s): {sorted(unknown)}")
    values: dict[str, Any] = {}
    for group, value in doc.items():
        if group == "windows" and value not in ("Open", "Closed"):
            raise PolicyError(f"windows target must be Open/Closed, got {value!r}")
        if group == "fan" and value not in ("Off", "Low", "High"):
            raise PolicyError(f"fan target must be Off/Low/High, got {value!r}")
        if group not in ("windows", "fan") and not isinstance(value, bool):
            raise PolicyError(f"{group} target must be a boolean, got {value!r}")
        values[group] = value
    return ActuatorTargets(**values)


def load_policy(doc: Any, thresholds: ClimateThresholds | None = None) -> PolicySet:
    """Build a PolicySet from an override document (JSON rule list)."""
    if not isinstance(doc, list):
        raise PolicyError("policy file must be a JSON list of rules")
    rules = []
    seen_ids = set()
    for rec in doc:
        if not isinstance(rec, dict):
            raise PolicyError(f"rule must be an object: {rec!r}")
        rule_id = rec.get("id")
        if not rule_id or rule_id in seen_ids:
            raise PolicyError(f"rules need unique non-empty ids: {rec!r}")
        seen_ids.add(rule_id)
        rules.append(
            Rule(
                id=rule_id,
                layer=Layer.parse(rec.get("layer", "")),
                condition=_compile_condition(rec.get("when", [])),
                targets=_parse_targets(rec.get("targets", {})),
            )
        )
    return PolicySet(rules=tuple(rules), thresholds=thresholds or ClimateThresholds())
