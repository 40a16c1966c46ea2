"""World ownership: the tick loop, the event log, replay and snapshots.

Every tick runs the same phase order: inject, step the environment,
refresh sensors, decide, act, log.  Injections (scenario events and
gateway commands alike) are the only outside input, and they are all
recorded in the log, so replaying a log reproduces the final world
field for field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

from . import canon
from .devices import (
    Command,
    DeviceError,
    DeviceKind,
    DeviceManifest,
    DeviceState,
    apply_command,
    default_manifest,
)
from .environment import EnvParams, EnvState, refresh_sensors, step_environment
from .policy import PolicySet, builtin_policy, evaluate_detailed, load_policy, resolve


class SimError(Exception):
    pass


class InvalidScenario(SimError):
    pass


class InjectionAfterEnd(InvalidScenario):
    pass


class LogCorrupt(SimError):
    pass


class SchemaMismatch(SimError):
    pass


SNAPSHOT_SCHEMA = "shopsim-world-v1"

INJECTION_KINDS = ("command", "motion", "mains", "outdoor_c")


@dataclass(frozen=True)
class Injection:
    """One scripted or remote event, normalized for the log.

    doc forms:
      {"kind": "command", "device": id, "action": name, "arg": str|null}
      {"kind": "motion", "device": id}
      {"kind": "mains", "available": bool}
      {"kind": "outdoor_c", "value": number}
    """

    tick: int
    doc: dict[str, Any]
    source: str = "scenario"


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_ticks: int
    dt_s: float = 1.0
    initial: dict[str, Any] = field(default_factory=dict)
    injections: tuple[Injection, ...] = ()


_INITIAL_KEYS = frozenset({"time_of_day_s", "indoor_c", "outdoor_c", "mains_available"})


def validate_scenario(scenario: Scenario, manifest: DeviceManifest) -> None:
    if scenario.duration_ticks < 0:
        raise InvalidScenario("duration_ticks must be >= 0")
    if scenario.dt_s <= 0:
        raise InvalidScenario("dt_s must be > 0")
    unknown = set(scenario.initial) - _INITIAL_KEYS
    if unknown:
        raise InvalidScenario(f"unknown initial override(s): {sorted(unknown)}")
    for inj in scenario.injections:
        if inj.tick < 0:
            raise InvalidScenario(f"injection tick must be >= 0: {inj.doc!r}")
        if inj.tick > scenario.duration_ticks:
            raise InjectionAfterEnd(
                f"injection at tick {inj.tick} is after the scenario end "
                f"({scenario.duration_ticks})"
            )
        kind = inj.doc.get("kind")
        if kind not in INJECTION_KINDS:
            raise InvalidScenario(f"unknown injection kind: {inj.doc!r}")
        if kind in ("command", "motion"):
            dev_id = inj.doc.get("device")
            if dev_id not in manifest:
                raise InvalidScenario(f"injection targets unknown device {dev_id!r}")
            if kind == "motion" and manifest.get(dev_id).kind is not DeviceKind.MOTION_DETECTOR:
                raise InvalidScenario(f"{dev_id} is not a motion detector")


@dataclass(frozen=True)
class LogEntry:
    tick: int
    seq: int
    kind: str  # Injected|CommandApplied|CommandRejected|EnvChanged|RuleFired|StateChanged
    payload: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"tick": self.tick, "seq": self.seq, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_json(cls, doc: Any) -> "LogEntry":
        try:
            return cls(doc["tick"], doc["seq"], doc["kind"], doc["payload"])
        except (KeyError, TypeError) as exc:
            raise LogCorrupt(f"bad log entry: {doc!r}") from exc


def log_to_jsonl(entries: list[LogEntry]) -> bytes:
    return b"".join(canon.dumps_bytes(e.to_json()) + b"\n" for e in entries)


def log_from_jsonl(data: bytes) -> list[LogEntry]:
    entries = []
    for line in data.splitlines():
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogCorrupt(f"unparseable log line: {line[:80]!r}") from exc
        entries.append(LogEntry.from_json(doc))
    return entries


@dataclass
class World:
    manifest: DeviceManifest
    devices: dict[str, DeviceState]
    env: EnvState
    params: EnvParams
    policy: PolicySet
    tick_index: int = 0
    rng_seed: int = 0  # reserved; the simulation draws no randomness yet
    policy_doc: Any = "builtin"

    def device_params(self) -> dict[str, dict[str, Any]]:
        return {d.id: d.params for d in self.manifest}


def initial_world(
    manifest: DeviceManifest | None = None,
    params: EnvParams | None = None,
    policy_doc: Any = "builtin",
    env: EnvState | None = None,
) -> World:
    manifest = manifest if manifest is not None else default_manifest()
    params = params if params is not None else EnvParams()
    policy = builtin_policy() if policy_doc == "builtin" else load_policy(policy_doc)
    return World(
        manifest=manifest,
        devices=manifest.initial_states(),
        env=env if env is not None else EnvState(),
        params=params,
        policy=policy,
        policy_doc=policy_doc,
    )


class _TickLog:
    def __init__(self, tick_index: int):
        self.tick = tick_index
        self.entries: list[LogEntry] = []

    def add(self, kind: str, payload: dict[str, Any]) -> None:
        self.entries.append(LogEntry(self.tick, len(self.entries), kind, payload))


def _state_diff(old: DeviceState, new: DeviceState) -> dict[str, list[Any]]:
    return {
        key: [old.fields[key], value]
        for key, value in new.fields.items()
        if old.fields[key] != value
    }


def _apply_one_command(
    devices: dict[str, DeviceState],
    manifest: DeviceManifest,
    cmd: Command,
    source: str,
    log: _TickLog,
) -> None:
    payload = {
        "device_id": cmd.device_id,
        "action": cmd.action,
        "arg": cmd.arg,
        "source": source,
    }
    if cmd.device_id not in manifest:
        log.add("CommandRejected", {**payload, "error": f"unknown device {cmd.device_id!r}"})
        return
    old = devices[cmd.device_id]
    try:
        new = apply_command(old, cmd)
    except DeviceError as exc:
        log.add("CommandRejected", {**payload, "error": str(exc)})
        return
    log.add("CommandApplied", payload)
    diff = _state_diff(old, new)
    if diff:
        devices[cmd.device_id] = new
        log.add("StateChanged", {"device_id": cmd.device_id, "changes": diff})


def tick(
    world: World,
    injected: list[Injection] | None = None,
    dt_s: float = 1.0,
) -> tuple[World, list[LogEntry]]:
    """Advance the world by one step of dt_s simulated seconds.

    Phases: (1) retire last tick's motion pulses and apply injections in
    queue order, (2) step the environment, (3) refresh sensor-backed
    device fields, (4) evaluate the policy, (5) apply the resolved
    commands, (6) every change from the above becomes a log entry.
    Rejected commands become CommandRejected entries, never exceptions.
    """
    world.params.check_stability(dt_s)
    log = _TickLog(world.tick_index)
    devices = dict(world.devices)
    env = world.env
    params_by_id = world.device_params()

    # Phase 1: motion pulses last exactly one tick, then the queue.
    for dev_id in sorted(devices):
        dev = devices[dev_id]
        if dev.kind is DeviceKind.MOTION_DETECTOR and dev.get("motion"):
            devices[dev_id] = dev.replace(motion=False)
            log.add("StateChanged", {"device_id": dev_id, "changes": {"motion": [True, False]}})

    for inj in injected or []:
        log.add("Injected", {"source": inj.source, **inj.doc})
        kind = inj.doc["kind"]
        if kind == "command":
            cmd = Command(inj.doc["device"], inj.doc["action"], inj.doc.get("arg"))
            _apply_one_command(devices, world.manifest, cmd, inj.source, log)
        elif kind == "motion":
            dev_id = inj.doc["device"]
            dev = devices[dev_id]
            if dev.get("armed") and not dev.get("motion"):
                devices[dev_id] = dev.replace(motion=True)
                log.add(
                    "StateChanged",
                    {"device_id": dev_id, "changes": {"motion": [False, True]}},
                )
        elif kind == "mains":
            env = replace(env, mains_available=bool(inj.doc["available"]))
        elif kind == "outdoor_c":
            env = replace(env, outdoor_c=float(inj.doc["value"]))

    # Phase 2: environment.  The diff runs against the tick-start state
    # so mains/outdoor injections show up as environment changes too.
    new_env = step_environment(env, devices, dt_s, world.params)
    old_doc, new_doc = world.env.to_json(), new_env.to_json()
    env_diff = {k: [old_doc[k], new_doc[k]] for k in new_doc if old_doc[k] != new_doc[k]}
    if env_diff:
        log.add("EnvChanged", {"changes": env_diff})

    # Phase 3: sensors mirror the new environment.
    sensed = refresh_sensors(new_env, devices, params_by_id, dt_s, world.params)
    for dev_id in sorted(sensed):
        diff = _state_diff(devices[dev_id], sensed[dev_id])
        if diff:
            log.add("StateChanged", {"device_id": dev_id, "changes": diff})
    devices = sensed

    # Phases 4+5: decide, then act.
    decided = evaluate_detailed(world.policy, new_env, devices, params_by_id)
    fired: dict[str, list[Any]] = {}
    for rule_id, layer, _ in decided:
        fired.setdefault(rule_id, [layer.name, 0])[1] += 1
    for rule_id, (layer_name, count) in fired.items():
        log.add("RuleFired", {"rule_id": rule_id, "layer": layer_name, "commands": count})
    for cmd in resolve([(layer, cmd) for _, layer, cmd in decided]):
        _apply_one_command(devices, world.manifest, cmd, "policy", log)

    new_world = replace(world, devices=devices, env=new_env, tick_index=world.tick_index + 1)
    return new_world, log.entries


def _with_initial(world: World, scenario: Scenario) -> World:
    overrides = {k: scenario.initial[k] for k in scenario.initial}
    if not overrides:
        return world
    return replace(world, env=replace(world.env, **overrides))


def run_scenario(
    world: World,
    scenario: Scenario,
    on_tick=None,
) -> tuple[World, list[LogEntry]]:
    """Fold tick over the scenario's duration from this starting world.

    on_tick, when given, is called with (world, entries) after every
    tick; the CLI uses it for wall-clock pacing.
    """
    validate_scenario(scenario, world.manifest)
    world.params.check_stability(scenario.dt_s)
    current = _with_initial(world, scenario)
    by_tick: dict[int, list[Injection]] = {}
    for inj in scenario.injections:
        by_tick.setdefault(inj.tick, []).append(inj)
    log: list[LogEntry] = []
    for index in range(scenario.duration_ticks):
        current, entries = tick(current, by_tick.get(index, []), scenario.dt_s)
        log.extend(entries)
        if on_tick is not None:
            on_tick(current, entries)
    return current, log


def replay(
    manifest: DeviceManifest,
    scenario: Scenario,
    log: list[LogEntry],
    params: EnvParams | None = None,
    policy_doc: Any = "builtin",
) -> World:
    """Re-derive the final world purely from the log's injections.

    The log must be exactly as recorded: strictly increasing (tick, seq),
    ticks inside the scenario, devices known to the manifest.
    """
    validate_scenario(scenario, manifest)
    last: tuple[int, int] | None = None
    by_tick: dict[int, list[Injection]] = {}
    for entry in log:
        key = (entry.tick, entry.seq)
        if last is not None and key <= last:
            raise LogCorrupt(f"entries out of order at tick={entry.tick} seq={entry.seq}")
        last = key
        if entry.tick >= scenario.duration_ticks:
            raise LogCorrupt(f"entry at tick {entry.tick} beyond scenario duration")
        if entry.kind != "Injected":
            continue
        doc = dict(entry.payload)
        source = doc.pop("source", "scenario")
        if doc.get("kind") not in INJECTION_KINDS:
            raise LogCorrupt(f"unknown injection kind in log: {doc!r}")
        if doc["kind"] in ("command", "motion") and doc.get("device") not in manifest:
            raise LogCorrupt(f"log references unknown device {doc.get('device')!r}")
        by_tick.setdefault(entry.tick, []).append(Injection(entry.tick, doc, source))

    world = _with_initial(initial_world(manifest, params, policy_doc), scenario)
    for index in range(scenario.duration_ticks):
        world, _ = tick(world, by_tick.get(index, []), scenario.dt_s)
    return world


def snapshot(world: World) -> dict[str, Any]:
    """Canonical document capturing the entire world."""
    return {
        "schema": SNAPSHOT_SCHEMA,
        "tick_index": world.tick_index,
        "rng_seed": world.rng_seed,
        "env": world.env.to_json(),
        "params": world.params.to_json(),
        "manifest": world.manifest.to_json(),
        "devices": {dev_id: dict(state.fields) for dev_id, state in world.devices.items()},
        "policy": world.policy_doc,
    }


def snapshot_bytes(world: World) -> bytes:
    return canon.dumps_bytes(snapshot(world))


def restore(doc: Any) -> World:
    """Rebuild a world from a snapshot document."""
    if not isinstance(doc, dict) or doc.get("schema") != SNAPSHOT_SCHEMA:
        raise SchemaMismatch(f"not a {SNAPSHOT_SCHEMA} document")
    try:
        manifest = DeviceManifest.from_json(doc["manifest"])
        params = EnvParams.from_json(doc["params"])
        env = EnvState.from_json(doc["env"])
        policy_doc = doc["policy"]
        policy = builtin_policy() if policy_doc == "builtin" else load_policy(policy_doc)
        device_docs = doc["devices"]
        tick_index = doc["tick_index"]
        rng_seed = doc["rng_seed"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"snapshot missing or malformed field: {exc}") from exc

    states = manifest.initial_states()
    if set(device_docs) != set(states):
        raise SchemaMismatch("snapshot device ids do not match its manifest")
    devices = {}
    for dev_id, fields_doc in device_docs.items():
        base = states[dev_id]
        if set(fields_doc) != set(base.fields):
            raise SchemaMismatch(f"snapshot fields for {dev_id} do not match kind")
        devices[dev_id] = DeviceState(base.kind, dict(fields_doc))
    return World(
        manifest=manifest,
        devices=devices,
        env=env,
        params=params,
        policy=policy,
        tick_index=tick_index,
        rng_seed=rng_seed,
        policy_doc=policy_doc,
    )


def restore_bytes(data: bytes) -> World:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"snapshot is not valid JSON: {exc}") from exc
    return restore(doc)
