"""The shop gateway: frame codec, sessions, command routing, broadcast.

The wire unit is one line of canonical JSON ("v", "type", "seq",
"ts_ms" plus a type-specific body) ending in a newline.  The gateway
itself holds no simulation logic: inbound commands are validated
against the current world and pushed onto one ordered injection queue
that the runtime consumes at the next tick; outbound state changes fan
out to every session whose subscription globs match.

Replies to a command reference the command's own sequence number in
"ref_seq" (the envelope "seq" is the sender's counter and keeps
increasing independently).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from fnmatch import fnmatchcase
from typing import Any, Callable, Iterator

from . import canon
from .devices import Command, DeviceError, DeviceKind, DeviceState, apply_command, kind_actions
from .environment import solar_output
from .policy import shop_locked
from .runtime import Injection, World, snapshot

MAX_FRAME_BYTES = 64 * 1024
PROTOCOL_VERSION = 1

FRAME_TYPES = frozenset(
    {
        "HELLO",
        "WELCOME",
        "SUBSCRIBE",
        "STATE",
        "COMMAND",
        "ACK",
        "NACK",
        "EVENT",
        "SNAPSHOT_REQ",
        "SNAPSHOT_RES",
        "PING",
        "PONG",
    }
)

# Body fields each type must carry (beyond the envelope).
_REQUIRED_BODY = {
    "HELLO": ("token", "role"),
    "WELCOME": ("session_id", "role"),
    "SUBSCRIBE": ("patterns",),
    "STATE": ("device_id", "kind", "state"),
    "COMMAND": ("device_id", "action"),
    "ACK": ("ref_seq",),
    "NACK": ("ref_seq", "code", "reason"),
    "EVENT": ("name", "payload"),
    "SNAPSHOT_RES": ("snapshot",),
}

_ENVELOPE_KEYS = ("v", "type", "seq", "ts_ms")


class FrameError(Exception):
    """Structured decode/encode failure; code is one of the NACK codes."""

    def __init__(self, code: str, reason: str):
        super().__init__(f"{code}: {reason}")
        self.code = code
        self.reason = reason


@dataclass(frozen=True)
class Message:
    type: str
    seq: int
    ts_ms: int
    body: dict[str, Any] = dc_field(default_factory=dict)


def decode_frame(data: bytes) -> Message:
    """Parse one wire line.  Total: any byte string either decodes or
    raises a FrameError; nothing else escapes."""
    if len(data) > MAX_FRAME_BYTES:
        raise FrameError("FrameTooLong", f"frame of {len(data)} bytes exceeds {MAX_FRAME_BYTES}")
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FrameError("MalformedJson", str(exc)) from exc
    if not isinstance(doc, dict):
        raise FrameError("MalformedJson", "frame must be a JSON object")

    if "v" not in doc:
        raise FrameError("MissingField", "missing 'v'")
    if doc["v"] != PROTOCOL_VERSION:
        raise FrameError("BadVersion", f"unsupported version {doc['v']!r}")

    for key in ("type", "seq", "ts_ms"):
        if key not in doc:
            raise FrameError("MissingField", f"missing {key!r}")
    frame_type = doc["type"]
    if not isinstance(frame_type, str) or frame_type not in FRAME_TYPES:
        raise FrameError("UnknownType", f"unknown frame type {frame_type!r}")
    for key in ("seq", "ts_ms"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool) or doc[key] < 0:
            raise FrameError("MalformedJson", f"{key!r} must be a non-negative integer")

    body = {k: v for k, v in doc.items() if k not in _ENVELOPE_KEYS}
    for required in _REQUIRED_BODY.get(frame_type, ()):
        if required not in body:
            raise FrameError("MissingField", f"{frame_type} missing {required!r}")
    return Message(frame_type, doc["seq"], doc["ts_ms"], body)


def encode_frame(msg: Message) -> bytes:
    """Canonical encoding: sorted keys, no extra whitespace, newline
    terminated.  decode_frame(encode_frame(m)) == m."""
    if msg.type not in FRAME_TYPES:
        raise ValueError(f"unknown frame type {msg.type!r}")
    for key in _ENVELOPE_KEYS:
        if key in msg.body:
            raise ValueError(f"body may not shadow envelope key {key!r}")
    for required in _REQUIRED_BODY.get(msg.type, ()):
        if required not in msg.body:
            raise ValueError(f"{msg.type} missing body field {required!r}")
    doc = {"v": PROTOCOL_VERSION, "type": msg.type, "seq": msg.seq, "ts_ms": msg.ts_ms}
    doc.update(msg.body)
    line = canon.dumps_bytes(doc) + b"\n"
    if len(line) > MAX_FRAME_BYTES:
        raise ValueError(f"encoded frame of {len(line)} bytes exceeds {MAX_FRAME_BYTES}")
    return line


ROLE_OPERATOR = "operator"
ROLE_VIEWER = "viewer"
_ROLE_RANK = {ROLE_VIEWER: 0, ROLE_OPERATOR: 1}


def load_tokens(doc: Any) -> dict[str, str]:
    """Token file: {"tokens": [{"token": "...", "role": "operator"}]}."""
    try:
        entries = doc["tokens"]
        tokens = {e["token"]: e["role"] for e in entries}
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad token config: {exc}") from exc
    for role in tokens.values():
        if role not in _ROLE_RANK:
            raise ValueError(f"unknown role {role!r}")
    return tokens


def load_tokens_file(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_tokens(json.load(fh))


@dataclass
class Session:
    session_id: str
    role: str | None = None  # None until HELLO succeeds
    subscriptions: set[str] = dc_field(default_factory=set)
    last_client_seq: int = -1
    out_seq: int = 0
    closing: bool = False

    @property
    def authenticated(self) -> bool:
        return self.role is not None

    def next_seq(self) -> int:
        self.out_seq += 1
        return self.out_seq

    def wants(self, device_id: str) -> bool:
        return any(fnmatchcase(device_id, pat) for pat in self.subscriptions)


Outbound = tuple[str, bytes]  # (session_id, encoded frame)


def _session_counter() -> Iterator[str]:
    n = 0
    while True:
        n += 1
        yield f"s{n}"


class GatewayCore:
    """Session registry and frame router in front of one world.

    Transport-agnostic: the TCP/WebSocket layers feed raw lines in and
    write the returned (session_id, bytes) pairs out.  `get_world` reads
    the runtime's current world; accepted commands go to the injection
    queue that the ticker drains at the next tick boundary.
    """

    def __init__(self, get_world: Callable[[], World], tokens: dict[str, str]):
        self._get_world = get_world
        self._tokens = dict(tokens)
        self.sessions: dict[str, Session] = {}
        self._ids = _session_counter()
        self._queue: list[Injection] = []
        self._alarms = {"fire": False, "smoke": False, "security": False}

    # -- session lifecycle -------------------------------------------------

    def open_session(self) -> str:
        sid = next(self._ids)
        self.sessions[sid] = Session(sid)
        return sid

    def close_session(self, sid: str) -> None:
        self.sessions.pop(sid, None)

    def drain_injections(self) -> list[Injection]:
        drained, self._queue = self._queue, []
        return drained

    def ping(self, sid: str) -> list[Outbound]:
        session = self.sessions.get(sid)
        if session is None:
            return []
        return [(sid, self._frame(session, "PING"))]

    def protocol_error(self, sid: str, code: str, reason: str) -> list[Outbound]:
        session = self.sessions.get(sid)
        if session is None:
            return []
        return [self._nack(session, 0, code, reason)]

    # -- frame plumbing ----------------------------------------------------

    def _ts_ms(self) -> int:
        return int(self._get_world().env.sim_time_s * 1000)

    def _frame(self, session: Session, frame_type: str, **body: Any) -> bytes:
        return encode_frame(Message(frame_type, session.next_seq(), self._ts_ms(), body))

    def _nack(self, session: Session, ref_seq: int, code: str, reason: str) -> Outbound:
        return (
            session.session_id,
            self._frame(session, "NACK", ref_seq=ref_seq, code=code, reason=reason),
        )

    def _state_frame(self, session: Session, device_id: str, state: DeviceState) -> bytes:
        return self._frame(
            session,
            "STATE",
            device_id=device_id,
            kind=state.kind.value,
            state=dict(state.fields),
        )

    def handle_line(self, sid: str, raw: bytes) -> list[Outbound]:
        """Decode and dispatch one inbound line from a connected session."""
        session = self.sessions[sid]
        try:
            msg = decode_frame(raw)
        except FrameError as exc:
            if not session.authenticated:
                session.closing = True
            return [self._nack(session, 0, exc.code, exc.reason)]
        if msg.seq <= session.last_client_seq:
            return [
                self._nack(
                    session,
                    msg.seq,
                    "ProtocolError",
                    f"seq {msg.seq} not above {session.last_client_seq}",
                )
            ]
        session.last_client_seq = msg.seq
        return self.handle_message(session, msg)

    # -- protocol ----------------------------------------------------------

    def register_client(self, session: Session, msg: Message) -> list[Outbound]:
        """HELLO: authenticate, grant a role, send WELCOME plus a full
        state dump for every manifest device."""
        token, requested = msg.body["token"], msg.body["role"]
        granted = self._tokens.get(token)
        if granted is None:
            session.closing = True
            return [self._nack(session, msg.seq, "AuthFailed", "unknown token")]
        if requested not in _ROLE_RANK:
            session.closing = True
            return [self._nack(session, msg.seq, "RoleDenied", f"unknown role {requested!r}")]
        if _ROLE_RANK[requested] > _ROLE_RANK[granted]:
            session.closing = True
            return [
                self._nack(
                    session, msg.seq, "RoleDenied", f"token does not allow {requested!r}"
                )
            ]
        session.role = requested
        world = self._get_world()
        out = [
            (
                session.session_id,
                self._frame(session, "WELCOME", session_id=session.session_id, role=requested),
            )
        ]
        for dev_id in sorted(world.devices):
            out.append((session.session_id, self._state_frame(session, dev_id, world.devices[dev_id])))
        return out

    def _handle_command(self, session: Session, msg: Message) -> list[Outbound]:
        if session.role != ROLE_OPERATOR:
            return [self._nack(session, msg.seq, "NotAuthorized", "viewer sessions cannot command")]
        device_id = msg.body["device_id"]
        action = msg.body["action"]
        arg = msg.body.get("arg")
        world = self._get_world()
        if not isinstance(device_id, str) or device_id not in world.devices:
            return [self._nack(session, msg.seq, "UnknownDevice", f"no device {device_id!r}")]
        if not isinstance(action, str) or action not in kind_actions(world.devices[device_id].kind):
            return [self._nack(session, msg.seq, "IllegalAction", f"{action!r} not accepted")]
        try:
            # Dry-run against the current state; the authoritative apply
            # happens on the queue at the next tick.
            apply_command(world.devices[device_id], Command(device_id, action, arg))
        except DeviceError as exc:
            return [self._nack(session, msg.seq, "IllegalAction", str(exc))]
        self._queue.append(
            Injection(
                tick=world.tick_index,
                doc={"kind": "command", "device": device_id, "action": action, "arg": arg},
                source=f"session:{session.session_id}",
            )
        )
        return [(session.session_id, self._frame(session, "ACK", ref_seq=msg.seq))]

    def handle_message(self, session: Session, msg: Message) -> list[Outbound]:
        """Route one decoded message; returns the frames to write."""
        if msg.type == "HELLO":
            if session.authenticated:
                return [self._nack(session, msg.seq, "ProtocolError", "session already authenticated")]
            return self.register_client(session, msg)
        if not session.authenticated:
            session.closing = True
            return [self._nack(session, msg.seq, "NotAuthorized", "HELLO first")]

        if msg.type == "COMMAND":
            return self._handle_command(session, msg)
        if msg.type == "SUBSCRIBE":
            patterns = msg.body["patterns"]
            if not isinstance(patterns, list) or not all(isinstance(p, str) for p in patterns):
                return [self._nack(session, msg.seq, "ProtocolError", "patterns must be strings")]
            session.subscriptions = set(patterns)
            return [(session.session_id, self._frame(session, "ACK", ref_seq=msg.seq))]
        if msg.type == "PING":
            return [(session.session_id, self._frame(session, "PONG"))]
        if msg.type == "PONG":
            return []
        if msg.type == "SNAPSHOT_REQ":
            doc = snapshot(self._get_world())
            return [(session.session_id, self._frame(session, "SNAPSHOT_RES", snapshot=doc))]
        return [
            self._nack(
                session, msg.seq, "ProtocolError", f"clients may not send {msg.type}"
            )
        ]

    # -- broadcast ---------------------------------------------------------

    def _alarm_flags(self, world: World) -> dict[str, bool]:
        devs = world.devices.values()
        fire = any(d.kind is DeviceKind.FIRE_DETECTOR and d.get("triggered") for d in devs)
        smoke = any(d.kind is DeviceKind.SMOKE_DETECTOR and d.get("triggered") for d in devs)
        siren_on = any(d.kind is DeviceKind.SIREN and d.get("on") for d in devs)
        security = shop_locked(world.devices) and siren_on
        return {"fire": fire, "smoke": smoke, "security": security}

    def broadcast_after_tick(
        self, before: dict[str, DeviceState], world: World
    ) -> list[Outbound]:
        """Fan out per-device STATE diffs, alarm transitions and the
        per-tick environment summary to matching subscribers."""
        changed = [
            dev_id
            for dev_id in sorted(world.devices)
            if dev_id not in before or before[dev_id].fields != world.devices[dev_id].fields
        ]
        alarms = self._alarm_flags(world)
        events: list[tuple[str, dict[str, Any]]] = []
        for name in ("fire", "smoke", "security"):
            if alarms[name] != self._alarms[name]:
                events.append((name, {"active": alarms[name]}))
        self._alarms = alarms

        env = world.env
        battery_wh = 0.0
        battery_capacity_wh = 0.0
        for dev in world.manifest:
            if dev.kind is DeviceKind.BATTERY:
                battery_wh += world.devices[dev.id].get("charge_wh")
                battery_capacity_wh += dev.params.get(
                    "capacity_wh", world.params.battery_capacity_wh
                )
        env_payload = {
            "tick_index": world.tick_index,
            "indoor_c": env.indoor_c,
            "outdoor_c": env.outdoor_c,
            "smoke": env.smoke,
            "fire_active": env.fire_active,
            "mains_available": env.mains_available,
            "solar_w": solar_output(env.time_of_day_s, world.params),
            "battery_wh": battery_wh,
            "battery_capacity_wh": battery_capacity_wh,
            "time_of_day_s": env.time_of_day_s,
        }

        out: list[Outbound] = []
        for sid in sorted(self.sessions):
            session = self.sessions[sid]
            if not session.authenticated:
                continue
            for dev_id in changed:
                if session.wants(dev_id):
                    out.append((sid, self._state_frame(session, dev_id, world.devices[dev_id])))
            for name, payload in events:
                out.append((sid, self._frame(session, "EVENT", name=name, payload=payload)))
            out.append((sid, self._frame(session, "EVENT", name="env", payload=env_payload)))
        return out


def record_session_frames(world, scenario, token: str = "fixture-token") -> list[bytes]:
    """Everything one operator session subscribed to `*` would receive
    over a scenario run: WELCOME, the initial state dump, then per-tick
    broadcasts.  Deterministic, so recorded sequences can be committed
    as dashboard test fixtures.
    """
    from .runtime import Scenario, tick, validate_scenario

    assert isinstance(scenario, Scenario)
    validate_scenario(scenario, world.manifest)
    holder = {"world": world}
    core = GatewayCore(lambda: holder["world"], {token: ROLE_OPERATOR})
    sid = core.open_session()
    received: list[bytes] = []

    def deliver(outs: list[Outbound]) -> None:
        received.extend(data for out_sid, data in outs if out_sid == sid)

    deliver(core.handle_line(sid, encode_frame(Message("HELLO", 1, 0, {"token": token, "role": ROLE_OPERATOR}))))
    deliver(core.handle_line(sid, encode_frame(Message("SUBSCRIBE", 2, 0, {"patterns": ["*"]}))))

    from dataclasses import replace as _replace

    env = holder["world"].env
    overrides = {k: scenario.initial[k] for k in scenario.initial}
    if overrides:
        holder["world"] = _replace(holder["world"], env=_replace(env, **overrides))
    by_tick: dict[int, list[Injection]] = {}
    for inj in scenario.injections:
        by_tick.setdefault(inj.tick, []).append(inj)
    for index in range(scenario.duration_ticks):
        before = holder["world"].devices
        holder["world"], _ = tick(holder["world"], by_tick.get(index, []), scenario.dt_s)
        deliver(core.broadcast_after_tick(before, holder["world"]))
    return received
