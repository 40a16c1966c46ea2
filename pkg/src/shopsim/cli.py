"""Command-line entry point: run and replay scenarios, host the
gateway, and poke a running gateway as a protocol client.

Exit codes are a stable contract: 0 success, 2 usage, 3 bad input
(missing/invalid files), 4 runtime failure (rejected command,
unreachable gateway, corrupt log).
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
import time
from typing import Any

from .devices import DeviceKind, DeviceManifest, ManifestError, default_manifest
from .environment import ConfigError, EnvParams
from .gateway import Message, decode_frame, encode_frame, load_tokens_file
from .policy import PolicyError, load_policy
from .runtime import (
    Injection,
    InvalidScenario,
    LogCorrupt,
    Scenario,
    SchemaMismatch,
    SimError,
    World,
    initial_world,
    log_from_jsonl,
    log_to_jsonl,
    replay,
    restore,
    run_scenario,
    snapshot_bytes,
    validate_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


class ParseError(Exception):
    """Scenario file does not match the schema."""


def parse_scenario(text: str, manifest: DeviceManifest) -> Scenario:
    """Parse and validate a scenario file against a manifest.

    Friendly injection kinds (smoke_source/fire_source with an `active`
    flag) normalize to plain device commands so the log and replay only
    ever see the four core kinds.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    allowed = {"name", "dt_s", "duration_ticks", "initial", "injections"}
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"unknown scenario key(s): {sorted(unknown)}")
    try:
        name = doc["name"]
        duration = doc["duration_ticks"]
    except KeyError as exc:
        raise ParseError(f"scenario missing {exc}") from exc

    injections = []
    for rec in doc.get("injections", []):
        if not isinstance(rec, dict) or "tick" not in rec or "kind" not in rec:
            raise ParseError(f"injection needs tick and kind: {rec!r}")
        rec = dict(rec)
        tick_at = rec.pop("tick")
        kind = rec["kind"]
        if kind in ("smoke_source", "fire_source"):
            action = "Activate" if rec.get("active") else "Deactivate"
            rec = {"kind": "command", "device": rec.get("device"), "action": action, "arg": None}
        elif kind == "command":
            rec.setdefault("arg", None)
        injections.append(Injection(tick=tick_at, doc=rec))

    scenario = Scenario(
        name=name,
        duration_ticks=duration,
        dt_s=doc.get("dt_s", 1.0),
        initial=dict(doc.get("initial", {})),
        injections=tuple(injections),
    )
    validate_scenario(scenario, manifest)
    return scenario


def load_scenario_file(path: str, manifest: DeviceManifest) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), manifest)


_FLOAT_FIELDS = {"reading_c": "C", "output_w": "W", "charge_wh": "Wh", "reading_w": "W"}


def _device_line(dev_id: str, state) -> str:
    kind = state.kind
    f = state.fields
    if kind is DeviceKind.LIGHT:
        detail = f"{'on' if f['on'] else 'off'} {f['source'].lower()}"
    elif kind is DeviceKind.FAN:
        detail = f["speed"].lower()
    elif kind is DeviceKind.WINDOW:
        detail = "open" if f["open"] else "closed"
    elif kind is DeviceKind.DOOR:
        detail = f"{'open' if f['open'] else 'closed'} {'locked' if f['locked'] else 'unlocked'}"
    elif kind in (DeviceKind.SMOKE_DETECTOR, DeviceKind.FIRE_DETECTOR):
        detail = "triggered" if f["triggered"] else "clear"
    elif kind is DeviceKind.MOTION_DETECTOR:
        detail = f"{'armed' if f['armed'] else 'disarmed'} {'motion' if f['motion'] else 'idle'}"
    elif kind in (DeviceKind.SMOKE_SOURCE, DeviceKind.FIRE_SOURCE):
        detail = "active" if f["active"] else "inactive"
    elif kind is DeviceKind.THERMOSTAT:
        detail = f"{f['reading_c']:.3f}C"
    elif kind is DeviceKind.SOLAR_PANEL:
        detail = f"{f['output_w']:.3f}W"
    elif kind is DeviceKind.BATTERY:
        detail = f"{f['charge_wh']:.3f}Wh"
    elif kind is DeviceKind.POWER_METER:
        detail = f"{f['reading_w']:.3f}W"
    else:  # everything else is a plain on/off actuator
        detail = "on" if f["on"] else "off"
    return f"{dev_id} {kind.value} {detail}"


def format_status(world: World) -> str:
    """Line-oriented, byte-stable world summary: one env header, then
    one line per device ordered by id."""
    env = world.env
    clock = int(env.time_of_day_s)
    header = (
        f"shop tick={world.tick_index} "
        f"clock={clock // 3600:02d}:{clock % 3600 // 60:02d}:{clock % 60:02d} "
        f"indoor={env.indoor_c:.3f}C outdoor={env.outdoor_c:.3f}C "
        f"smoke={env.smoke:.3f} fire={'yes' if env.fire_active else 'no'} "
        f"mains={'on' if env.mains_available else 'off'}"
    )
    lines = [header]
    for dev_id in sorted(world.devices):
        lines.append(_device_line(dev_id, world.devices[dev_id]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shopsim", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common_world_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", help="device manifest JSON (default: built-in shop)")
        p.add_argument("--params", help="environment parameter overrides JSON")
        p.add_argument("--policy", help="policy rule overrides JSON")

    p_run = sub.add_parser("run", help="run a scenario offline")
    p_run.add_argument("--scenario", required=True)
    common_world_flags(p_run)
    p_run.add_argument("--log", help="write the event log (JSONL) here")
    p_run.add_argument("--snapshot", help="write the final world snapshot here")
    p_run.add_argument("--realtime", action="store_true", help="pace ticks at dt_s wall seconds")

    p_replay = sub.add_parser("replay", help="re-derive a run from its event log")
    p_replay.add_argument("--scenario", required=True)
    p_replay.add_argument("--log", required=True, help="event log produced by run")
    common_world_flags(p_replay)
    p_replay.add_argument("--snapshot", help="write the replayed world snapshot here")

    p_serve = sub.add_parser("serve", help="host the gateway")
    common_world_flags(p_serve)
    p_serve.add_argument("--port", type=int, default=7450)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--tokens", help="token file (or set SHOP_TOKENS)")
    p_serve.add_argument("--dt", type=float, default=1.0, help="simulated seconds per tick")
    p_serve.add_argument(
        "--tick-interval",
        type=float,
        default=None,
        help="wall seconds between ticks (default: dt)",
    )
    p_serve.add_argument("--ws-port", type=int, default=None, help="WebSocket bridge port")
    p_serve.add_argument("--dashboard-dir", help="serve these static assets over HTTP")
    p_serve.add_argument("--http-port", type=int, default=None, help="static asset port")

    def client_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, default=7450)
        p.add_argument("--token", required=True)

    p_inject = sub.add_parser("inject", help="send one command to a running gateway")
    client_flags(p_inject)
    p_inject.add_argument("--device", required=True)
    p_inject.add_argument("--action", required=True)
    p_inject.add_argument("--arg", default=None)

    p_status = sub.add_parser("status", help="print a running gateway's world")
    client_flags(p_status)

    return parser


def _load_world(args: argparse.Namespace) -> World:
    manifest = DeviceManifest.from_file(args.manifest) if args.manifest else default_manifest()
    params = EnvParams.from_file(args.params) if args.params else EnvParams()
    policy_doc: Any = "builtin"
    if args.policy:
        with open(args.policy, "r", encoding="utf-8") as fh:
            policy_doc = json.load(fh)
        load_policy(policy_doc)  # validate before the world swallows it
    return initial_world(manifest, params, policy_doc)


# ---------------------------------------------------------------------------
# gateway client helpers


class _Client:
    """Minimal blocking protocol client used by inject/status."""

    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port), timeout=10)
        self.fh = self.sock.makefile("rb")
        self.seq = 0

    def send(self, frame_type: str, **body: Any) -> int:
        self.seq += 1
        self.sock.sendall(encode_frame(Message(frame_type, self.seq, 0, body)))
        return self.seq

    def recv(self) -> Message:
        line = self.fh.readline()
        if not line:
            raise ConnectionError("gateway closed the connection")
        return decode_frame(line.rstrip(b"\n"))

    def wait_for(self, *frame_types: str, ref_seq: int | None = None) -> Message:
        while True:
            msg = self.recv()
            if msg.type not in frame_types:
                continue
            if ref_seq is not None and msg.body.get("ref_seq") != ref_seq:
                continue
            return msg

    def hello(self, token: str, role: str) -> Message:
        seq = self.send("HELLO", token=token, role=role)
        msg = self.wait_for("WELCOME", "NACK")
        if msg.type == "NACK":
            raise ConnectionError(f"login rejected: {msg.body.get('reason')}")
        return msg

    def close(self) -> None:
        try:
            self.fh.close()
            self.sock.close()
        except OSError:
            pass


def _cmd_run(args: argparse.Namespace) -> int:
    world = _load_world(args)
    scenario = load_scenario_file(args.scenario, world.manifest)
    on_tick = None
    if args.realtime:
        on_tick = lambda w, entries: time.sleep(scenario.dt_s)
    final, log = run_scenario(world, scenario, on_tick=on_tick)
    if args.log:
        with open(args.log, "wb") as fh:
            fh.write(log_to_jsonl(log))
    if args.snapshot:
        with open(args.snapshot, "wb") as fh:
            fh.write(snapshot_bytes(final))
    sys.stdout.write(format_status(final))
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    world = _load_world(args)
    scenario = load_scenario_file(args.scenario, world.manifest)
    with open(args.log, "rb") as fh:
        entries = log_from_jsonl(fh.read())
    final = replay(world.manifest, scenario, entries, world.params, world.policy_doc)
    if args.snapshot:
        with open(args.snapshot, "wb") as fh:
            fh.write(snapshot_bytes(final))
    sys.stdout.write(format_status(final))
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import asyncio

    from .service import ShopService

    token_path = os.environ.get("SHOP_TOKENS") or args.tokens
    if not token_path:
        sys.stderr.write("serve needs --tokens or SHOP_TOKENS\n")
        return EXIT_USAGE
    tokens = load_tokens_file(token_path)
    world = _load_world(args)
    ws_port = args.ws_port
    if ws_port is None and args.dashboard_dir:
        ws_port = args.port + 1
    service = ShopService(
        world,
        tokens,
        host=args.host,
        port=args.port,
        dt_s=args.dt,
        tick_interval_s=args.tick_interval,
        ws_port=ws_port,
        dashboard_dir=args.dashboard_dir,
        http_port=args.http_port if args.http_port is not None else (args.port + 2 if args.dashboard_dir else None),
    )
    sys.stderr.write(
        f"gateway on {args.host}:{args.port}"
        + (f", ws on {ws_port}" if ws_port else "")
        + (f", dashboard on {service.http_port}" if args.dashboard_dir else "")
        + "\n"
    )
    try:
        asyncio.run(service.run())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _cmd_inject(args: argparse.Namespace) -> int:
    client = _Client(args.host, args.port)
    try:
        client.hello(args.token, "operator")
        seq = client.send("COMMAND", device_id=args.device, action=args.action, arg=args.arg)
        reply = client.wait_for("ACK", "NACK", ref_seq=seq)
        if reply.type == "ACK":
            sys.stdout.write(f"accepted: {args.device} {args.action}\n")
            return EXIT_OK
        sys.stdout.write(
            f"rejected: {reply.body.get('code')}: {reply.body.get('reason')}\n"
        )
        return EXIT_RUNTIME
    finally:
        client.close()


def _cmd_status(args: argparse.Namespace) -> int:
    client = _Client(args.host, args.port)
    try:
        client.hello(args.token, "viewer")
        client.send("SNAPSHOT_REQ")
        msg = client.wait_for("SNAPSHOT_RES")
        world = restore(msg.body["snapshot"])
        sys.stdout.write(format_status(world))
        return EXIT_OK
    finally:
        client.close()


_COMMANDS = {
    "run": _cmd_run,
    "replay": _cmd_replay,
    "serve": _cmd_serve,
    "inject": _cmd_inject,
    "status": _cmd_status,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: file not found: {exc.filename}\n")
        return EXIT_INPUT
    except (ParseError, InvalidScenario, ManifestError, ConfigError, PolicyError, SchemaMismatch, LogCorrupt) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (ConnectionError, OSError, SimError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
