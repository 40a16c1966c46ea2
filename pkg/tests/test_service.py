"""Integration tests against a live service on loopback sockets."""

import asyncio

import pytest

from shopsim.gateway import Message, decode_frame, encode_frame
from shopsim.service import ShopService

from .helpers import make_world

TOKENS = {"op-token": "operator", "view-token": "viewer"}


async def _start(service):
    task = asyncio.ensure_future(service.run())
    for _ in range(200):
        await asyncio.sleep(0.01)
        try:
            reader, writer = await asyncio.open_connection(service.host, service.port)
            return task, reader, writer
        except OSError:
            continue
    raise RuntimeError("service never came up")


async def _send(writer, frame_type, seq, **body):
    writer.write(encode_frame(Message(frame_type, seq, 0, body)))
    await writer.drain()


async def _recv(reader, timeout=5.0):
    line = await asyncio.wait_for(reader.readline(), timeout)
    assert line, "connection closed"
    return decode_frame(line.rstrip(b"\n"))


async def _recv_until(reader, frame_type, timeout=5.0, ref_seq=None):
    while True:
        msg = await _recv(reader, timeout)
        if msg.type == frame_type and (ref_seq is None or msg.body.get("ref_seq") == ref_seq):
            return msg


@pytest.fixture
def service():
    return ShopService(
        make_world(indoor_c=18.0, outdoor_c=18.0),
        TOKENS,
        port=0,
        dt_s=1.0,
        tick_interval_s=0.02,
    )


def test_tcp_command_round_trip(service):
    async def scenario():
        task, reader, writer = await _start(service)
        try:
            await _send(writer, "HELLO", 1, token="op-token", role="operator")
            welcome = await _recv(reader)
            assert welcome.type == "WELCOME"
            states = 0
            while states < len(service.world.manifest):
                msg = await _recv(reader)
                assert msg.type == "STATE"
                states += 1
            await _send(writer, "SUBSCRIBE", 2, patterns=["siren-*"])
            await _recv_until(reader, "ACK", ref_seq=2)
            await _send(writer, "COMMAND", 3, device_id="siren-1", action="TurnOn")
            await _recv_until(reader, "ACK", ref_seq=3)
            # the next tick applies the command and broadcasts the change
            state = await _recv_until(reader, "STATE")
            assert state.body["device_id"] == "siren-1"
            assert state.body["state"]["on"] is True
        finally:
            service.stop()
            writer.close()
            await task

    asyncio.run(scenario())


def test_viewer_cannot_command(service):
    async def scenario():
        task, reader, writer = await _start(service)
        try:
            await _send(writer, "HELLO", 1, token="view-token", role="viewer")
            await _recv_until(reader, "WELCOME")
            await _send(writer, "COMMAND", 2, device_id="siren-1", action="TurnOn")
            nack = await _recv_until(reader, "NACK", ref_seq=2)
            assert nack.body["code"] == "NotAuthorized"
        finally:
            service.stop()
            writer.close()
            await task

    asyncio.run(scenario())


def test_bad_token_closes_connection(service):
    async def scenario():
        task, reader, writer = await _start(service)
        try:
            await _send(writer, "HELLO", 1, token="nope", role="operator")
            nack = await _recv(reader)
            assert nack.type == "NACK" and nack.body["code"] == "AuthFailed"
            rest = await asyncio.wait_for(reader.read(), 5.0)
            assert rest == b""  # server hung up
        finally:
            service.stop()
            writer.close()
            await task

    asyncio.run(scenario())


def test_heartbeat_closes_silent_session():
    service = ShopService(
        make_world(),
        TOKENS,
        port=0,
        tick_interval_s=0.02,
        heartbeat_idle_s=0.1,
        heartbeat_grace_s=0.1,
    )

    async def scenario():
        task, reader, writer = await _start(service)
        try:
            await _send(writer, "HELLO", 1, token="op-token", role="operator")
            await _recv_until(reader, "WELCOME")
            saw_ping = False
            while True:
                try:
                    msg = await _recv(reader, timeout=2.0)
                except AssertionError:
                    break  # connection closed by the heartbeat
                if msg.type == "PING":
                    saw_ping = True  # deliberately never answer
            assert saw_ping
        finally:
            service.stop()
            writer.close()
            await task

    asyncio.run(scenario())


def test_answered_ping_keeps_session_alive():
    service = ShopService(
        make_world(),
        TOKENS,
        port=0,
        tick_interval_s=0.02,
        heartbeat_idle_s=0.1,
        heartbeat_grace_s=0.5,
    )

    async def scenario():
        task, reader, writer = await _start(service)
        try:
            await _send(writer, "HELLO", 1, token="op-token", role="operator")
            await _recv_until(reader, "WELCOME")
            seq = 2
            deadline = asyncio.get_event_loop().time() + 1.0
            while asyncio.get_event_loop().time() < deadline:
                msg = await _recv(reader, timeout=2.0)
                if msg.type == "PING":
                    await _send(writer, "PONG", seq)
                    seq += 1
            assert service.core.sessions  # still registered
        finally:
            service.stop()
            writer.close()
            await task

    asyncio.run(scenario())


def test_websocket_bridge_speaks_same_grammar():
    websockets = pytest.importorskip("websockets")

    service = ShopService(
        make_world(),
        TOKENS,
        port=0,
        ws_port=0,
        tick_interval_s=0.02,
    )

    async def scenario():
        task = asyncio.ensure_future(service.run())
        try:
            for _ in range(200):
                await asyncio.sleep(0.01)
                if service.ws_port:
                    break
            async with websockets.connect(f"ws://{service.host}:{service.ws_port or 7451}") as ws:
                await ws.send(
                    encode_frame(Message("HELLO", 1, 0, {"token": "op-token", "role": "operator"})).decode()
                )
                welcome = decode_frame((await ws.recv()).encode().rstrip(b"\n"))
                assert welcome.type == "WELCOME"
                await ws.send(encode_frame(Message("PING", 2, 0)).decode())
                while True:
                    msg = decode_frame((await ws.recv()).encode().rstrip(b"\n"))
                    if msg.type == "PONG":
                        break
        finally:
            service.stop()
            await task

    asyncio.run(scenario())
