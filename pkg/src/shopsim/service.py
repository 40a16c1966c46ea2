"""Network hosting for the gateway: TCP listener, WebSocket bridge for
the browser dashboard, optional static asset server, the tick pacer and
session heartbeats.

One asyncio loop runs everything.  Sessions only ever touch the world
through GatewayCore's injection queue; the ticker task is the single
writer, so reads between ticks always see a whole, settled world.
"""

from __future__ import annotations

import asyncio
import functools
import http.server
import threading
import time
from .gateway import MAX_FRAME_BYTES, GatewayCore
from .runtime import World, tick

HEARTBEAT_IDLE_S = 30.0
HEARTBEAT_GRACE_S = 10.0


class ShopService:
    def __init__(
        self,
        world: World,
        tokens: dict[str, str],
        host: str = "127.0.0.1",
        port: int = 7450,
        dt_s: float = 1.0,
        tick_interval_s: float | None = None,
        ws_port: int | None = None,
        dashboard_dir: str | None = None,
        http_port: int | None = None,
        heartbeat_idle_s: float = HEARTBEAT_IDLE_S,
        heartbeat_grace_s: float = HEARTBEAT_GRACE_S,
    ):
        self.world = world
        self.dt_s = dt_s
        self.tick_interval_s = dt_s if tick_interval_s is None else tick_interval_s
        self.host = host
        self.port = port
        self.ws_port = ws_port
        self.dashboard_dir = dashboard_dir
        self.http_port = http_port
        self.heartbeat_idle_s = heartbeat_idle_s
        self.heartbeat_grace_s = heartbeat_grace_s
        self.core = GatewayCore(lambda: self.world, tokens)
        self._outboxes: dict[str, asyncio.Queue[bytes | None]] = {}
        self._last_rx: dict[str, float] = {}
        self._ping_deadline: dict[str, float] = {}
        self._stopped = asyncio.Event()

    # -- plumbing ------------------------------------------------------

    def _dispatch(self, outs: list[tuple[str, bytes]]) -> None:
        for sid, data in outs:
            outbox = self._outboxes.get(sid)
            if outbox is not None:
                outbox.put_nowait(data)

    def _attach(self) -> tuple[str, asyncio.Queue[bytes | None]]:
        sid = self.core.open_session()
        outbox: asyncio.Queue[bytes | None] = asyncio.Queue()
        self._outboxes[sid] = outbox
        self._last_rx[sid] = time.monotonic()
        return sid, outbox

    def _detach(self, sid: str) -> None:
        outbox = self._outboxes.pop(sid, None)
        if outbox is not None:
            outbox.put_nowait(None)  # wake the sender so it can exit
        self._last_rx.pop(sid, None)
        self._ping_deadline.pop(sid, None)
        self.core.close_session(sid)

    def _on_line(self, sid: str, line: bytes) -> None:
        self._last_rx[sid] = time.monotonic()
        self._ping_deadline.pop(sid, None)
        self._dispatch(self.core.handle_line(sid, line.rstrip(b"\n")))
        if self.core.sessions.get(sid) and self.core.sessions[sid].closing:
            self._detach(sid)

    # -- background tasks ----------------------------------------------

    async def _ticker(self) -> None:
        while True:
            await asyncio.sleep(self.tick_interval_s)
            injections = self.core.drain_injections()
            before = self.world.devices
            self.world, _ = tick(self.world, injections, self.dt_s)
            self._dispatch(self.core.broadcast_after_tick(before, self.world))

    async def _heartbeat(self) -> None:
        period = max(min(self.heartbeat_idle_s, self.heartbeat_grace_s) / 2, 0.05)
        while True:
            await asyncio.sleep(period)
            now = time.monotonic()
            for sid in list(self._outboxes):
                session = self.core.sessions.get(sid)
                if session is None:
                    continue
                deadline = self._ping_deadline.get(sid)
                if deadline is not None:
                    if now >= deadline:
                        self._detach(sid)
                    continue
                if now - self._last_rx.get(sid, now) > self.heartbeat_idle_s:
                    self._dispatch(self.core.ping(sid))
                    self._ping_deadline[sid] = now + self.heartbeat_grace_s

    # -- transports ------------------------------------------------------

    async def _sender(self, outbox: asyncio.Queue[bytes | None], write, close) -> None:
        """Drain one session's outbox; a None entry means the session is
        gone, so flush and close the transport (which also unblocks the
        read side)."""
        try:
            while True:
                data = await outbox.get()
                if data is None:
                    await close()
                    return
                await write(data)
        except Exception:
            return  # dead transport; the read side will notice

    async def _handle_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        sid, outbox = self._attach()

        async def write(data: bytes) -> None:
            writer.write(data)
            await writer.drain()

        async def close() -> None:
            try:
                await writer.drain()
                writer.close()
            except (ConnectionError, OSError):
                pass

        sender = asyncio.ensure_future(self._sender(outbox, write, close))
        try:
            while True:
                try:
                    line = await reader.readline()
                except (asyncio.LimitOverrunError, ValueError):
                    self._dispatch(self.core.protocol_error(sid, "FrameTooLong", "line too long"))
                    break
                if not line:
                    break
                self._on_line(sid, line)
                if sid not in self._outboxes:
                    break
        finally:
            self._detach(sid)
            await sender

    async def _handle_ws(self, connection) -> None:
        sid, outbox = self._attach()

        async def write(data: bytes) -> None:
            await connection.send(data.decode("utf-8"))

        async def close() -> None:
            await connection.close()

        sender = asyncio.ensure_future(self._sender(outbox, write, close))
        try:
            async for message in connection:
                raw = message.encode("utf-8") if isinstance(message, str) else message
                self._on_line(sid, raw)
                if sid not in self._outboxes:
                    break
        finally:
            self._detach(sid)
            await sender

    def _start_static(self) -> threading.Thread:
        handler = functools.partial(
            http.server.SimpleHTTPRequestHandler, directory=self.dashboard_dir
        )
        httpd = http.server.ThreadingHTTPServer((self.host, self.http_port or 0), handler)
        self.http_port = httpd.server_address[1]
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        return thread

    # -- entry -----------------------------------------------------------

    async def run(self) -> None:
        server = await asyncio.start_server(
            self._handle_tcp, self.host, self.port, limit=MAX_FRAME_BYTES + 4096
        )
        self.port = server.sockets[0].getsockname()[1]
        tasks = [
            asyncio.ensure_future(self._ticker()),
            asyncio.ensure_future(self._heartbeat()),
        ]
        ws_server = None
        if self.ws_port is not None:
            import websockets

            ws_server = await websockets.serve(
                self._handle_ws, self.host, self.ws_port, max_size=MAX_FRAME_BYTES + 4096
            )
            self.ws_port = ws_server.sockets[0].getsockname()[1]
        if self.dashboard_dir is not None:
            self._start_static()
        try:
            await self._stopped.wait()
        finally:
            for task in tasks:
                task.cancel()
            server.close()
            await server.wait_closed()
            if ws_server is not None:
                ws_server.close()
                await ws_server.wait_closed()

    def stop(self) -> None:
        self._stopped.set()
