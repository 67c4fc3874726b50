"""Live serving: the plant loop ticking behind a WebSocket listener.

Each accepted connection must open with a HELLO naming its role and
protocol; admission is decided by the gateway core from the socket's
remote address plus that HELLO. Every twin_v1 frame travels as one binary
WebSocket message. State snapshots go out to every live session after
each tick. An optional plain-HTTP side server hands out the operator UI's
static files.
"""

from __future__ import annotations

import asyncio
import http.server
import threading
from functools import partial
from pathlib import Path

from websockets.asyncio.server import serve as ws_serve
from websockets.exceptions import ConnectionClosed

from .gateway import GatewayCore, PeerIdentity
from .loop import PlantLoop
from .protocol import FrameDecoder, MessageKind, ProtocolError, hello, nack

HELLO_TIMEOUT = 10.0


class TwinServer:
    def __init__(
        self,
        loop: PlantLoop,
        core: GatewayCore,
        host: str = "127.0.0.1",
        port: int = 8844,
        tick_interval: float | None = None,
        max_ticks: int | None = None,
    ):
        self.loop = loop
        self.core = core
        self.host = host
        self.port = port
        self.tick_interval = (
            loop.config.scan_period if tick_interval is None else tick_interval
        )
        # Publish on the gateway's period, expressed in whole ticks of
        # simulated time (each tick advances the plant one scan period).
        self.publish_every = max(1, round(core.publish_period / loop.config.scan_period))
        self.max_ticks = max_ticks
        self._connections: dict[str, object] = {}  # session id -> websocket
        self._stopped = asyncio.Event()
        self.bound_port: int | None = None

    async def _ticker(self) -> None:
        ticks = 0
        while not self._stopped.is_set():
            self.loop.tick()
            if ticks % self.publish_every == 0:
                await self._publish_all()
            ticks += 1
            if self.max_ticks is not None and ticks >= self.max_ticks:
                self._stopped.set()
                return
            if self.tick_interval > 0:
                try:
                    await asyncio.wait_for(
                        self._stopped.wait(), timeout=self.tick_interval
                    )
                except asyncio.TimeoutError:
                    pass

    async def _publish_all(self) -> None:
        state = self.loop.latest_state()
        for session_id, ws in list(self._connections.items()):
            session = self.core.sessions.get(session_id)
            if session is None or not session.open:
                continue
            msg = self.core.publish_state(state, session, self.loop.last_alarms)
            if msg is None:
                continue
            try:
                await ws.send(msg.encode())
            except ConnectionClosed:
                self.core.disconnect(session_id)
                self._connections.pop(session_id, None)

    async def _handler(self, websocket) -> None:
        remote = websocket.remote_address[0] if websocket.remote_address else ""
        decoder = FrameDecoder()
        try:
            raw = await asyncio.wait_for(websocket.recv(), timeout=HELLO_TIMEOUT)
        except (asyncio.TimeoutError, ConnectionClosed):
            return
        try:
            messages = decoder.feed(raw if isinstance(raw, bytes) else raw.encode())
        except ProtocolError:
            await websocket.close()
            return
        if not messages or messages[0].kind is not MessageKind.HELLO:
            await websocket.send(nack(0, "hello").encode())
            await websocket.close()
            return
        first = messages[0]
        peer = PeerIdentity(
            address=remote,
            declared_role=str(first.payload.get("role", "OTHER")),
            channel_protocol=str(first.payload.get("protocol", "")),
        )
        session, decision = self.core.connect(peer)
        if not decision.accepted:
            await websocket.send(nack(first.seq, decision.reason or "rejected").encode())
            await websocket.close()
            return

        self._connections[session.session_id] = websocket
        await websocket.send(hello(first.seq, "TWIN").encode())
        try:
            async for raw in websocket:
                data = raw if isinstance(raw, bytes) else raw.encode()
                try:
                    for msg in decoder.feed(data):
                        if msg.kind is MessageKind.COMMAND:
                            await websocket.send(
                                self.core.handle_command(msg, session).encode()
                            )
                        elif msg.kind is MessageKind.PING:
                            await websocket.send(msg.encode())
                except ProtocolError:
                    break
        except ConnectionClosed:
            pass
        finally:
            self.core.disconnect(session.session_id)
            self._connections.pop(session.session_id, None)

    async def run(self) -> None:
        async with ws_serve(self._handler, self.host, self.port) as server:
            self.bound_port = server.sockets[0].getsockname()[1] if server.sockets else None
            ticker = asyncio.create_task(self._ticker())
            try:
                await self._stopped.wait()
            finally:
                ticker.cancel()

    def stop(self) -> None:
        self._stopped.set()


def start_static_server(directory: Path, port: int) -> threading.Thread:
    """Serve the operator UI's static assets in a daemon thread."""
    handler = partial(http.server.SimpleHTTPRequestHandler, directory=str(directory))
    httpd = http.server.ThreadingHTTPServer(("127.0.0.1", port), handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.httpd = httpd  # type: ignore[attr-defined]
    thread.start()
    return thread
