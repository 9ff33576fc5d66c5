"""Test-harness plug-ins: a plaintext transport and a recording TCP proxy.

Nothing here is reachable from the command line. The plaintext transport
still authenticates certificate chains (each side sends its certificate in
the hello frame) but proves no key possession and encrypts nothing; it exists
so confidentiality experiments have a control group.
"""

from __future__ import annotations

import asyncio
import socket
from dataclasses import dataclass, field

from .errors import HandshakeFailed, PeerCertMissing, SroskError
from .pki import load_certificate
from .wire import Channel, _open_streams, exchange_hello


class PlaintextTransport:
    name = "plaintext"

    async def establish(self, role, cfg, sock: socket.socket) -> Channel:
        reader, writer = await _open_streams(sock, None, role == "server", cfg.handshake_timeout)
        try:
            hello = {"op": "hello", "cert": cfg.keystore.cert_pem().decode("ascii")}
            peer_hello = await exchange_hello(reader, writer, hello, cfg.handshake_timeout)
            pem = peer_hello.get("cert")
            if not pem:
                raise PeerCertMissing("peer presented no certificate")
            try:
                peer = cfg.keystore.verify_peer(load_certificate(pem.encode("ascii")), now=cfg.now())
            except SroskError as exc:
                raise HandshakeFailed(f"peer certificate rejected: {exc.code}: {exc}") from exc
        except BaseException:
            writer.close()
            raise
        return Channel(reader, writer, peer, self.name)


@dataclass
class CaptureProxy:
    """Forwards TCP connections to ``target`` and keeps every byte it relays."""

    target: tuple[str, int]
    captured: bytearray = field(default_factory=bytearray)
    connections: int = 0
    _server: asyncio.AbstractServer | None = None

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> CaptureProxy:
        self._server = await asyncio.start_server(self._handle, host, port)
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self._server.sockets[0].getsockname()[:2]

    async def _pump(self, reader, writer):
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                self.captured.extend(data)
                writer.write(data)
                await writer.drain()
        except (ConnectionError, OSError):
            pass
        finally:
            writer.close()

    async def _handle(self, client_reader, client_writer):
        self.connections += 1
        try:
            up_reader, up_writer = await asyncio.open_connection(*self.target)
        except OSError:
            client_writer.close()
            return
        await asyncio.gather(self._pump(client_reader, up_writer),
                             self._pump(up_reader, client_writer))

    def count(self, needle: bytes) -> int:
        return bytes(self.captured).count(needle)

    async def close(self):
        if self._server:
            self._server.close()
            await self._server.wait_closed()
