"""Framing, message schemas and authenticated channels.

Every byte stream in the graph (registry RPC, topic data, service calls) is a
sequence of frames: a 4-byte big-endian length followed by that many bytes.
Control messages are UTF-8 JSON objects carried in single frames.

Channel establishment goes through a transport plug-in. :class:`TlsTransport`
(mutual TLS, the default) is the only one reachable from the CLI; a plaintext
transport for confidentiality experiments lives in :mod:`srosk.harness`.
"""

from __future__ import annotations

import asyncio
import datetime as dt
import hashlib
import json
import os
import socket
import ssl
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Protocol

from .errors import (
    HandshakeFailed, IoFailure, PeerCertMissing, ProtocolError, SroskError, VerificationError,
)
from .pki import Identity, Keystore

MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct(">I")
HANDSHAKE_TIMEOUT = 10.0


# frames

def encode_frame(body: bytes) -> bytes:
    if not body:
        raise ProtocolError("zero-length frames are illegal")
    if len(body) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def _check_length(length: int):
    if length == 0:
        raise ProtocolError("zero-length frame")
    if length > MAX_FRAME:
        raise ProtocolError(f"declared frame length {length} exceeds {MAX_FRAME}")


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    """Read one frame body; ``EOFError`` on a clean end of stream."""
    try:
        head = await reader.readexactly(4)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            raise EOFError("stream closed") from None
        raise ProtocolError("stream ended inside a frame header") from None
    except (ConnectionError, ssl.SSLError) as exc:
        raise IoFailure(str(exc)) from None
    (length,) = _LEN.unpack(head)
    _check_length(length)
    try:
        return await reader.readexactly(length)
    except asyncio.IncompleteReadError:
        raise ProtocolError(f"stream ended inside a {length}-byte frame") from None
    except (ConnectionError, ssl.SSLError) as exc:
        raise IoFailure(str(exc)) from None


async def write_frame(writer: asyncio.StreamWriter, body: bytes):
    writer.write(encode_frame(body))
    try:
        await writer.drain()
    except (ConnectionError, ssl.SSLError) as exc:
        raise IoFailure(str(exc)) from None


def read_frame_from(fp) -> bytes:
    """Blocking variant over a binary file-like object."""
    head = fp.read(4)
    if not head:
        raise EOFError("stream closed")
    if len(head) < 4:
        raise ProtocolError("stream ended inside a frame header")
    (length,) = _LEN.unpack(head)
    _check_length(length)
    body = fp.read(length)
    if len(body) != length:
        raise ProtocolError(f"stream ended inside a {length}-byte frame")
    return body


# messages

def encode_json(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


def decode_json(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON message: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    return obj


@dataclass(frozen=True)
class Request:
    id: int
    verb: str
    args: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "verb": self.verb, "args": self.args}


@dataclass(frozen=True)
class Response:
    id: int
    ok: bool
    value: Any = None
    error: dict | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "ok": self.ok}
        if self.ok:
            out["value"] = self.value
        else:
            out["error"] = self.error
        return out

    @classmethod
    def failure(cls, req_id: int, exc: SroskError) -> Response:
        return cls(req_id, False, error=exc.to_wire())


@dataclass(frozen=True)
class Notification:
    op: str
    fields: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {**self.fields, "op": self.op}


def parse_message(body: bytes):
    """Decode a frame body into a Request, Response or Notification."""
    obj = decode_json(body)
    if "id" not in obj:
        op = obj.pop("op", None)
        if not isinstance(op, str):
            raise ProtocolError("notification without 'op'")
        return Notification(op, obj)
    req_id = obj["id"]
    if not isinstance(req_id, int) or isinstance(req_id, bool) or not 0 <= req_id < 2**64:
        raise ProtocolError("message id must be an unsigned 64-bit integer")
    if "verb" in obj:
        if not isinstance(obj["verb"], str) or not isinstance(obj.get("args", {}), dict):
            raise ProtocolError("malformed request")
        return Request(req_id, obj["verb"], obj.get("args", {}))
    if "ok" in obj and isinstance(obj["ok"], bool):
        if obj["ok"]:
            return Response(req_id, True, obj.get("value"))
        error = obj.get("error")
        if not isinstance(error, dict) or "code" not in error:
            raise ProtocolError("failed response without error object")
        return Response(req_id, False, error=error)
    raise ProtocolError("message is neither request, response nor notification")


def encode_message(msg) -> bytes:
    return encode_json(msg.to_dict())


# connection headers

def type_digest(definition: str) -> str:
    return hashlib.sha256(definition.encode("utf-8")).hexdigest()


def _is_digest(value) -> bool:
    return isinstance(value, str) and len(value) == 64 and all(c in "0123456789abcdef" for c in value)


def subscribe_header(topic, node, type_name: str, digest: str) -> dict:
    return {"op": "subscribe", "topic": str(topic), "node": str(node),
            "type_name": type_name, "type_digest": digest}


def call_header(service, node) -> dict:
    return {"op": "call", "service": str(service), "node": str(node)}


def ack_header(type_name: str = "", digest: str = "") -> dict:
    return {"op": "ack", "type_name": type_name, "type_digest": digest}


def error_header(exc: SroskError) -> dict:
    return {"op": "error", **exc.to_wire()}


def validate_header(obj: dict) -> dict:
    op = obj.get("op")
    required = {
        "subscribe": ("topic", "node", "type_name", "type_digest"),
        "call": ("service", "node"),
        "ack": ("type_name", "type_digest"),
        "error": ("code",),
    }.get(op)
    if required is None:
        raise ProtocolError(f"unknown header op {op!r}")
    for key in required:
        if not isinstance(obj.get(key), str):
            raise ProtocolError(f"header {op!r} missing string field {key!r}")
    if op == "subscribe" and not _is_digest(obj["type_digest"]):
        raise ProtocolError("type_digest must be 64 lowercase hex characters")
    return obj


# channels

@dataclass
class Channel:
    """An established, peer-authenticated byte channel."""

    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter
    peer: Identity
    transport_name: str = "tls"

    async def send(self, body: bytes):
        await write_frame(self.writer, body)

    async def recv(self) -> bytes:
        return await read_frame(self.reader)

    async def send_json(self, obj: dict):
        await self.send(encode_json(obj))

    async def recv_json(self) -> dict:
        return decode_json(await self.recv())

    def close(self):
        if not self.writer.is_closing():
            self.writer.close()

    async def aclose(self):
        self.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, ssl.SSLError, OSError):
            pass

    @property
    def peer_address(self):
        return self.writer.get_extra_info("peername")


class Transport(Protocol):
    """Plug-in seam for channel security."""

    name: str

    async def establish(self, role: str, cfg: SecureChannelConfig, sock: socket.socket) -> Channel: ...


@dataclass
class SecureChannelConfig:
    keystore: Keystore
    transport: Transport | None = None
    min_version: ssl.TLSVersion = ssl.TLSVersion.TLSv1_2
    handshake_timeout: float = HANDSHAKE_TIMEOUT
    clock: Callable[[], dt.datetime] | None = None
    _contexts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.transport is None:
            self.transport = TlsTransport()
        if self.min_version < ssl.TLSVersion.TLSv1_2:
            raise ValueError("TLS 1.2 is the minimum protocol version")

    def now(self) -> dt.datetime:
        return self.clock() if self.clock else dt.datetime.now(dt.timezone.utc)

    @classmethod
    def from_keystore(cls, directory, **kwargs) -> SecureChannelConfig:
        return cls(Keystore.load(directory), **kwargs)

    def ssl_context(self, role: str) -> ssl.SSLContext:
        ctx = self._contexts.get(role)
        if ctx is None:
            ctx = _build_context(self.keystore, role, self.min_version)
            self._contexts[role] = ctx
        return ctx


def _build_context(keystore: Keystore, role: str, min_version) -> ssl.SSLContext:
    server = role == "server"
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER if server else ssl.PROTOCOL_TLS_CLIENT)
    ctx.minimum_version = min_version
    ctx.check_hostname = False
    # servers accept a missing client certificate at the TLS layer so the
    # absence can be reported as PeerCertMissing; presented certs are verified
    ctx.verify_mode = ssl.CERT_OPTIONAL if server else ssl.CERT_REQUIRED
    ctx.load_verify_locations(cadata=keystore.root_pem().decode("ascii"))
    # ssl only reads chains from files: leaf followed by intermediates
    fd, path = tempfile.mkstemp(suffix=".pem")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(keystore.cert_pem() + keystore.intermediates_pem())
        ctx.load_cert_chain(path, keyfile=str(keystore.key_path))
    except ssl.SSLError as exc:
        raise HandshakeFailed(f"local keystore unusable: {exc}") from None
    finally:
        os.unlink(path)
    return ctx


async def _open_streams(sock: socket.socket, ctx, server_side: bool, timeout: float):
    loop = asyncio.get_running_loop()
    reader = asyncio.StreamReader(limit=MAX_FRAME + 8)
    protocol = asyncio.StreamReaderProtocol(reader)
    kwargs = {}
    if ctx is not None:
        kwargs["ssl_handshake_timeout"] = timeout
    if server_side:
        transport, _ = await loop.connect_accepted_socket(lambda: protocol, sock, ssl=ctx, **kwargs)
    else:
        if ctx is not None:
            kwargs["server_hostname"] = "srosk-peer"
        transport, _ = await loop.create_connection(lambda: protocol, sock=sock, ssl=ctx, **kwargs)
    writer = asyncio.StreamWriter(transport, protocol, reader, loop)
    return reader, writer


async def exchange_hello(reader, writer, hello: dict, timeout: float) -> dict:
    """Send our hello frame and wait for the peer's.

    Under TLS 1.3 a client learns that the server rejected its certificate
    only on the next read, so both roles finish with this exchange.
    """
    try:
        await write_frame(writer, encode_json(hello))
        peer = decode_json(await asyncio.wait_for(read_frame(reader), timeout))
    except (EOFError, IoFailure, ProtocolError, asyncio.TimeoutError) as exc:
        raise HandshakeFailed(f"peer closed during handshake: {exc or type(exc).__name__}") from None
    if peer.get("op") != "hello":
        raise HandshakeFailed("peer did not complete the hello exchange")
    return peer


class TlsTransport:
    name = "tls"

    async def establish(self, role, cfg, sock) -> Channel:
        ctx = cfg.ssl_context(role)
        try:
            reader, writer = await _open_streams(sock, ctx, role == "server", cfg.handshake_timeout)
        except (ssl.SSLError, ConnectionError, OSError, asyncio.TimeoutError) as exc:
            sock.close()
            raise HandshakeFailed(f"TLS handshake failed: {exc or type(exc).__name__}") from None
        try:
            sslobj = writer.get_extra_info("ssl_object")
            der = sslobj.getpeercert(binary_form=True) if sslobj else None
            if not der:
                raise PeerCertMissing("peer presented no certificate")
            try:
                peer = cfg.keystore.verify_peer(der, now=cfg.now())
            except (VerificationError, SroskError) as exc:
                raise HandshakeFailed(f"peer certificate rejected: {exc.code}: {exc}") from exc
            await exchange_hello(reader, writer, {"op": "hello"}, cfg.handshake_timeout)
        except BaseException:
            writer.close()
            raise
        return Channel(reader, writer, peer, self.name)


async def establish_secure_channel(role: str, cfg: SecureChannelConfig, sock: socket.socket) -> Channel:
    if role not in ("client", "server"):
        raise ValueError(f"role must be 'client' or 'server', not {role!r}")
    return await cfg.transport.establish(role, cfg, sock)


async def _connect_socket(host: str, port: int) -> socket.socket:
    loop = asyncio.get_running_loop()
    try:
        infos = await loop.getaddrinfo(host, port, type=socket.SOCK_STREAM)
    except OSError as exc:
        raise IoFailure(f"cannot resolve {host}: {exc}") from None
    last = None
    for family, type_, proto, _, addr in infos:
        sock = socket.socket(family, type_, proto)
        sock.setblocking(False)
        try:
            await loop.sock_connect(sock, addr)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            sock.close()
            last = exc
    raise IoFailure(f"cannot connect to {host}:{port}: {last}")


async def connect(cfg: SecureChannelConfig, host: str, port: int) -> Channel:
    sock = await _connect_socket(host, port)
    return await establish_secure_channel("client", cfg, sock)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


def format_uri(host: str, port: int) -> str:
    return f"{host}:{port}"


class Listener:
    """Accept loop that authenticates each connection before handing it on."""

    def __init__(self, cfg: SecureChannelConfig, handler: Callable[[Channel], Awaitable[None]],
                 on_reject: Callable[[Exception], None] | None = None):
        self.cfg = cfg
        self.handler = handler
        self.on_reject = on_reject
        self.rejections: list[Exception] = []
        self.sock: socket.socket | None = None
        self._accept_task = None
        self._tasks: set[asyncio.Task] = set()

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> Listener:
        try:
            self.sock = socket.create_server((host, port), reuse_port=False)
        except OSError as exc:
            raise IoFailure(f"cannot bind {host}:{port}: {exc}") from None
        self.sock.setblocking(False)
        self._accept_task = asyncio.create_task(self._accept_loop())
        return self

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.sock.getsockname()[:2]
        return host, port

    @property
    def uri(self) -> str:
        return format_uri(*self.address)

    async def _accept_loop(self):
        loop = asyncio.get_running_loop()
        while True:
            try:
                conn, _ = await loop.sock_accept(self.sock)
            except OSError:
                return
            conn.setblocking(False)
            task = asyncio.create_task(self._serve(conn))
            self._tasks.add(task)
            task.add_done_callback(self._tasks.discard)

    async def _serve(self, conn: socket.socket):
        try:
            channel = await establish_secure_channel("server", self.cfg, conn)
        except HandshakeFailed as exc:
            self.rejections.append(exc)
            if self.on_reject:
                self.on_reject(exc)
            conn.close()
            return
        try:
            await self.handler(channel)
        finally:
            await channel.aclose()

    async def close(self):
        if self._accept_task:
            self._accept_task.cancel()
        if self.sock:
            self.sock.close()
        for task in list(self._tasks):
            task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
        if self._accept_task:
            await asyncio.gather(self._accept_task, return_exceptions=True)
