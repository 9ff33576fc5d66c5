"""Node client library: registry session, topics and services.

Every endpoint checks its own node's profile first (enforcement point
``self``), then asks the registry, and finally authorizes the remote peer
from the peer certificate when the data channel is opened (point ``peer``).
Both ends of a topic or service channel check each other.
"""

from __future__ import annotations

import asyncio
import collections
import datetime as dt
import inspect
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from .audit import EnforcementPoint, Enforcer, Mode, NullSink
from .errors import (
    HandshakeFailed, IoFailure, NameMismatch, PermissionDenied, ProtocolError, SroskError,
    Timeout, TypeMismatch, from_wire,
)
from .names import NamespacePath, parse_path, resolve
from .policy import Action, DenyOverrides, PolicyEvaluator
from .registry import REGISTRY_NAME
from .wire import (
    Channel, Listener, Notification, Request, Response, SecureChannelConfig, ack_header,
    call_header, connect, encode_message, error_header, parse_address, parse_message,
    subscribe_header, type_digest, validate_header,
)

log = logging.getLogger(__name__)

DEFAULT_QUEUE = 64
HEADER_TIMEOUT = 10.0


async def _maybe_await(value):
    if inspect.isawaitable(value):
        return await value
    return value


class RegistryClient:
    """Request/response multiplexer over the node's registry channel."""

    def __init__(self, channel: Channel, on_notification: Callable[[Notification], None]):
        self.channel = channel
        self.on_notification = on_notification
        self.calls = 0
        self._ids = itertools.count(1)
        self._pending: dict[int, asyncio.Future] = {}
        self._reader = asyncio.create_task(self._read_loop())
        self.closed = asyncio.Event()

    async def _read_loop(self):
        try:
            while True:
                msg = parse_message(await self.channel.recv())
                if isinstance(msg, Response):
                    fut = self._pending.pop(msg.id, None)
                    if fut is not None and not fut.done():
                        fut.set_result(msg)
                elif isinstance(msg, Notification):
                    try:
                        self.on_notification(msg)
                    except Exception:
                        log.exception("notification handler failed")
        except (EOFError, IoFailure, ProtocolError) as exc:
            log.debug("registry channel closed: %s", exc)
        finally:
            self.closed.set()
            for fut in self._pending.values():
                if not fut.done():
                    fut.set_exception(IoFailure("registry connection lost"))
            self._pending.clear()

    async def call(self, verb: str, **args) -> Any:
        if self.closed.is_set():
            raise IoFailure("registry connection lost")
        self.calls += 1
        req = Request(next(self._ids), verb, args)
        fut = asyncio.get_running_loop().create_future()
        self._pending[req.id] = fut
        await self.channel.send(encode_message(req))
        resp: Response = await fut
        if not resp.ok:
            raise from_wire(resp.error)
        return resp.value

    async def close(self):
        self._reader.cancel()
        await asyncio.gather(self._reader, return_exceptions=True)
        await self.channel.aclose()


@dataclass
class _Link:
    """A connected subscriber as seen from the publisher."""

    channel: Channel
    queue: collections.deque
    wakeup: asyncio.Event = field(default_factory=asyncio.Event)
    dropped: int = 0
    sent: int = 0

    def push(self, data: bytes):
        if len(self.queue) == self.queue.maxlen:
            self.dropped += 1
        self.queue.append(data)
        self.wakeup.set()


class Publisher:
    def __init__(self, node: Node, topic: NamespacePath, type_name: str, type_definition: str,
                 queue_size: int):
        self.node = node
        self.topic = topic
        self.type_name = type_name
        self.digest = type_digest(type_definition)
        self.queue_size = queue_size
        self.links: list[_Link] = []
        self.rejected: list[SroskError] = []
        self.listener: Listener | None = None
        self._changed = asyncio.Condition()
        self.closed = False

    @property
    def subscriber_count(self) -> int:
        return len(self.links)

    @property
    def subscribers(self) -> list[NamespacePath]:
        return [link.channel.peer.name for link in self.links]

    async def _reject(self, channel: Channel, exc: SroskError):
        self.rejected.append(exc)
        try:
            await channel.send_json(error_header(exc))
        except (IoFailure, ConnectionError):
            pass

    async def _accept(self, channel: Channel):
        try:
            header = validate_header(await asyncio.wait_for(channel.recv_json(), HEADER_TIMEOUT))
        except (EOFError, SroskError, asyncio.TimeoutError) as exc:
            log.info("%s: dropping subscriber without header: %s", self.topic, exc)
            return
        peer = channel.peer
        if header["op"] != "subscribe" or header["topic"] != str(self.topic):
            await self._reject(channel, ProtocolError(f"expected subscribe header for {self.topic}"))
            return
        if header["node"] != str(peer.name):
            await self._reject(channel, ProtocolError("header node does not match certificate"))
            return
        if self.node.peer_check:
            proceed, _ = self.node.peer_enforcer.decide(peer.profile, Action.TOPIC_SUBSCRIBE, self.topic)
            if not proceed:
                await self._reject(channel, PermissionDenied(Action.TOPIC_SUBSCRIBE, self.topic))
                return
        if header["type_digest"] != self.digest:
            await self._reject(channel, TypeMismatch(f"{self.topic} is {self.type_name}"))
            return
        await channel.send_json(ack_header(self.type_name, self.digest))
        link = _Link(channel, collections.deque(maxlen=self.queue_size))
        async with self._changed:
            self.links.append(link)
            self._changed.notify_all()
        try:
            await self._drain(link)
        finally:
            async with self._changed:
                self.links.remove(link)
                self._changed.notify_all()

    async def _drain(self, link: _Link):
        watcher = asyncio.create_task(link.channel.reader.read(1))
        try:
            while not self.closed:
                waiter = asyncio.create_task(link.wakeup.wait())
                done, _ = await asyncio.wait({waiter, watcher}, return_when=asyncio.FIRST_COMPLETED)
                if watcher in done:
                    waiter.cancel()
                    return  # subscriber went away
                link.wakeup.clear()
                while link.queue:
                    await link.channel.send(link.queue.popleft())
                    link.sent += 1
        except (IoFailure, ConnectionError):
            return
        finally:
            watcher.cancel()

    def publish(self, data: bytes):
        """Queue ``data`` for every connected subscriber (drop-oldest when full)."""
        if self.closed:
            raise IoFailure(f"publisher for {self.topic} is closed")
        if not isinstance(data, (bytes, bytearray)) or not data:
            raise ProtocolError("payload must be non-empty bytes")
        for link in list(self.links):
            link.push(bytes(data))

    async def flush(self, timeout: float = 10.0):
        """Wait until every queued payload has been handed to the transport."""
        async def drained():
            while any(link.queue for link in self.links):
                await asyncio.sleep(0.005)
        await asyncio.wait_for(drained(), timeout)

    async def wait_for_subscribers(self, count: int = 1, timeout: float = 10.0):
        async with self._changed:
            await asyncio.wait_for(
                self._changed.wait_for(lambda: len(self.links) >= count), timeout)

    async def close(self):
        if self.closed:
            return
        self.closed = True
        for link in self.links:
            link.wakeup.set()
        try:
            await self.node.registry.call("unregister_publisher", topic=str(self.topic))
        except SroskError:
            pass
        if self.listener:
            await self.listener.close()
        self.node._publishers.discard(self)


class Subscription:
    def __init__(self, node: Node, topic: NamespacePath, type_name: str, type_definition: str,
                 callback: Callable[[bytes], Any], on_error: Callable[[Exception], None] | None):
        self.node = node
        self.topic = topic
        self.type_name = type_name
        self.digest = type_digest(type_definition)
        self.callback = callback
        self.on_error = on_error
        self.errors: list[Exception] = []
        self.received = 0
        self.connected: dict[str, NamespacePath] = {}
        self._links: dict[str, asyncio.Task] = {}
        self._inbox: asyncio.Queue = asyncio.Queue()
        self._dispatcher = asyncio.create_task(self._dispatch())
        self._changed = asyncio.Condition()
        self.closed = False

    def _fail(self, exc: Exception):
        self.errors.append(exc)
        if self.on_error:
            self.on_error(exc)

    async def _dispatch(self):
        while True:
            data = await self._inbox.get()
            self.received += 1
            try:
                await _maybe_await(self.callback(data))
            except Exception:
                log.exception("subscriber callback for %s failed", self.topic)

    def update(self, uris):
        if self.closed:
            return
        uris = set(uris)
        for uri in list(self._links):
            if uri not in uris:
                self._links.pop(uri).cancel()
        for uri in uris:
            if uri not in self._links:
                self._links[uri] = asyncio.create_task(self._connect(uri))

    async def _connect(self, uri: str):
        channel = None
        try:
            host, port = self.node.dial(*parse_address(uri))
            channel = await connect(self.node.cfg, host, port)
            peer = channel.peer
            if self.node.peer_check:
                proceed, _ = self.node.peer_enforcer.decide(peer.profile, Action.TOPIC_PUBLISH, self.topic)
                if not proceed:
                    raise PermissionDenied(Action.TOPIC_PUBLISH, self.topic)
            await channel.send_json(subscribe_header(self.topic, self.node.name, self.type_name, self.digest))
            reply = validate_header(await asyncio.wait_for(channel.recv_json(), HEADER_TIMEOUT))
            if reply["op"] == "error":
                raise from_wire(reply)
            if reply["op"] != "ack":
                raise ProtocolError(f"unexpected reply {reply['op']!r}")
            if reply["type_digest"] != self.digest:
                raise TypeMismatch(f"publisher of {self.topic} sends {reply['type_name']}")
            async with self._changed:
                self.connected[uri] = peer.name
                self._changed.notify_all()
            while True:
                try:
                    data = await channel.recv()
                except EOFError:
                    break
                self._inbox.put_nowait(data)
        except asyncio.CancelledError:
            raise
        except (SroskError, asyncio.TimeoutError, EOFError, OSError) as exc:
            if isinstance(exc, asyncio.TimeoutError):
                exc = Timeout(f"no header reply from {uri}")
            elif isinstance(exc, EOFError):
                exc = HandshakeFailed(f"{uri} closed before acknowledging")
            log.info("%s: link to %s failed: %s", self.topic, uri, exc)
            self._fail(exc)
        finally:
            self.connected.pop(uri, None)
            if channel is not None:
                channel.close()

    async def wait_for_publishers(self, count: int = 1, timeout: float = 10.0):
        async with self._changed:
            await asyncio.wait_for(
                self._changed.wait_for(lambda: len(self.connected) >= count), timeout)

    async def wait_for_messages(self, count: int, timeout: float = 10.0):
        async def reached():
            while self.received < count or not self._inbox.empty():
                await asyncio.sleep(0.005)
        await asyncio.wait_for(reached(), timeout)

    async def wait_for_error(self, timeout: float = 10.0) -> Exception:
        async def first():
            while not self.errors:
                await asyncio.sleep(0.005)
            return self.errors[0]
        return await asyncio.wait_for(first(), timeout)

    async def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            await self.node.registry.call("unregister_subscriber", topic=str(self.topic))
        except SroskError:
            pass
        tasks = list(self._links.values()) + [self._dispatcher]
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        self.node._subscriptions.pop(self.topic, None)


class ServiceServer:
    def __init__(self, node: Node, name: NamespacePath, handler: Callable[[bytes], Any]):
        self.node = node
        self.name = name
        self.handler = handler
        self.listener: Listener | None = None
        self.rejected: list[SroskError] = []
        self.superseded_by: NamespacePath | None = None
        self.closed = False

    async def _accept(self, channel: Channel):
        try:
            header = validate_header(await asyncio.wait_for(channel.recv_json(), HEADER_TIMEOUT))
        except (EOFError, SroskError, asyncio.TimeoutError):
            return
        peer = channel.peer
        exc = None
        if header["op"] != "call" or header["service"] != str(self.name):
            exc = ProtocolError(f"expected call header for {self.name}")
        elif header["node"] != str(peer.name):
            exc = ProtocolError("header node does not match certificate")
        elif self.node.peer_check:
            proceed, _ = self.node.peer_enforcer.decide(peer.profile, Action.SERVICE_CALL, self.name)
            if not proceed:
                exc = PermissionDenied(Action.SERVICE_CALL, self.name)
        if exc is not None:
            self.rejected.append(exc)
            await channel.send_json(error_header(exc))
            return
        await channel.send_json(ack_header())
        try:
            request = await channel.recv()
            response = await _maybe_await(self.handler(request))
            await channel.send(bytes(response))
        except (EOFError, SroskError) as err:
            log.info("service %s: call from %s aborted: %s", self.name, peer.name, err)
        except Exception:
            log.exception("service handler for %s failed", self.name)

    async def close(self):
        if self.closed:
            return
        self.closed = True
        if self.superseded_by is None:
            try:
                await self.node.registry.call("unregister_service", name=str(self.name))
            except SroskError:
                pass
        if self.listener:
            await self.listener.close()
        self.node._services.pop(self.name, None)


class Node:
    """A graph participant. Create with :meth:`Node.init` (or :func:`node_init`)."""

    def __init__(self, name: NamespacePath, cfg: SecureChannelConfig, mode: Mode = Mode.ENFORCE,
                 *, sink=None, evaluator: PolicyEvaluator | None = None,
                 self_check: bool = True, peer_check: bool = True,
                 clock: Callable[[], dt.datetime] | None = None,
                 dial: Callable[[str, int], tuple[str, int]] | None = None,
                 host: str = "127.0.0.1"):
        self.name = name
        self.cfg = cfg
        self.mode = Mode(mode)
        evaluator = evaluator or DenyOverrides()
        sink = sink or NullSink()
        self.self_enforcer = Enforcer(self.mode, EnforcementPoint.SELF, sink, evaluator, clock)
        self.peer_enforcer = Enforcer(self.mode, EnforcementPoint.PEER, sink, evaluator, clock)
        self.self_check = self_check
        self.peer_check = peer_check
        self.profile = cfg.keystore.profile
        self.host = host
        self._dial = dial
        self.registry: RegistryClient | None = None
        self.shutdown_event = asyncio.Event()
        self.shutdown_reason: str | None = None
        self._publishers: set[Publisher] = set()
        self._subscriptions: dict[NamespacePath, Subscription] = {}
        self._services: dict[NamespacePath, ServiceServer] = {}

    @classmethod
    async def init(cls, name, keystore, registry_address, mode: Mode = Mode.ENFORCE, *,
                   transport=None, registry_name: str | None = REGISTRY_NAME, **kwargs) -> Node:
        name = parse_path(name)
        if isinstance(keystore, SecureChannelConfig):
            cfg = keystore
        else:
            cfg = SecureChannelConfig.from_keystore(keystore, transport=transport,
                                                    clock=kwargs.get("clock"))
        if cfg.keystore.name != name:
            raise NameMismatch(f"keystore belongs to {cfg.keystore.name}, not {name}")
        node = cls(name, cfg, mode, **kwargs)
        host, port = registry_address if isinstance(registry_address, tuple) else parse_address(registry_address)
        channel = await connect(cfg, host, port)
        if registry_name is not None and channel.peer.name != parse_path(registry_name):
            channel.close()
            raise HandshakeFailed(f"registry identifies as {channel.peer.name}, expected {registry_name}")
        node.registry = RegistryClient(channel, node._on_notification)
        return node

    @property
    def namespace(self) -> NamespacePath:
        return self.name.parent

    def resolve(self, name) -> NamespacePath:
        return resolve(self.namespace, name)

    def dial(self, host: str, port: int) -> tuple[str, int]:
        return self._dial(host, port) if self._dial else (host, port)

    def _self_check(self, action: Action, scope: NamespacePath):
        if self.self_check:
            self.self_enforcer.check(self.profile, action, scope)

    def _on_notification(self, note: Notification):
        if note.op == "publisherUpdate":
            sub = self._subscriptions.get(parse_path(note.fields.get("topic", "/")))
            if sub is not None:
                sub.update(note.fields.get("uris", []))
        elif note.op == "serviceSuperseded":
            server = self._services.get(parse_path(note.fields.get("service", "/")))
            if server is not None:
                server.superseded_by = parse_path(note.fields.get("node", "/"))
        elif note.op == "shutdown":
            self.shutdown_reason = note.fields.get("reason", "")
            self.shutdown_event.set()
        else:
            log.debug("ignoring notification %s", note.op)

    # topics

    async def advertise(self, topic, type_name: str, type_definition: str,
                        queue_size: int = DEFAULT_QUEUE) -> Publisher:
        topic = self.resolve(topic)
        self._self_check(Action.TOPIC_PUBLISH, topic)
        pub = Publisher(self, topic, type_name, type_definition, queue_size)
        pub.listener = await Listener(self.cfg, pub._accept).start(self.host, 0)
        try:
            await self.registry.call("register_publisher", topic=str(topic), type_name=type_name,
                                     type_digest=pub.digest, uri=pub.listener.uri)
        except BaseException:
            await pub.listener.close()
            raise
        self._publishers.add(pub)
        return pub

    async def subscribe(self, topic, type_name: str, type_definition: str,
                        callback: Callable[[bytes], Any],
                        on_error: Callable[[Exception], None] | None = None) -> Subscription:
        topic = self.resolve(topic)
        self._self_check(Action.TOPIC_SUBSCRIBE, topic)
        sub = Subscription(self, topic, type_name, type_definition, callback, on_error)
        self._subscriptions[topic] = sub
        try:
            uris = await self.registry.call("register_subscriber", topic=str(topic),
                                            type_name=type_name, type_digest=sub.digest)
        except BaseException:
            self._subscriptions.pop(topic, None)
            sub._dispatcher.cancel()
            raise
        sub.update(uris)
        return sub

    # services

    async def serve(self, service_name, handler: Callable[[bytes], Any]) -> ServiceServer:
        name = self.resolve(service_name)
        self._self_check(Action.SERVICE_ADVERTISE, name)
        server = ServiceServer(self, name, handler)
        server.listener = await Listener(self.cfg, server._accept).start(self.host, 0)
        try:
            await self.registry.call("register_service", name=str(name), uri=server.listener.uri)
        except BaseException:
            await server.listener.close()
            raise
        self._services[name] = server
        return server

    async def call(self, service_name, request: bytes, timeout: float = 10.0) -> bytes:
        name = self.resolve(service_name)
        self._self_check(Action.SERVICE_CALL, name)
        uri = await self.registry.call("lookup_service", name=str(name))
        channel = None

        async def exchange() -> bytes:
            nonlocal channel
            host, port = self.dial(*parse_address(uri))
            channel = await connect(self.cfg, host, port)
            if self.peer_check:
                proceed, _ = self.peer_enforcer.decide(channel.peer.profile, Action.SERVICE_ADVERTISE, name)
                if not proceed:
                    raise PermissionDenied(Action.SERVICE_ADVERTISE, name)
            await channel.send_json(call_header(name, self.name))
            reply = validate_header(await channel.recv_json())
            if reply["op"] == "error":
                raise from_wire(reply)
            if reply["op"] != "ack":
                raise ProtocolError(f"unexpected reply {reply['op']!r}")
            await channel.send(bytes(request))
            try:
                return await channel.recv()
            except EOFError:
                raise ProtocolError(f"service {name} closed without responding") from None

        try:
            return await asyncio.wait_for(exchange(), timeout)
        except asyncio.TimeoutError:
            raise Timeout(f"call to {name} timed out after {timeout}s") from None
        except EOFError:
            raise ProtocolError(f"service {name} closed during the call") from None
        finally:
            if channel is not None:
                channel.close()

    # parameters and graph verbs

    async def get_param(self, key):
        key = self.resolve(key)
        self._self_check(Action.PARAM_READ, key)
        return await self.registry.call("get_param", key=str(key))

    async def set_param(self, key, value):
        key = self.resolve(key)
        self._self_check(Action.PARAM_WRITE, key)
        await self.registry.call("set_param", key=str(key), value=value)

    async def delete_param(self, key):
        key = self.resolve(key)
        self._self_check(Action.PARAM_WRITE, key)
        await self.registry.call("delete_param", key=str(key))

    async def get_system_state(self) -> dict:
        return await self.registry.call("get_system_state")

    async def shutdown_node(self, target) -> bool:
        return await self.registry.call("shutdown_node", target=str(self.resolve(target)))

    async def close(self):
        for sub in list(self._subscriptions.values()):
            await sub.close()
        for pub in list(self._publishers):
            await pub.close()
        for server in list(self._services.values()):
            await server.close()
        if self.registry:
            await self.registry.close()

    async def __aenter__(self) -> Node:
        return self

    async def __aexit__(self, *exc):
        await self.close()


async def node_init(name, keystore, registry_address, mode: Mode = Mode.ENFORCE, **kwargs) -> Node:
    return await Node.init(name, keystore, registry_address, mode, **kwargs)
