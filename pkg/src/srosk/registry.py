"""The graph registry: name lookup plus a policy enforcement point.

Each node keeps one authenticated channel open to the registry. Requests
arrive as JSON frames; the caller is always the channel's certificate
identity. Every verb is checked as ``graph_execute /<verb>`` and then, for
verbs that touch a resource, against the resource action. Notifications
(``publisherUpdate``, ``shutdown``, ``serviceSuperseded``) travel back over
the same channel in FIFO order.
"""

from __future__ import annotations

import asyncio
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .audit import EnforcementPoint, Enforcer, Mode, NullSink
from .errors import (
    BadRequest, IoFailure, NodeNotFound, NotRegistered, ParamNotFound, ProtocolError,
    ServiceNotFound, SroskError, TypeMismatch,
)
from .names import NamespacePath, parse_path
from .policy import Action, DenyOverrides, PolicyEvaluator
from .wire import (
    Channel, Listener, Notification, Request, Response, SecureChannelConfig, _is_digest,
    encode_message, parse_message,
)

log = logging.getLogger(__name__)

REGISTRY_NAME = "/master"


@dataclass
class Session:
    """One node's registry channel and its outbound FIFO."""

    channel: Channel
    name: NamespacePath
    outbox: asyncio.Queue = field(default_factory=asyncio.Queue)
    closed: bool = False
    writer_task: asyncio.Task | None = None

    def send(self, message):
        if not self.closed:
            self.outbox.put_nowait(message)

    async def pump(self):
        try:
            while True:
                message = await self.outbox.get()
                if message is None:
                    break
                await self.channel.send(encode_message(message))
        except (IoFailure, ConnectionError, OSError):
            pass
        finally:
            self.closed = True
            self.channel.close()

    def close_after_flush(self):
        if not self.closed:
            self.outbox.put_nowait(None)
            self.closed = True


@dataclass
class PublisherEntry:
    node: NamespacePath
    uri: str
    type_name: str
    type_digest: str


@dataclass
class GraphState:
    publishers: dict[NamespacePath, dict[NamespacePath, PublisherEntry]] = field(default_factory=dict)
    subscribers: dict[NamespacePath, dict[NamespacePath, Session]] = field(default_factory=dict)
    topic_types: dict[NamespacePath, tuple[str, str]] = field(default_factory=dict)
    services: dict[NamespacePath, tuple[NamespacePath, str]] = field(default_factory=dict)
    params: dict[NamespacePath, Any] = field(default_factory=dict)
    nodes: dict[NamespacePath, dict] = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {
            "publishers": {str(t): sorted(str(n) for n in pubs)
                           for t, pubs in sorted(self.publishers.items()) if pubs},
            "subscribers": {str(t): sorted(str(n) for n in subs)
                            for t, subs in sorted(self.subscribers.items()) if subs},
            "services": {str(s): str(owner) for s, (owner, _) in sorted(self.services.items())},
            "nodes": sorted(str(n) for n in self.nodes),
        }


def _arg(args: dict, key: str, kind=str):
    if key not in args:
        raise BadRequest(f"missing argument {key!r}")
    value = args[key]
    if kind is not None and not isinstance(value, kind):
        raise BadRequest(f"argument {key!r} must be {kind.__name__}")
    return value


def _name_arg(args: dict, key: str) -> NamespacePath:
    try:
        return parse_path(_arg(args, key))
    except SroskError as exc:
        raise BadRequest(f"argument {key!r}: {exc}") from None


class Registry:
    def __init__(self, cfg: SecureChannelConfig, mode: Mode = Mode.ENFORCE, sink=None,
                 evaluator: PolicyEvaluator | None = None,
                 clock: Callable[[], dt.datetime] | None = None,
                 snapshot_path: str | Path | None = None):
        self.cfg = cfg
        self.enforcer = Enforcer(Mode(mode), EnforcementPoint.REGISTRY, sink or NullSink(),
                                 evaluator or DenyOverrides(), clock)
        self.state = GraphState()
        self.sessions: dict[NamespacePath, Session] = {}
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self.listener: Listener | None = None
        self._verbs = {
            "register_publisher": self.register_publisher,
            "unregister_publisher": self.unregister_publisher,
            "register_subscriber": self.register_subscriber,
            "unregister_subscriber": self.unregister_subscriber,
            "get_param": self.get_param,
            "set_param": self.set_param,
            "delete_param": self.delete_param,
            "register_service": self.register_service,
            "unregister_service": self.unregister_service,
            "lookup_service": self.lookup_service,
            "get_system_state": self.get_system_state,
            "shutdown_node": self.shutdown_node,
        }
        if self.snapshot_path and self.snapshot_path.exists():
            self._load_snapshot()

    @property
    def mode(self) -> Mode:
        return self.enforcer.mode

    # lifecycle

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> Registry:
        self.listener = await Listener(self.cfg, self._serve_channel).start(host, port)
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self.listener.address

    @property
    def uri(self) -> str:
        return self.listener.uri

    async def close(self):
        for session in list(self.sessions.values()):
            session.close_after_flush()
        if self.listener:
            await self.listener.close()
        if self.snapshot_path:
            self._save_snapshot()

    def _save_snapshot(self):
        data = {"params": {str(k): v for k, v in sorted(self.state.params.items())}}
        try:
            self.snapshot_path.write_text(json.dumps(data, indent=2, sort_keys=True))
        except OSError as exc:
            log.error("cannot write registry snapshot %s: %s", self.snapshot_path, exc)

    def _load_snapshot(self):
        try:
            data = json.loads(self.snapshot_path.read_text())
            self.state.params = {parse_path(k): v for k, v in data.get("params", {}).items()}
        except (OSError, ValueError, SroskError) as exc:
            raise IoFailure(f"cannot load snapshot {self.snapshot_path}: {exc}") from None

    # connections

    async def _serve_channel(self, channel: Channel):
        name = channel.peer.name
        session = Session(channel, name)
        session.writer_task = asyncio.create_task(session.pump())
        previous = self.sessions.get(name)
        if previous is not None:
            self._drop_node(previous, Notification("shutdown", {"reason": "superseded"}))
        self.sessions[name] = session
        self.state.nodes[name] = {"uri": _peer_uri(channel), "last_seen": _now_iso()}
        try:
            while not session.closed:
                try:
                    body = await channel.recv()
                except EOFError:
                    break
                try:
                    msg = parse_message(body)
                except ProtocolError as exc:
                    log.warning("dropping %s: %s", name, exc)
                    break
                if not isinstance(msg, Request):
                    continue
                if self.sessions.get(name) is session:
                    self.state.nodes[name]["last_seen"] = _now_iso()
                session.send(self.dispatch(session, msg))
        except (IoFailure, ProtocolError) as exc:
            log.info("registry channel for %s closed: %s", name, exc)
        finally:
            if self.sessions.get(name) is session:
                self._drop_node(session, None)
            session.close_after_flush()
            await asyncio.gather(session.writer_task, return_exceptions=True)

    def dispatch(self, session: Session, req: Request) -> Response:
        handler = self._verbs.get(req.verb)
        if handler is None:
            return Response.failure(req.id, BadRequest(f"unknown verb {req.verb!r}"))
        try:
            value = handler(session, req.args)
        except SroskError as exc:
            return Response.failure(req.id, exc)
        return Response(req.id, True, value)

    def _check(self, session: Session, action: Action, scope):
        self.enforcer.check(session.channel.peer.profile, action, scope)

    def _verb(self, session: Session, verb: str):
        self._check(session, Action.GRAPH_EXECUTE, f"/{verb}")

    def _drop_node(self, session: Session, notice: Notification | None):
        """Remove every registration owned by ``session``'s node."""
        name = session.name
        if notice is not None:
            session.send(notice)
        session.close_after_flush()
        if self.sessions.get(name) is not session:
            return
        del self.sessions[name]
        self.state.nodes.pop(name, None)
        for topic in [t for t, pubs in self.state.publishers.items() if name in pubs]:
            del self.state.publishers[topic][name]
            self._publisher_update(topic)
            self._gc_topic(topic)
        for topic in [t for t, subs in self.state.subscribers.items() if name in subs]:
            del self.state.subscribers[topic][name]
            self._gc_topic(topic)
        for service in [s for s, (owner, _) in self.state.services.items() if owner == name]:
            del self.state.services[service]

    def _publisher_update(self, topic: NamespacePath):
        uris = sorted(e.uri for e in self.state.publishers.get(topic, {}).values())
        notice = Notification("publisherUpdate", {"topic": str(topic), "uris": uris})
        for sub in self.state.subscribers.get(topic, {}).values():
            sub.send(notice)

    def _gc_topic(self, topic: NamespacePath):
        if not self.state.publishers.get(topic):
            self.state.publishers.pop(topic, None)
        if not self.state.subscribers.get(topic):
            self.state.subscribers.pop(topic, None)
        if topic not in self.state.publishers and topic not in self.state.subscribers:
            self.state.topic_types.pop(topic, None)

    def _check_type(self, topic, type_name: str, digest: str):
        if not _is_digest(digest):
            raise BadRequest("type_digest must be 64 lowercase hex characters")
        fixed = self.state.topic_types.get(topic)
        if fixed is None:
            self.state.topic_types[topic] = (type_name, digest)
        elif fixed[1] != digest:
            raise TypeMismatch(f"{topic} carries {fixed[0]} ({fixed[1][:12]}), not {type_name} ({digest[:12]})")

    # verbs

    def register_publisher(self, session, args) -> int:
        topic = _name_arg(args, "topic")
        type_name, digest, uri = _arg(args, "type_name"), _arg(args, "type_digest"), _arg(args, "uri")
        self._verb(session, "register_publisher")
        self._check(session, Action.TOPIC_PUBLISH, topic)
        self._check_type(topic, type_name, digest)
        self.state.publishers.setdefault(topic, {})[session.name] = PublisherEntry(
            session.name, uri, type_name, digest)
        self._publisher_update(topic)
        return len(self.state.subscribers.get(topic, {}))

    def register_subscriber(self, session, args) -> list[str]:
        topic = _name_arg(args, "topic")
        type_name, digest = _arg(args, "type_name"), _arg(args, "type_digest")
        self._verb(session, "register_subscriber")
        self._check(session, Action.TOPIC_SUBSCRIBE, topic)
        self._check_type(topic, type_name, digest)
        self.state.subscribers.setdefault(topic, {})[session.name] = session
        return sorted(e.uri for e in self.state.publishers.get(topic, {}).values())

    def unregister_publisher(self, session, args) -> None:
        topic = _name_arg(args, "topic")
        self._verb(session, "unregister_publisher")
        if session.name not in self.state.publishers.get(topic, {}):
            raise NotRegistered(f"{session.name} does not publish {topic}")
        del self.state.publishers[topic][session.name]
        self._publisher_update(topic)
        self._gc_topic(topic)

    def unregister_subscriber(self, session, args) -> None:
        topic = _name_arg(args, "topic")
        self._verb(session, "unregister_subscriber")
        if session.name not in self.state.subscribers.get(topic, {}):
            raise NotRegistered(f"{session.name} does not subscribe to {topic}")
        del self.state.subscribers[topic][session.name]
        self._gc_topic(topic)

    def get_param(self, session, args):
        key = _name_arg(args, "key")
        self._verb(session, "get_param")
        self._check(session, Action.PARAM_READ, key)
        if key not in self.state.params:
            raise ParamNotFound(str(key))
        return self.state.params[key]

    def set_param(self, session, args) -> None:
        key = _name_arg(args, "key")
        value = _arg(args, "value", kind=None)
        self._verb(session, "set_param")
        self._check(session, Action.PARAM_WRITE, key)
        self.state.params[key] = value

    def delete_param(self, session, args) -> None:
        key = _name_arg(args, "key")
        self._verb(session, "delete_param")
        self._check(session, Action.PARAM_WRITE, key)
        if key not in self.state.params:
            raise ParamNotFound(str(key))
        del self.state.params[key]

    def register_service(self, session, args) -> None:
        name = _name_arg(args, "name")
        uri = _arg(args, "uri")
        self._verb(session, "register_service")
        self._check(session, Action.SERVICE_ADVERTISE, name)
        prior = self.state.services.get(name)
        if prior is not None and prior[0] != session.name:
            owner = self.sessions.get(prior[0])
            if owner is not None:
                owner.send(Notification("serviceSuperseded",
                                        {"service": str(name), "node": str(session.name)}))
        self.state.services[name] = (session.name, uri)

    def unregister_service(self, session, args) -> None:
        name = _name_arg(args, "name")
        self._verb(session, "unregister_service")
        prior = self.state.services.get(name)
        if prior is None or prior[0] != session.name:
            raise NotRegistered(f"{session.name} does not provide {name}")
        del self.state.services[name]

    def lookup_service(self, session, args) -> str:
        name = _name_arg(args, "name")
        self._verb(session, "lookup_service")
        self._check(session, Action.SERVICE_CALL, name)
        if name not in self.state.services:
            raise ServiceNotFound(str(name))
        return self.state.services[name][1]

    def get_system_state(self, session, args) -> dict:
        self._verb(session, "get_system_state")
        return self.state.snapshot()

    def shutdown_node(self, session, args) -> bool:
        target = _name_arg(args, "target")
        self._check(session, Action.GRAPH_EXECUTE, "/shutdown")
        self._check(session, Action.GRAPH_EXECUTE, NamespacePath(("shutdown",) + target.segments))
        victim = self.sessions.get(target)
        if victim is None:
            raise NodeNotFound(str(target))
        notice = Notification("shutdown", {"reason": f"requested by {session.name}"})
        if victim is session:
            # let this response reach the outbox before the session closes
            asyncio.get_running_loop().call_soon(self._drop_node, victim, notice)
        else:
            self._drop_node(victim, notice)
        return True


def _now_iso() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _peer_uri(channel: Channel) -> str:
    addr = channel.peer_address
    return f"{addr[0]}:{addr[1]}" if addr else ""
