"""Run-time modes, JSONL security events, and policy training from logs.

Mode matrix (what happens to a decision at an enforcement point):

=========  ==================  ===========================
mode       allowed             denied
=========  ==================  ===========================
enforce    proceed, no event   refuse, event ``deny``
complain   proceed, no event   proceed, event ``would-deny``
audit      proceed, ``allow``  proceed, event ``would-deny``
=========  ==================  ===========================
"""

from __future__ import annotations

import datetime as dt
import enum
import json
import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

from .errors import InvalidName, IoFailure, LogMalformed, PermissionDenied
from .glob import compile_pattern
from .names import NamespacePath, parse_path
from .policy import (
    Action, Decision, DenyOverrides, Effect, PolicyEvaluator, PolicyProfile, PolicyRule,
    empty_profile, evaluate,
)

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    ENFORCE = "enforce"
    COMPLAIN = "complain"
    AUDIT = "audit"

    def __str__(self) -> str:
        return self.value


class EnforcementPoint(str, enum.Enum):
    REGISTRY = "registry"
    PEER = "peer"
    SELF = "self"

    def __str__(self) -> str:
        return self.value


ALLOW, DENY, WOULD_DENY = "allow", "deny", "would-deny"
_FIELDS = ("ts", "mode", "subject", "action", "scope", "decision", "enforcement_point")


def outcome(mode: Mode, allowed: bool) -> tuple[bool, str | None]:
    """Return ``(proceed, logged decision or None)`` for one verdict."""
    mode = Mode(mode)
    if allowed:
        return True, (ALLOW if mode == Mode.AUDIT else None)
    if mode == Mode.ENFORCE:
        return False, DENY
    return True, WOULD_DENY


def rfc3339(when: dt.datetime) -> str:
    when = when.astimezone(dt.timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass(frozen=True)
class AuditEvent:
    ts: str
    mode: Mode
    subject: NamespacePath
    action: Action
    scope: NamespacePath
    decision: str
    enforcement_point: EnforcementPoint
    matched_rule: str | None = None

    def to_dict(self) -> dict:
        out = {
            "ts": self.ts, "mode": self.mode.value, "subject": str(self.subject),
            "action": self.action.value, "scope": str(self.scope), "decision": self.decision,
            "enforcement_point": self.enforcement_point.value,
        }
        if self.matched_rule is not None:
            out["matched_rule"] = self.matched_rule
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> AuditEvent:
        if not isinstance(obj, dict):
            raise ValueError("event must be a JSON object")
        missing = [k for k in _FIELDS if k not in obj]
        if missing:
            raise ValueError(f"missing fields {missing}")
        mode = Mode(obj["mode"])
        decision = obj["decision"]
        if decision not in (ALLOW, DENY, WOULD_DENY):
            raise ValueError(f"unknown decision {decision!r}")
        if decision == DENY and mode != Mode.ENFORCE:
            raise ValueError("'deny' is only logged in enforce mode")
        if decision == WOULD_DENY and mode == Mode.ENFORCE:
            raise ValueError("'would-deny' is never logged in enforce mode")
        matched = obj.get("matched_rule")
        if matched is not None and not isinstance(matched, str):
            raise ValueError("matched_rule must be a string")
        if not isinstance(obj["ts"], str):
            raise ValueError("ts must be a string")
        try:
            return cls(obj["ts"], mode, parse_path(obj["subject"]), Action(obj["action"]),
                       parse_path(obj["scope"]), decision,
                       EnforcementPoint(obj["enforcement_point"]), matched)
        except InvalidName as exc:
            raise ValueError(str(exc)) from None

    @classmethod
    def from_json(cls, line: str) -> AuditEvent:
        return cls.from_dict(json.loads(line))


# sinks

class MemorySink:
    def __init__(self):
        self.events: list[AuditEvent] = []
        self._lock = threading.Lock()

    def write(self, event: AuditEvent):
        with self._lock:
            self.events.append(event)

    def lines(self) -> list[str]:
        return [e.to_json() for e in self.events]


class JsonlSink:
    """Appends one JSON object per line and flushes after each event."""

    def __init__(self, target):
        self._lock = threading.Lock()
        if isinstance(target, (str, Path)):
            try:
                self._fh = open(target, "a", encoding="utf-8")
            except OSError as exc:
                raise IoFailure(f"{target}: {exc}") from None
            self._owned = True
        else:
            self._fh = target
            self._owned = False

    def write(self, event: AuditEvent):
        line = event.to_json() + "\n"
        with self._lock:
            try:
                self._fh.write(line)
                self._fh.flush()
            except (OSError, ValueError) as exc:
                raise IoFailure(str(exc)) from None

    def close(self):
        if self._owned:
            self._fh.close()


class TeeSink:
    def __init__(self, *sinks):
        self.sinks = sinks

    def write(self, event: AuditEvent):
        for sink in self.sinks:
            sink.write(event)


class NullSink:
    def write(self, event: AuditEvent):
        pass


def emit(sink, event: AuditEvent):
    sink.write(event)


# enforcement

@dataclass
class Enforcer:
    """Evaluates one enforcement point's checks and applies the mode matrix."""

    mode: Mode
    point: EnforcementPoint
    sink: object = field(default_factory=NullSink)
    evaluator: PolicyEvaluator = field(default_factory=DenyOverrides)
    clock: Callable[[], dt.datetime] | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.point = EnforcementPoint(self.point)

    def decide(self, profile: PolicyProfile, action: Action, scope) -> tuple[bool, Decision]:
        scope = parse_path(scope)
        decision = self.evaluator.evaluate(profile, action, scope)
        proceed, logged = outcome(self.mode, decision.allowed)
        if logged is not None:
            now = self.clock() if self.clock else dt.datetime.now(dt.timezone.utc)
            emit(self.sink, AuditEvent(
                rfc3339(now), self.mode, profile.subject, Action(action), scope, logged,
                self.point, str(decision.matched) if decision.matched else None))
        return proceed, decision

    def check(self, profile: PolicyProfile, action: Action, scope) -> Decision:
        proceed, decision = self.decide(profile, action, scope)
        if not proceed:
            raise PermissionDenied(Action(action), parse_path(scope))
        return decision


# training

class TrainResult(NamedTuple):
    profiles: dict[NamespacePath, PolicyProfile]
    malformed: list[LogMalformed]


def iter_events(lines: Iterable[str], errors: list | None = None):
    """Yield parsed events; malformed lines are recorded in ``errors`` and skipped."""
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield AuditEvent.from_json(line)
        except (ValueError, TypeError, KeyError) as exc:
            err = LogMalformed(line_no, str(exc))
            log.warning("skipping malformed audit line %d: %s", line_no, exc)
            if errors is not None:
                errors.append(err)


def _normalize(events, errors) -> list[AuditEvent]:
    if isinstance(events, Path):
        events = events.read_text(encoding="utf-8").splitlines()
    elif isinstance(events, str):
        events = events.splitlines()
    events = list(events)
    if all(isinstance(e, AuditEvent) for e in events):
        return events
    return list(iter_events(events, errors))


def learnable(event: AuditEvent) -> bool:
    return event.decision in (ALLOW, WOULD_DENY)


def train(events, generalize_threshold: int | None = None) -> TrainResult:
    """Build minimal allow-only profiles covering every permitted event.

    ``events`` may be a list of :class:`AuditEvent`, JSONL lines, JSONL text
    or a path. With ``generalize_threshold=N``, N or more literal sibling
    scopes under one parent collapse into ``<parent>/*``.
    """
    if generalize_threshold is not None and generalize_threshold < 2:
        raise ValueError("generalize_threshold must be >= 2 or None")
    errors: list[LogMalformed] = []
    seen: dict[NamespacePath, dict[Action, set[NamespacePath]]] = defaultdict(lambda: defaultdict(set))
    for event in _normalize(events, errors):
        if learnable(event):
            seen[event.subject][event.action].add(event.scope)

    profiles = {}
    for subject, per_action in seen.items():
        rules = []
        for action, scopes in per_action.items():
            for pattern in _patterns(scopes, generalize_threshold):
                rules.append(PolicyRule(Effect.ALLOW, action, compile_pattern(pattern)))
        profiles[subject] = PolicyProfile(subject, tuple(sorted(rules, key=PolicyRule.sort_key)))
    return TrainResult(dict(sorted(profiles.items())), errors)


def _patterns(scopes: set[NamespacePath], threshold: int | None) -> list[str]:
    if not threshold:
        return sorted(str(s) for s in scopes)
    by_parent = defaultdict(set)
    out = set()
    for scope in scopes:
        if scope.is_root:
            out.add(str(scope))
        else:
            by_parent[scope.parent].add(scope)
    for parent, children in by_parent.items():
        if len(children) >= threshold:
            out.add("/*" if parent.is_root else f"{parent}/*")
        else:
            out.update(str(c) for c in children)
    return sorted(out)


@dataclass(frozen=True)
class Violation:
    subject: NamespacePath
    action: Action
    scope: NamespacePath

    def __str__(self) -> str:
        return f"{self.subject} {self.action.value} {self.scope}"


def check_roundtrip(profiles: dict, events) -> list[Violation]:
    """Replay every learnable event against ``profiles``; report the denials."""
    out = []
    seen = set()
    for event in _normalize(events, []):
        if not learnable(event):
            continue
        key = (event.subject, event.action, event.scope)
        if key in seen:
            continue
        seen.add(key)
        profile = profiles.get(event.subject) or empty_profile(event.subject)
        if not evaluate(profile, event.action, event.scope).allowed:
            out.append(Violation(*key))
    return out
