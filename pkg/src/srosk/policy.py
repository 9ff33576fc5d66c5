"""Allow/deny rules over namespace globs, evaluated deny-overrides, default deny.

Profile text format::

    profile /talker
    # comments and blank lines are ignored
    allow topic_publish /chatter
    deny param_write /secret/**
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Protocol

from .errors import PatternSyntax, ProfileSyntax
from .glob import GlobPattern, compile_pattern
from .names import NamespacePath, parse_path


class Action(str, enum.Enum):
    TOPIC_PUBLISH = "topic_publish"
    TOPIC_SUBSCRIBE = "topic_subscribe"
    SERVICE_ADVERTISE = "service_advertise"
    SERVICE_CALL = "service_call"
    PARAM_READ = "param_read"
    PARAM_WRITE = "param_write"
    GRAPH_EXECUTE = "graph_execute"

    def __str__(self) -> str:
        return self.value


class Effect(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"

    def __str__(self) -> str:
        return self.value


_ACTION_ORDER = {a: i for i, a in enumerate(Action)}


@dataclass(frozen=True)
class PolicyRule:
    effect: Effect
    action: Action
    scope: GlobPattern

    @classmethod
    def make(cls, effect, action, scope) -> PolicyRule:
        if not isinstance(scope, GlobPattern):
            scope = compile_pattern(scope)
        return cls(Effect(effect), Action(action), scope)

    def sort_key(self):
        # deny first, then action, then pattern source
        return (self.effect != Effect.DENY, _ACTION_ORDER[self.action], self.scope.source)

    def __str__(self) -> str:
        return f"{self.effect.value} {self.action.value} {self.scope.source}"


@dataclass(frozen=True)
class PolicyProfile:
    subject: NamespacePath
    rules: tuple[PolicyRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "subject", parse_path(self.subject))
        object.__setattr__(self, "rules", tuple(self.rules))

    @cached_property
    def _ordered(self) -> tuple[PolicyRule, ...]:
        return tuple(sorted(set(self.rules), key=PolicyRule.sort_key))

    def sorted_rules(self) -> list[PolicyRule]:
        return list(self._ordered)

    def actions(self) -> set[Action]:
        return {r.action for r in self.rules}

    def with_rules(self, *rules: PolicyRule) -> PolicyProfile:
        return PolicyProfile(self.subject, self.rules + tuple(rules))


@dataclass(frozen=True)
class Decision:
    verdict: Effect
    matched: PolicyRule | None = None
    default_used: bool = False

    @property
    def allowed(self) -> bool:
        return self.verdict == Effect.ALLOW


def evaluate(profile: PolicyProfile, action: Action, path) -> Decision:
    action = Action(action)
    text = str(path)
    allow = None
    for rule in profile._ordered:
        if rule.action != action or not rule.scope.match(text):
            continue
        if rule.effect == Effect.DENY:
            return Decision(Effect.DENY, rule)
        if allow is None:
            allow = rule
    if allow is not None:
        return Decision(Effect.ALLOW, allow)
    return Decision(Effect.DENY, None, default_used=True)


class PolicyEvaluator(Protocol):
    """Plug-in seam for policy interpretation."""

    def evaluate(self, profile: PolicyProfile, action: Action, path) -> Decision: ...


class DenyOverrides:
    name = "default"

    def evaluate(self, profile, action, path) -> Decision:
        return evaluate(profile, action, path)


class PolicyOff:
    """Disables authorization; every request is allowed without a matched rule."""

    name = "off"

    def evaluate(self, profile, action, path) -> Decision:
        return Decision(Effect.ALLOW)


@dataclass
class CountingEvaluator:
    """Wraps an evaluator and records every call, for instrumentation."""

    inner: PolicyEvaluator = field(default_factory=DenyOverrides)
    calls: list = field(default_factory=list)

    def evaluate(self, profile, action, path) -> Decision:
        self.calls.append((profile.subject, Action(action), str(path)))
        return self.inner.evaluate(profile, action, path)


EVALUATORS = {"default": DenyOverrides, "off": PolicyOff}


def serialize_profile(profile: PolicyProfile) -> str:
    lines = [f"profile {profile.subject}"]
    lines.extend(str(r) for r in profile.sorted_rules())
    return "\n".join(lines) + "\n"


def parse_rule(text: str) -> PolicyRule:
    parts = text.split()
    if len(parts) != 3:
        raise ProfileSyntax(f"expected '<allow|deny> <action> <pattern>', got {text!r}")
    effect, action, pattern = parts
    try:
        effect = Effect(effect)
    except ValueError:
        raise ProfileSyntax(f"unknown effect {effect!r}") from None
    try:
        action = Action(action)
    except ValueError:
        raise ProfileSyntax(f"unknown action {action!r}") from None
    try:
        scope = compile_pattern(pattern)
    except PatternSyntax as exc:
        raise ProfileSyntax(f"bad pattern: {exc}") from None
    return PolicyRule(effect, action, scope)


def parse_profile(text: str) -> PolicyProfile:
    subject = None
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if subject is None:
            head, _, name = line.partition(" ")
            if head != "profile" or not name.strip():
                raise ProfileSyntax(f"line {lineno}: missing 'profile <name>' header")
            try:
                subject = parse_path(name.strip())
            except Exception as exc:
                raise ProfileSyntax(f"line {lineno}: bad subject: {exc}") from None
            continue
        try:
            rules.append(parse_rule(line))
        except ProfileSyntax as exc:
            raise ProfileSyntax(f"line {lineno}: {exc.reason}") from None
    if subject is None:
        raise ProfileSyntax("missing 'profile <name>' header")
    return PolicyProfile(subject, tuple(rules))


def empty_profile(subject) -> PolicyProfile:
    return PolicyProfile(parse_path(subject))


def profile_from_rules(subject, rules: Iterable[str]) -> PolicyProfile:
    return PolicyProfile(parse_path(subject), tuple(parse_rule(r) for r in rules))
