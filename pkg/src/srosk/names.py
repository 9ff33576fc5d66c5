"""Graph namespace paths: parsing, resolution and prefix tests."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InvalidName

_TOKEN = re.compile(r"[A-Za-z0-9_]+\Z")


@dataclass(frozen=True, order=True)
class NamespacePath:
    """Canonical absolute graph name. ``segments == ()`` is the root ``/``."""

    segments: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            if not isinstance(seg, str) or not _TOKEN.match(seg):
                raise InvalidName(f"illegal segment {seg!r}")

    def __str__(self) -> str:
        return "/" + "/".join(self.segments)

    def __repr__(self) -> str:
        return f"NamespacePath({str(self)!r})"

    @property
    def is_root(self) -> bool:
        return not self.segments

    @property
    def parent(self) -> NamespacePath:
        return NamespacePath(self.segments[:-1])

    @property
    def basename(self) -> str:
        return self.segments[-1] if self.segments else ""

    def child(self, *names: str) -> NamespacePath:
        return NamespacePath(self.segments + tuple(names))


ROOT = NamespacePath()


def _split(text: str) -> tuple[str, ...]:
    segs = tuple(s for s in text.split("/") if s)
    for seg in segs:
        if not _TOKEN.match(seg):
            raise InvalidName(f"illegal name segment {seg!r} in {text!r}")
    return segs


def parse_path(text) -> NamespacePath:
    """Parse an absolute name, collapsing repeated and trailing slashes."""
    if isinstance(text, NamespacePath):
        return text
    if not isinstance(text, str) or not text:
        raise InvalidName("empty name")
    if not text.startswith("/"):
        raise InvalidName(f"relative name without base: {text!r}")
    return NamespacePath(_split(text))


def resolve(base: NamespacePath, name: str) -> NamespacePath:
    if isinstance(name, NamespacePath):
        return name
    if not isinstance(name, str) or not name:
        raise InvalidName("empty name")
    if name.startswith("/"):
        return parse_path(name)
    return NamespacePath(base.segments + _split(name))


def render(path: NamespacePath) -> str:
    return str(path)


def is_prefix(ancestor: NamespacePath, descendant: NamespacePath) -> bool:
    n = len(ancestor.segments)
    return descendant.segments[:n] == ancestor.segments
