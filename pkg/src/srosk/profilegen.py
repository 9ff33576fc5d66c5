"""AppArmor profile text from a node manifest and a small primitive library.

The rule contents below are defined by this project; they cover the
categories a node process needs (launcher signalling, its own executable,
interpreter or C++ shared libraries, sockets, keystore and log access) and
nothing else. Nothing is loaded into a kernel.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidPath, MissingParam, ParseFailure, UnknownPrimitive
from .names import parse_path

PRIMITIVES: dict[str, tuple[str, ...]] = {
    "node-base": (
        "signal (receive) peer=unconfined,",
        "{exe} mr,",
        "network unix stream,",
        "network unix dgram,",
        "/etc/hosts r,",
        "/etc/nsswitch.conf r,",
    ),
    "python-runtime": (
        "/usr/bin/python3* ix,",
        "/usr/lib/python3/** mr,",
        "/usr/lib/python3.*/** mr,",
        "/usr/local/lib/python3.*/** mr,",
        "/etc/ld.so.cache r,",
    ),
    "cpp-runtime": (
        "/etc/ld.so.cache r,",
        "/lib/** mr,",
        "/usr/lib/** mr,",
    ),
    "network-tls": (
        "network inet stream,",
        "network inet6 stream,",
        "/etc/ssl/certs/** r,",
    ),
    "keystore-read": (
        "{dir}/ r,",
        "{dir}/** r,",
    ),
    "log-write": (
        "{dir}/ r,",
        "{dir}/** rw,",
    ),
}
PARAMETERIZED = {"keystore-read", "log-write"}


@dataclass(frozen=True)
class NodeManifest:
    node_name: str
    executable_path: str
    primitives: tuple[str, ...] = ()
    extra_rules: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, data: dict) -> NodeManifest:
        try:
            return cls(str(data["node_name"]), str(data["executable_path"]),
                       tuple(data.get("primitives", ())), tuple(data.get("extra_rules", ())))
        except (KeyError, TypeError) as exc:
            raise ParseFailure(f"bad manifest: missing {exc}") from None

    @classmethod
    def load(cls, path) -> NodeManifest:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"{path}: {exc}") from None


def _absolute(path: str, what: str) -> str:
    if not path.startswith("/") or any(c.isspace() for c in path) or "\0" in path:
        raise InvalidPath(f"{what} must be an absolute path without spaces: {path!r}")
    return path


def expand(primitive: str, exe: str) -> list[str]:
    name, sep, arg = primitive.partition(":")
    if name not in PRIMITIVES:
        raise UnknownPrimitive(primitive)
    if name in PARAMETERIZED:
        if not sep or not arg:
            raise MissingParam(f"{name} needs a directory, as in {name}:/path")
        directory = _absolute(arg, name).rstrip("/")
        return [r.format(dir=directory) for r in PRIMITIVES[name]]
    if sep:
        raise UnknownPrimitive(f"{name} takes no parameter")
    return [r.format(exe=exe) for r in PRIMITIVES[name]]


def sanitize(node_name: str) -> str:
    return str(parse_path(node_name)).replace("/", ".")


def generate(manifest: NodeManifest) -> str:
    exe = _absolute(manifest.executable_path, "executable_path")
    rules = set()
    for primitive in manifest.primitives:
        rules.update(expand(primitive, exe))
    lines = [f"profile {sanitize(manifest.node_name)} {exe} {{"]
    lines += [f"  {r}" for r in sorted(rules)]
    lines += [f"  {r}" for r in manifest.extra_rules]
    lines.append("}")
    return "\n".join(lines) + "\n"


# lint

_HEADER = re.compile(r"^profile\s+(\S+)\s+(/\S*)\s*\{$")
_FILE_RULE = re.compile(r"^(?:(?:audit|deny|owner)\s+)*(/\S*)\s+([rwaklmix]+)\s*,$")
_WRITE_PERMS = set("wa")


@dataclass(frozen=True)
class Finding:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _too_broad(path: str) -> bool:
    return path == "/" or re.fullmatch(r"/\*+/?", path) is not None


def lint(text: str) -> list[Finding]:
    """Syntactic checks on profile text.

    Flags write access to ``/`` or ``/**``-style paths, ``capability``
    lines, and a missing node-base block.
    """
    lines = text.splitlines()
    header = None
    body = []
    closed = False
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            m = _HEADER.match(line)
            if not m:
                raise ParseFailure(f"line {no}: expected 'profile <name> <path> {{'")
            header = (no, m.group(1), m.group(2))
            continue
        if closed:
            raise ParseFailure(f"line {no}: content after closing brace")
        if line == "}":
            closed = True
            continue
        if not line.endswith(","):
            raise ParseFailure(f"line {no}: rule must end with ','")
        body.append((no, line))
    if header is None:
        raise ParseFailure("no profile header")
    if not closed:
        raise ParseFailure("profile is not closed with '}'")

    findings = []
    present = set()
    for no, line in body:
        present.add(line)
        words = line.rstrip(",").split()
        if words and words[0] == "capability" or (len(words) > 1 and words[0] in ("audit", "deny")
                                                   and words[1] == "capability"):
            findings.append(Finding(no, f"capability rule: {line}"))
            continue
        m = _FILE_RULE.match(line)
        if m and _too_broad(m.group(1)) and set(m.group(2)) & _WRITE_PERMS and not line.startswith("deny"):
            findings.append(Finding(no, f"write access to {m.group(1)}"))
    base = expand("node-base", header[2])
    if not all(rule in present for rule in base):
        findings.append(Finding(header[0], "node-base primitive missing"))
    return findings
