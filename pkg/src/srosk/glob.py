"""AppArmor-style namespace globs.

Grammar over canonical path text:

* literal characters from ``[A-Za-z0-9_]`` and ``/``
* ``*``   zero or more characters other than ``/``
* ``**``  zero or more characters, ``/`` included
* ``?``   exactly one character other than ``/``
* ``[abc]``, ``[a-z]``, ``[^abc]``  one name character in / not in the set
* ``{x,y,...}``  alternation of pattern fragments, nesting depth at most 4

A ``/**`` that ends the pattern, or is followed by ``/``, ``,`` or ``}``, also
matches the empty string, so ``/a/**`` matches ``/a`` itself and
``/a/**/b`` matches ``/a/b``.

Patterns compile to a Thompson NFA which is determinized lazily, one
``(state set, character)`` transition at a time, so matching is linear in
the length of the path and never backtracks.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache

from .errors import PatternSyntax
from .names import NamespacePath

NAME_CHARS = frozenset(string.ascii_letters + string.digits + "_")
ALL_CHARS = NAME_CHARS | {"/"}
MAX_ALT_DEPTH = 4

# AST node tags
_LIT, _SET, _STAR, _DSTAR, _SUBTREE, _SEQ, _ALT = range(7)


class _Parser:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0

    def error(self, msg: str):
        raise PatternSyntax(f"{msg} at offset {self.pos} in {self.src!r}")

    def peek(self, k: int = 0):
        i = self.pos + k
        return self.src[i] if i < len(self.src) else None

    def parse(self):
        if not self.src:
            raise PatternSyntax("empty pattern")
        node = self.seq(depth=0)
        if self.pos != len(self.src):
            self.error(f"unexpected {self.peek()!r}")
        return node

    def seq(self, depth: int):
        items = []
        while True:
            c = self.peek()
            if c is None or (depth and c in ",}"):
                break
            if c == "*":
                if self.peek(1) == "*":
                    self.pos += 2
                    items.append((_DSTAR,))
                else:
                    self.pos += 1
                    items.append((_STAR,))
            elif c == "/":
                if self.peek(1) == "*" and self.peek(2) == "*" and self._boundary(3, depth):
                    self.pos += 3
                    items.append((_SUBTREE,))
                else:
                    self.pos += 1
                    items.append((_LIT, "/"))
            elif c == "?":
                self.pos += 1
                items.append((_SET, NAME_CHARS))
            elif c == "[":
                items.append(self.char_class())
            elif c == "{":
                items.append(self.alternation(depth + 1))
            elif c in NAME_CHARS:
                self.pos += 1
                items.append((_LIT, c))
            else:
                self.error(f"illegal character {c!r}")
        return (_SEQ, tuple(items))

    def _boundary(self, k: int, depth: int) -> bool:
        nxt = self.peek(k)
        return nxt is None or nxt == "/" or (depth > 0 and nxt in ",}")

    def char_class(self):
        self.pos += 1  # [
        negate = False
        if self.peek() == "^":
            negate = True
            self.pos += 1
        members = set()
        while True:
            c = self.peek()
            if c is None:
                self.error("unclosed character class")
            if c == "]":
                self.pos += 1
                break
            if c not in NAME_CHARS:
                self.error(f"illegal character {c!r} in class")
            if self.peek(1) == "-" and self.peek(2) not in (None, "]"):
                hi = self.peek(2)
                if hi not in NAME_CHARS or hi < c:
                    self.error(f"bad range {c}-{hi}")
                members.update(ch for ch in NAME_CHARS if c <= ch <= hi)
                self.pos += 3
            else:
                members.add(c)
                self.pos += 1
        if not members:
            self.error("empty character class")
        chars = NAME_CHARS - members if negate else frozenset(members)
        return (_SET, frozenset(chars))

    def alternation(self, depth: int):
        if depth > MAX_ALT_DEPTH:
            self.error(f"alternation nested deeper than {MAX_ALT_DEPTH}")
        self.pos += 1  # {
        branches = []
        while True:
            start = self.pos
            branch = self.seq(depth)
            if self.pos == start:
                self.error("empty alternation branch")
            branches.append(branch)
            c = self.peek()
            if c is None:
                self.error("unclosed alternation")
            self.pos += 1
            if c == "}":
                break
        return (_ALT, tuple(branches))


class _Automaton:
    """Thompson NFA plus a lazily filled DFA transition table."""

    def __init__(self, ast):
        self.eps: list[list[int]] = []
        self.edges: list[list[tuple[frozenset, int]]] = []
        self.start, self.accept = self._build(ast)
        self._closures: dict[int, frozenset] = {}
        self._dfa: dict[tuple[frozenset, str], frozenset] = {}
        self.initial = self._closure((self.start,))

    def _state(self) -> int:
        self.eps.append([])
        self.edges.append([])
        return len(self.eps) - 1

    def _build(self, node):
        tag = node[0]
        if tag in (_LIT, _SET):
            s, e = self._state(), self._state()
            chars = frozenset(node[1]) if tag == _LIT else node[1]
            self.edges[s].append((chars, e))
            return s, e
        if tag in (_STAR, _DSTAR):
            s = self._state()
            self.edges[s].append((NAME_CHARS if tag == _STAR else ALL_CHARS, s))
            return s, s
        if tag == _SUBTREE:
            s, m, e = self._state(), self._state(), self._state()
            self.eps[s].append(e)
            self.edges[s].append((frozenset("/"), m))
            self.edges[m].append((ALL_CHARS, m))
            self.eps[m].append(e)
            return s, e
        if tag == _SEQ:
            s = e = self._state()
            for item in node[1]:
                a, b = self._build(item)
                self.eps[e].append(a)
                e = b
            return s, e
        # _ALT
        s, e = self._state(), self._state()
        for branch in node[1]:
            a, b = self._build(branch)
            self.eps[s].append(a)
            self.eps[b].append(e)
        return s, e

    def _closure(self, states) -> frozenset:
        seen = set()
        stack = list(states)
        while stack:
            st = stack.pop()
            if st in seen:
                continue
            seen.add(st)
            stack.extend(self.eps[st])
        return frozenset(seen)

    def step(self, current: frozenset, ch: str) -> frozenset:
        key = (current, ch)
        nxt = self._dfa.get(key)
        if nxt is None:
            targets = [t for st in current for chars, t in self.edges[st] if ch in chars]
            nxt = self._closure(targets)
            self._dfa[key] = nxt
        return nxt

    def matches(self, text: str) -> bool:
        current = self.initial
        for ch in text:
            current = self.step(current, ch)
            if not current:
                return False
        return self.accept in current


@dataclass(frozen=True)
class GlobPattern:
    source: str
    _automaton: _Automaton = field(repr=False, compare=False, hash=False)

    def match(self, path) -> bool:
        return self._automaton.matches(path if isinstance(path, str) else str(path))

    def __str__(self) -> str:
        return self.source


@lru_cache(maxsize=4096)
def compile_pattern(source: str) -> GlobPattern:
    if not isinstance(source, str):
        raise PatternSyntax(f"pattern must be a string, got {type(source).__name__}")
    ast = _Parser(source).parse()
    return GlobPattern(source, _Automaton(ast))


def match(pattern, path) -> bool:
    if isinstance(pattern, str):
        pattern = compile_pattern(pattern)
    if isinstance(path, NamespacePath):
        path = str(path)
    return pattern.match(path)


def literal_pattern(path: NamespacePath) -> GlobPattern:
    """Pattern matching exactly ``path``; name characters are never metacharacters."""
    return compile_pattern(str(path))
