import pytest
from hypothesis import given, strategies as st

from srosk.errors import InvalidName
from srosk.names import ROOT, NamespacePath, is_prefix, parse_path, render, resolve

tokens = st.from_regex(r"[A-Za-z0-9_]{1,6}", fullmatch=True)
paths = st.lists(tokens, max_size=5).map(lambda segs: NamespacePath(tuple(segs)))


def test_root():
    assert parse_path("/") == ROOT
    assert parse_path("/").segments == ()
    assert str(ROOT) == "/"


def test_canonicalizes_slashes():
    assert str(parse_path("/a//b/")) == "/a/b"


@pytest.mark.parametrize("bad", ["/a/b c", "", "relative", "/a/~x", "/a/./b", "/a.b"])
def test_rejects(bad):
    with pytest.raises(InvalidName):
        parse_path(bad)


@pytest.mark.parametrize("base, name, expected", [
    ("/robot", "cmd", "/robot/cmd"),
    ("/robot", "/global", "/global"),
    ("/", "x/y", "/x/y"),
])
def test_resolve(base, name, expected):
    assert str(resolve(parse_path(base), name)) == expected


def test_resolve_rejects_bad_relative():
    with pytest.raises(InvalidName):
        resolve(ROOT, "a b")


@pytest.mark.parametrize("a, b, expected", [
    ("/a", "/a/b", True),
    ("/a/b", "/a", False),
    ("/", "/anything", True),
    ("/ab", "/abc", False),
])
def test_is_prefix(a, b, expected):
    assert is_prefix(parse_path(a), parse_path(b)) is expected


@given(paths)
def test_round_trip(p):
    assert parse_path(render(p)) == p


@given(paths, paths)
def test_resolve_idempotent_on_absolute(base, p):
    assert resolve(base, render(p)) == p


@given(paths, paths, paths)
def test_prefix_reflexive_transitive(a, b, c):
    assert is_prefix(a, a)
    assert is_prefix(ROOT, a)
    if is_prefix(a, b) and is_prefix(b, c):
        assert is_prefix(a, c)


def test_prefix_of_extension():
    p = parse_path("/a/b")
    assert is_prefix(p, p.child("c", "d"))
