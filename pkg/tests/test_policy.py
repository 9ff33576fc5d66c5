import pytest
from hypothesis import given, settings, strategies as st

from oracles import TOKENS, all_paths, naive_match
from srosk.errors import ProfileSyntax
from srosk.names import parse_path
from srosk.policy import (Action, CountingEvaluator, Effect, PolicyOff, PolicyProfile, PolicyRule,
                          evaluate, parse_profile, profile_from_rules, serialize_profile)

PATHS = all_paths(4)


def test_subtree_allow():
    p = profile_from_rules("/n", ["allow topic_publish /robot/**"])
    d = evaluate(p, Action.TOPIC_PUBLISH, "/robot/arm/cmd")
    assert d.allowed and str(d.matched) == "allow topic_publish /robot/**"


def test_default_deny():
    p = profile_from_rules("/n", ["allow topic_publish /robot/**"])
    d = evaluate(p, Action.TOPIC_PUBLISH, "/other")
    assert not d.allowed and d.matched is None and d.default_used


def test_action_is_part_of_match():
    p = profile_from_rules("/n", ["allow topic_publish /a"])
    assert not evaluate(p, Action.TOPIC_SUBSCRIBE, "/a").allowed


def test_deny_overrides():
    p = profile_from_rules("/n", ["allow topic_publish /**", "deny topic_publish /robot/arm/**"])
    d = evaluate(p, Action.TOPIC_PUBLISH, "/robot/arm/cmd")
    assert d.verdict == Effect.DENY
    assert str(d.matched) == "deny topic_publish /robot/arm/**"
    assert evaluate(p, Action.TOPIC_PUBLISH, "/robot/leg").allowed


def test_empty_profile_denies_everything():
    p = PolicyProfile(parse_path("/n"))
    assert not any(evaluate(p, a, "/x").allowed for a in Action)


def test_serialize_round_trip_example():
    text = "profile /n\nallow topic_publish /b\ndeny param_write /s/**\nallow topic_publish /a\n"
    p = parse_profile(text)
    assert serialize_profile(p) == ("profile /n\ndeny param_write /s/**\n"
                                    "allow topic_publish /a\nallow topic_publish /b\n")
    assert parse_profile(serialize_profile(p)) == PolicyProfile(p.subject, tuple(p.sorted_rules()))


def test_comments_and_duplicates():
    p = parse_profile("# c\nprofile /n\n\nallow topic_publish /a # tail\nallow topic_publish /a\n")
    assert serialize_profile(p) == "profile /n\nallow topic_publish /a\n"


@pytest.mark.parametrize("text", [
    "allow topic_publish /a\n",
    "profile /n\npermit topic_publish /a\n",
    "profile /n\nallow fly /a\n",
    "profile /n\nallow topic_publish /a/[\n",
    "profile /n\nallow topic_publish\n",
    "profile relative\n",
    "",
])
def test_profile_syntax(text):
    with pytest.raises(ProfileSyntax):
        parse_profile(text)


def test_plugins():
    p = profile_from_rules("/n", [])
    assert PolicyOff().evaluate(p, Action.PARAM_WRITE, "/x").allowed
    counting = CountingEvaluator()
    assert not counting.evaluate(p, Action.PARAM_WRITE, "/x").allowed
    assert counting.calls == [(parse_path("/n"), Action.PARAM_WRITE, "/x")]


patterns = st.lists(st.sampled_from(TOKENS + ("*", "**", "{a,b}")), min_size=1, max_size=3).map(
    lambda s: "/" + "/".join(s))
rules = st.builds(lambda e, a, s: PolicyRule.make(e, a, s),
                  st.sampled_from(list(Effect)), st.sampled_from(list(Action)[:3]), patterns)
profiles = st.lists(rules, max_size=6).map(lambda rs: PolicyProfile(parse_path("/n"), tuple(rs)))
paths = st.sampled_from(PATHS)


@settings(max_examples=200, deadline=None)
@given(profiles)
def test_serialization_round_trip(p):
    q = parse_profile(serialize_profile(p))
    assert serialize_profile(q) == serialize_profile(p)
    assert set(q.rules) == set(p.rules)


@settings(max_examples=200, deadline=None)
@given(profiles, st.sampled_from(list(Action)[:3]), paths)
def test_matches_reference_semantics(p, action, path):
    # deny-overrides written directly against the reference matcher
    hits = [r for r in p.rules if r.action == action and naive_match(r.scope.source, path)]
    expected = any(r.effect == Effect.ALLOW for r in hits) and not any(
        r.effect == Effect.DENY for r in hits)
    assert evaluate(p, action, path).allowed == expected


@settings(max_examples=200, deadline=None)
@given(profiles, patterns, st.sampled_from(list(Action)[:3]), paths)
def test_deny_dominance(p, pattern, action, path):
    deny = PolicyRule.make("deny", action, pattern)
    q = p.with_rules(deny)
    if deny.scope.match(path):
        assert not evaluate(q, action, path).allowed
    if evaluate(q, action, path).allowed:
        assert evaluate(p, action, path).allowed


@settings(max_examples=100, deadline=None)
@given(profiles, st.sampled_from(TOKENS), st.sampled_from(list(Action)[:3]))
def test_subtree_revocation(p, top, action):
    q = p.with_rules(PolicyRule.make("deny", action, f"/{top}/**"))
    for path in PATHS:
        if path == f"/{top}" or path.startswith(f"/{top}/"):
            assert not evaluate(q, action, path).allowed


@settings(max_examples=100, deadline=None)
@given(st.from_regex(r"[ab]{0,2}\*[ab]{0,2}", fullmatch=True))
def test_single_star_never_crosses(seg):
    p = profile_from_rules("/n", [f"allow topic_publish /{seg}"])
    for path in PATHS:
        if path.count("/") > 1:
            assert not evaluate(p, Action.TOPIC_PUBLISH, path).allowed
