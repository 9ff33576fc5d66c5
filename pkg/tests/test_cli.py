import json
import os
import re
import signal
import subprocess
import sys
from pathlib import Path

import pytest


GOLDEN = Path(__file__).parent / "golden"


def srosk(*args, check=None, env=None, timeout=60):
    proc = subprocess.run([sys.executable, "-m", "srosk", *map(str, args)], capture_output=True,
                          text=True, timeout=timeout, env=env)
    if check is not None:
        assert proc.returncode == check, proc.stderr
    return proc


def spawn(*args):
    return subprocess.Popen([sys.executable, "-m", "srosk", *map(str, args)], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True)


@pytest.fixture(scope="module")
def pki_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "keyserver.json"
    config.write_text(json.dumps({
        "ca": {"common_name": "cli root", "intermediate": {"common_name": "cli inter"}},
        "profiles": {"/listener": "profile /listener\n"
                                  "allow graph_execute /{register,unregister}_subscriber\n"
                                  "allow topic_subscribe /chatter\n"}}))
    out = srosk("keystore", "init-ca", "--config", config, "--out", root / "ca", check=0)
    assert out.stdout.count("sha256:") == 2
    profiles = {
        "talker": "profile /talker\nallow graph_execute /{register,unregister}_publisher\n"
                  "allow topic_publish /chatter\n",
        "rogue": "profile /rogue\nallow graph_execute /**\n",
        "master": "profile /master\n",
    }
    for name, text in profiles.items():
        (root / f"{name}.profile").write_text(text)
        srosk("keystore", "gen-node", f"/{name}", "--profile", root / f"{name}.profile",
              "--ca", root / "ca", "--out", root / name, check=0)
    srosk("keystore", "gen-node", "/listener", "--ca", root / "ca", "--out", root / "listener", check=0)
    return root


def test_init_ca_refuses_existing(pki_dir):
    proc = srosk("keystore", "init-ca", "--config", pki_dir / "keyserver.json", "--out", pki_dir / "ca", check=1)
    assert "AlreadyInitialized" in proc.stderr


def test_bad_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"ca": {"key_type": "rsa", "rsa_bits": 1024}}))
    assert "ConfigInvalid" in srosk("keystore", "init-ca", "--config", cfg, "--out", tmp_path / "o", check=1).stderr


def test_inspect(pki_dir):
    out = srosk("keystore", "inspect", pki_dir / "talker" / "node.cert.pem", check=0).stdout
    assert "subject:     /talker" in out
    assert re.search(r"fingerprint: sha256:([0-9A-F]{2}:){31}[0-9A-F]{2}", out)
    assert "  allow topic_publish /chatter" in out
    # profile taken from the keyserver config
    out = srosk("keystore", "inspect", pki_dir / "listener" / "node.cert.pem", check=0).stdout
    assert "allow topic_subscribe /chatter" in out


def test_gen_node_errors(pki_dir, tmp_path):
    bad = tmp_path / "bad.profile"
    bad.write_text("profile /x\npermit topic_publish /a\n")
    assert "ProfileSyntax" in srosk("keystore", "gen-node", "/x", "--profile", bad, "--ca",
                                    pki_dir / "ca", "--out", tmp_path / "x", check=1).stderr
    assert "SubjectMismatch" in srosk("keystore", "gen-node", "/y", "--profile", pki_dir / "talker.profile",
                                      "--ca", pki_dir / "ca", "--out", tmp_path / "y", check=1).stderr
    assert "CaUnavailable" in srosk("keystore", "gen-node", "/z", "--ca", tmp_path,
                                    "--out", tmp_path / "z", check=1).stderr


def test_usage_errors():
    assert srosk(check=2).returncode == 2
    assert srosk("policy", "check", "--profile", "x", "fly", "/a", check=2).returncode == 2


def test_policy_check(pki_dir):
    prof = pki_dir / "talker.profile"
    assert srosk("policy", "check", "--profile", prof, "topic_publish", "/chatter", check=0).stdout == (
        "allow allow topic_publish /chatter\n")
    assert srosk("policy", "check", "--profile", prof, "topic_publish", "/x", check=1).stdout.startswith("deny")


def test_audit_train_and_replay(tmp_path):
    log = tmp_path / "log.jsonl"
    base = {"ts": "2026-01-01T00:00:00.000000Z", "mode": "complain", "decision": "would-deny",
            "enforcement_point": "self"}
    events = [dict(base, subject="/talker", action="topic_publish", scope=f"/s/a{i}") for i in range(3)]
    log.write_text("".join(json.dumps(e) + "\n" for e in events))
    srosk("audit", "train", "--log", log, "--out", tmp_path / "p", "--generalize", "3", check=0)
    assert (tmp_path / "p" / "talker.profile").read_text() == "profile /talker\nallow topic_publish /s/*\n"
    assert srosk("audit", "replay", "--log", log, "--profiles", tmp_path / "p", check=0).stdout == "0 violations\n"
    (tmp_path / "p" / "talker.profile").write_text("profile /talker\n")
    out = srosk("audit", "replay", "--log", log, "--profiles", tmp_path / "p", check=1).stdout
    assert out.endswith("3 violations\n")
    with log.open("a") as fh:
        fh.write("not json\n")
    assert "line 4" in srosk("audit", "train", "--log", log, "--out", tmp_path / "q", check=1).stderr


def test_profilegen(tmp_path):
    out = srosk("profilegen", "--manifest", GOLDEN / "combined.json", check=0).stdout
    assert out == (GOLDEN / "combined.profile").read_text()
    srosk("profilegen", "--manifest", GOLDEN / "node_base.json", "--out", tmp_path / "p", check=0)
    assert (tmp_path / "p").read_text() == (GOLDEN / "node_base.profile").read_text()
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps({"node_name": "/a", "executable_path": "/bin/a", "primitives": ["gpu"]}))
    assert "UnknownPrimitive" in srosk("profilegen", "--manifest", bad, check=1).stderr


def start_registry(pki_dir, *extra):
    proc = spawn("registry", "--bind", "127.0.0.1:0", "--keystore", pki_dir / "master", *extra)
    line = proc.stdout.readline()
    match = re.search(r"listening on (\S+)", line)
    assert match, line + proc.stderr.read()
    return proc, match.group(1)


def stop(proc):
    proc.send_signal(signal.SIGTERM)
    try:
        proc.wait(10)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
    return proc.returncode


def test_talk_listen_end_to_end(pki_dir, tmp_path):
    log = tmp_path / "audit.jsonl"
    registry, addr = start_registry(pki_dir, "--audit-log", log)
    try:
        listener = spawn("listen", "/chatter", "--keystore", pki_dir / "listener", "--registry", addr,
                         "--count", "3")
        talk = srosk("talk", "/chatter", "--keystore", pki_dir / "talker", "--registry", addr,
                     "--count", "3", "--rate", "50", "--payload", "hello cli", "--wait-subscribers", "1",
                     check=0)
        assert "published 3 messages on /chatter" in talk.stdout
        out, err = listener.communicate(timeout=30)
        assert listener.returncode == 0, err
        assert out.splitlines() == ["hello cli"] * 3
        # unauthorized topic is refused with a PermissionDenied message and exit status 1
        env = dict(os.environ, SROSK_KEYSTORE=str(pki_dir / "talker"))
        denied = srosk("talk", "/secret", "--registry", addr, "--count", "1", env=env, check=1)
        assert "PermissionDenied" in denied.stderr
        rogue = srosk("talk", "/chatter", "--keystore", pki_dir / "rogue", "--registry", addr,
                      "--count", "1", check=1)
        assert "PermissionDenied" in rogue.stderr
    finally:
        assert stop(registry) == 0
    # denials above happened at each node's self-check; allowed traffic is not logged in enforce mode
    assert log.read_text() == ""


def test_registry_complain_mode_logs(pki_dir, tmp_path):
    log = tmp_path / "audit.jsonl"
    registry, addr = start_registry(pki_dir, "--mode", "complain", "--audit-log", log)
    try:
        srosk("talk", "/anything", "--keystore", pki_dir / "rogue", "--registry", addr, "--count", "1",
              "--mode", "complain", "--audit-log", tmp_path / "node.jsonl", check=0)
    finally:
        stop(registry)
    registry_events = [json.loads(line) for line in log.read_text().splitlines()]
    node_events = [json.loads(line) for line in (tmp_path / "node.jsonl").read_text().splitlines()]
    assert {(e["scope"], e["decision"]) for e in registry_events} == {("/anything", "would-deny")}
    assert [(e["enforcement_point"], e["decision"]) for e in node_events] == [("self", "would-deny")]


def test_registry_policy_off_and_snapshot(pki_dir, tmp_path):
    snap = tmp_path / "snap.json"
    registry, addr = start_registry(pki_dir, "--policy-plugin", "off", "--snapshot", snap)
    try:
        srosk("talk", "/anything", "--keystore", pki_dir / "rogue", "--registry", addr, "--count", "1",
              "--mode", "complain", check=0)
    finally:
        assert stop(registry) == 0
    assert json.loads(snap.read_text()) == {"params": {}}


def test_unreachable_registry(pki_dir):
    proc = srosk("talk", "/chatter", "--keystore", pki_dir / "talker", "--registry", "127.0.0.1:1",
                 "--count", "1", check=1)
    assert "IoFailure" in proc.stderr
