"""``srosk`` command line.

Exit status: 0 success, 1 expected failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import signal
import sys
from pathlib import Path

from . import audit, pki, profilegen
from .audit import JsonlSink, Mode, NullSink
from .errors import SroskError
from .names import parse_path
from .policy import EVALUATORS, Action, evaluate, parse_profile, serialize_profile

log = logging.getLogger("srosk")


def _keystore_arg(p: argparse.ArgumentParser):
    default = os.environ.get("SROSK_KEYSTORE")
    p.add_argument("--keystore", default=default, required=default is None,
                   help="node keystore directory (default: $SROSK_KEYSTORE)")


def _mode_args(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=[m.value for m in Mode], default="enforce")
    p.add_argument("--audit-log", help="append JSONL security events to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srosk", description="secure pub/sub graph tooling")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    ks = sub.add_parser("keystore", help="CA and node keystore management")
    ks_sub = ks.add_subparsers(dest="keystore_command", required=True)
    p = ks_sub.add_parser("init-ca", help="create a root (and optional intermediate) CA")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_ca)
    p = ks_sub.add_parser("gen-node", help="issue a node keystore carrying its policy")
    p.add_argument("name")
    p.add_argument("--profile", help="profile file (default: config profiles, else empty)")
    p.add_argument("--ca", default=".", help="CA directory written by init-ca")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_node)
    p = ks_sub.add_parser("inspect", help="print a certificate's identity and policy")
    p.add_argument("cert")
    p.add_argument("--digest", default="sha256", choices=["sha256", "sha1", "sha384", "sha512"])
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("registry", help="run the graph registry")
    p.add_argument("--bind", default="127.0.0.1:11311")
    _keystore_arg(p)
    _mode_args(p)
    p.add_argument("--policy-plugin", choices=sorted(EVALUATORS), default="default")
    p.add_argument("--snapshot", help="load params from / save params to this JSON file")
    p.set_defaults(func=cmd_registry)

    for name, func in (("talk", cmd_talk), ("listen", cmd_listen)):
        p = sub.add_parser(name, help=f"demo {name}er node")
        p.add_argument("topic")
        _keystore_arg(p)
        p.add_argument("--registry", default="127.0.0.1:11311")
        _mode_args(p)
        p.add_argument("--count", type=int, help="stop after this many messages")
        if name == "talk":
            p.add_argument("--rate", type=float, default=1.0, help="messages per second")
            p.add_argument("--payload", default="hello world")
            p.add_argument("--wait-subscribers", type=int, default=0)
        p.set_defaults(func=func)

    pol = sub.add_parser("policy", help="policy tools")
    pol_sub = pol.add_subparsers(dest="policy_command", required=True)
    p = pol_sub.add_parser("check", help="evaluate one request against a profile")
    p.add_argument("--profile", required=True)
    p.add_argument("action", choices=[a.value for a in Action])
    p.add_argument("path")
    p.set_defaults(func=cmd_policy_check)

    au = sub.add_parser("audit", help="train and replay profiles from audit logs")
    au_sub = au.add_subparsers(dest="audit_command", required=True)
    p = au_sub.add_parser("train")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--generalize", type=int, metavar="N")
    p.set_defaults(func=cmd_audit_train)
    p = au_sub.add_parser("replay")
    p.add_argument("--log", required=True)
    p.add_argument("--profiles", required=True)
    p.set_defaults(func=cmd_audit_replay)

    p = sub.add_parser("profilegen", help="generate AppArmor profile text")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profilegen)
    return parser


# keystore

def cmd_init_ca(args) -> int:
    config = pki.KeyserverConfig.load(args.config)
    summary = pki.init_ca(config, args.out)
    for subject, fp in zip(summary.subjects, summary.fingerprints):
        print(f"{subject}  sha256:{fp}")
    return 0


def cmd_gen_node(args) -> int:
    name = parse_path(args.name)
    store = pki.CaStore.open(args.ca)
    if args.profile:
        profile = parse_profile(_read(args.profile))
    else:
        profile = store.config.profile_for(name) or parse_profile(f"profile {name}\n")
    bundle = pki.issue_node_cert(name, profile, store.config, store)
    out = bundle.write(args.out)
    print(f"wrote keystore for {name} to {out}")
    return 0


def cmd_inspect(args) -> int:
    info = pki.inspect_certificate(args.cert, args.digest)
    print(f"subject:     {info['subject']}")
    print(f"issuer:      {info['issuer']}")
    print(f"not before:  {info['not_before']}")
    print(f"not after:   {info['not_after']}")
    print(f"fingerprint: {info['fingerprint']}")
    print("rules:")
    for rule in info["rules"]:
        print(f"  {rule}")
    return 0


# daemons

def _sink(path):
    return JsonlSink(path) if path else NullSink()


def _run_until_signalled(coro_factory):
    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        return await coro_factory(stop)
    return asyncio.run(main())


def cmd_registry(args) -> int:
    from .registry import Registry
    from .wire import SecureChannelConfig, parse_address

    host, port = parse_address(args.bind)
    cfg = SecureChannelConfig.from_keystore(args.keystore)
    sink = _sink(args.audit_log)

    async def serve(stop):
        registry = Registry(cfg, Mode(args.mode), sink, EVALUATORS[args.policy_plugin](),
                            snapshot_path=args.snapshot)
        await registry.start(host, port)
        print(f"registry {cfg.keystore.name} listening on {registry.uri} "
              f"mode={args.mode} policy={args.policy_plugin}", flush=True)
        await stop.wait()
        await registry.close()
        return 0

    return _run_until_signalled(serve)


async def _open_node(args, sink):
    from .node import Node
    from .pki import Keystore

    name = Keystore.load(args.keystore).name
    return await Node.init(name, args.keystore, args.registry, Mode(args.mode), sink=sink)


def cmd_talk(args) -> int:
    from .demo import STRING_TYPE

    sink = _sink(args.audit_log)

    async def run(stop):
        node = await _open_node(args, sink)
        try:
            pub = await node.advertise(args.topic, *STRING_TYPE)
            if args.wait_subscribers:
                await pub.wait_for_subscribers(args.wait_subscribers, timeout=30)
            sent = 0
            delay = 1.0 / args.rate if args.rate > 0 else 0
            while not stop.is_set() and not node.shutdown_event.is_set():
                if args.count is not None and sent >= args.count:
                    break
                pub.publish(args.payload.encode())
                sent += 1
                await asyncio.sleep(delay)
            await pub.flush()
            print(f"published {sent} messages on {pub.topic}", flush=True)
        finally:
            await node.close()
        return 0

    return _run_until_signalled(run)


def cmd_listen(args) -> int:
    from .demo import STRING_TYPE

    sink = _sink(args.audit_log)

    async def run(stop):
        node = await _open_node(args, sink)
        done = asyncio.Event()
        received = 0

        def on_message(data: bytes):
            nonlocal received
            received += 1
            print(data.decode("utf-8", errors="replace"), flush=True)
            if args.count is not None and received >= args.count:
                done.set()

        def on_error(exc):
            print(f"srosk: link failed: {exc.code}: {exc}", file=sys.stderr, flush=True)

        try:
            await node.subscribe(args.topic, *STRING_TYPE, on_message, on_error)
            waiters = [asyncio.create_task(e.wait()) for e in (stop, done, node.shutdown_event)]
            await asyncio.wait(waiters, return_when=asyncio.FIRST_COMPLETED)
            for w in waiters:
                w.cancel()
        finally:
            await node.close()
        return 0

    return _run_until_signalled(run)


# policy / audit / profilegen

def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SroskError(str(exc)) from None


def cmd_policy_check(args) -> int:
    profile = parse_profile(_read(args.profile))
    decision = evaluate(profile, Action(args.action), parse_path(args.path))
    rule = str(decision.matched) if decision.matched else "(no rule matched: default deny)"
    print(f"{decision.verdict.value} {rule}")
    return 0 if decision.allowed else 1


def _profile_filename(name) -> str:
    return (".".join(parse_path(name).segments) or "root") + ".profile"


def cmd_audit_train(args) -> int:
    result = audit.train(Path(args.log), args.generalize)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, profile in result.profiles.items():
        (out / _profile_filename(name)).write_text(serialize_profile(profile))
    for err in result.malformed:
        print(f"srosk: malformed log {err.reason}", file=sys.stderr)
    print(f"trained {len(result.profiles)} profiles into {out}")
    return 1 if result.malformed else 0


def load_profiles(directory) -> dict:
    profiles = {}
    for path in sorted(Path(directory).glob("*.profile")):
        profile = parse_profile(path.read_text(encoding="utf-8"))
        profiles[profile.subject] = profile
    return profiles


def cmd_audit_replay(args) -> int:
    profiles = load_profiles(args.profiles)
    violations = audit.check_roundtrip(profiles, Path(args.log))
    for v in violations:
        print(f"violation: {v}")
    print(f"{len(violations)} violations")
    return 1 if violations else 0


def cmd_profilegen(args) -> int:
    text = profilegen.generate(profilegen.NodeManifest.load(args.manifest))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except SroskError as exc:
        print(f"srosk: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"srosk: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
