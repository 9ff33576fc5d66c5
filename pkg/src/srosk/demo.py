"""A six-node demo graph with hand-written profiles and a scripted workload.

Used by the ``talk``/``listen`` demo commands and by the end-to-end tests.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from pathlib import Path

from .audit import Mode
from .names import NamespacePath, parse_path
from .pki import CaStore, KeyserverConfig, init_ca, issue_node_cert
from .policy import PolicyProfile, empty_profile, parse_profile

STRING_TYPE = ("std_msgs/String", "string data")
INT_TYPE = ("std_msgs/Int64", "int64 data")

DEMO_PROFILES = {
    "/talker": """
        allow graph_execute /{register,unregister}_publisher
        allow topic_publish /chatter
    """,
    "/listener": """
        allow graph_execute /{register,unregister}_subscriber
        allow topic_subscribe /chatter
    """,
    "/rogue_talker": """
        allow graph_execute /{register,unregister}_publisher
        allow topic_publish /rogue/**
    """,
    "/rogue_listener": """
        allow graph_execute /{register,unregister}_subscriber
        allow topic_subscribe /public/**
    """,
    "/adder": """
        allow graph_execute /{register,unregister}_service
        allow graph_execute /get_param
        allow service_advertise /add
        allow param_read /config/**
    """,
    "/admin": """
        allow graph_execute /{lookup_service,get_system_state,get_param,set_param,shutdown}
        allow graph_execute /shutdown/**
        allow service_call /add
        allow param_write /config/**
        allow param_read /config/**
    """,
}
REGISTRY_NAME = "/master"


def demo_profiles() -> dict[NamespacePath, PolicyProfile]:
    out = {}
    for name, rules in DEMO_PROFILES.items():
        out[parse_path(name)] = parse_profile(f"profile {name}\n{rules}")
    return out


def keystore_dirname(name) -> str:
    name = parse_path(name)
    return "_".join(name.segments) or "root"


def make_ca(directory, intermediate: bool = False, config: KeyserverConfig | None = None) -> CaStore:
    directory = Path(directory)
    if not (directory / "ca_chain.pem").exists():
        if config is None:
            data = {"ca": {"common_name": "srosk demo root"}}
            if intermediate:
                data["ca"]["intermediate"] = {"common_name": "srosk demo intermediate"}
            config = KeyserverConfig.from_dict(data)
        init_ca(config, directory)
    return CaStore.open(directory)


def issue_keystores(ca: CaStore, profiles: dict, out_root, now=None) -> dict[NamespacePath, Path]:
    """Write one keystore per profile (plus the registry's) under ``out_root``."""
    out_root = Path(out_root)
    profiles = dict(profiles)
    profiles.setdefault(parse_path(REGISTRY_NAME), empty_profile(REGISTRY_NAME))
    paths = {}
    for name, profile in profiles.items():
        name = parse_path(name)
        bundle = issue_node_cert(name, PolicyProfile(name, profile.rules), None, ca, now)
        paths[name] = bundle.write(out_root / keystore_dirname(name))
    return paths


@dataclass
class Traffic:
    """What the demo workload observed, for run-to-run comparison."""

    chatter: list[bytes] = field(default_factory=list)
    sums: list[bytes] = field(default_factory=list)
    gain: object = None
    system_state: dict = field(default_factory=dict)


def payloads(count: int = 20) -> list[bytes]:
    return [f"hello world {i:04d}".encode() for i in range(count)]


async def run_workload(registry_address, keystores: dict, mode: Mode, sink=None,
                       count: int = 20, **node_kwargs) -> Traffic:
    """talker -> listener on /chatter, admin -> adder via /add and /config/gain."""
    from .node import Node

    traffic = Traffic()
    nodes = {}

    def init(name):
        return Node.init(name, keystores[parse_path(name)], registry_address, mode,
                         sink=sink, **node_kwargs)

    try:
        for name in ("/talker", "/listener", "/adder", "/admin"):
            nodes[name] = await init(name)
        listener = await nodes["/listener"].subscribe(
            "/chatter", *STRING_TYPE, traffic.chatter.append)
        pub = await nodes["/talker"].advertise("/chatter", *STRING_TYPE)
        await pub.wait_for_subscribers(1)
        await listener.wait_for_publishers(1)
        for data in payloads(count):
            pub.publish(data)
        await listener.wait_for_messages(count)

        adder = nodes["/adder"]

        async def add(request: bytes) -> bytes:
            a, b = (int(x) for x in request.split(b"+"))
            gain = await adder.get_param("/config/gain")
            return str((a + b) * gain).encode()

        await adder.serve("/add", add)
        admin = nodes["/admin"]
        await admin.set_param("/config/gain", 2)
        traffic.gain = await admin.get_param("/config/gain")
        for a, b in ((1, 2), (20, 22)):
            traffic.sums.append(await admin.call("/add", f"{a}+{b}".encode()))
        traffic.system_state = await admin.get_system_state()
    finally:
        for node in reversed(list(nodes.values())):
            await node.close()
    return traffic


async def talk(node, topic, count: int | None, rate: float, payload: bytes):
    pub = await node.advertise(topic, *STRING_TYPE)
    sent = 0
    while count is None or sent < count:
        pub.publish(payload)
        sent += 1
        await asyncio.sleep(1.0 / rate if rate > 0 else 0)
    await pub.flush()
    return sent
