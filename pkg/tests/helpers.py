import contextlib

from srosk.audit import MemorySink, Mode
from srosk.names import parse_path
from srosk.registry import Registry
from srosk.wire import SecureChannelConfig


@contextlib.asynccontextmanager
async def running_registry(keystores, mode=Mode.ENFORCE, sink=None, evaluator=None, transport=None):
    cfg = SecureChannelConfig.from_keystore(keystores[parse_path("/master")], transport=transport)
    registry = Registry(cfg, mode, sink if sink is not None else MemorySink(), evaluator)
    await registry.start()
    try:
        yield registry
    finally:
        await registry.close()


def _der_header(der, pos):
    """(header_length, content_length) of the DER element at ``pos``."""
    first = der[pos + 1]
    if first < 0x80:
        return 2, first
    n = first & 0x7F
    return 2 + n, int.from_bytes(der[pos + 2:pos + 2 + n], "big")


def tbs_span(der):
    """Byte range of the to-be-signed portion of a DER certificate."""
    outer, _ = _der_header(der, 0)
    head, length = _der_header(der, outer)
    return outer, outer + head + length


def flip(der, offset, mask=0x01):
    out = bytearray(der)
    out[offset] ^= mask
    return bytes(out)


async def raw_client(keystore, registry, **kwargs):
    """A node whose own checks are off, so every request reaches the registry."""
    from srosk.node import Node
    from srosk.pki import Keystore
    name = Keystore.load(keystore).name
    kwargs.setdefault("self_check", False)
    return await Node.init(name, keystore, registry.address, **kwargs)
