import datetime as dt
import json
import stat

import pytest
from cryptography import x509
from cryptography.hazmat.primitives import serialization

from helpers import flip, tbs_span
from srosk import demo
from srosk.errors import (AlreadyInitialized, CertificateMalformed, ConfigInvalid, Expired,
                          ExtensionMalformed, NotYetValid, SignatureInvalid, SubjectMismatch,
                          UntrustedRoot, VerificationError)
from srosk.names import parse_path
from srosk.pki import (ACTION_OIDS, CaStore, KeyserverConfig, Keystore, init_ca,
                       inspect_certificate, issue_node_cert, parse_policy_extensions,
                       policy_extension_values, verify_chain)
from srosk.policy import Action, empty_profile, profile_from_rules


def der(cert):
    return cert.public_bytes(serialization.Encoding.DER)


def test_rejects_small_rsa():
    with pytest.raises(ConfigInvalid):
        KeyserverConfig.from_dict({"ca": {"key_type": "rsa", "rsa_bits": 1024}})
    with pytest.raises(ConfigInvalid):
        KeyserverConfig.from_dict({"node_defaults": {"validity_days": 0}})
    with pytest.raises(ConfigInvalid):
        KeyserverConfig.from_dict({"overrides": [{"match": "/a", "colour": "red"}]})


def test_config_round_trip():
    data = {"ca": {"common_name": "r", "key_type": "rsa", "rsa_bits": 3072, "validity_days": 10},
            "overrides": [{"match": "/robot/**", "validity_days": 7}],
            "profiles": {"/robot/*": "profile /x\nallow topic_publish /a\n"}}
    cfg = KeyserverConfig.from_dict(data)
    assert KeyserverConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.node_settings(parse_path("/robot/arm")).validity_days == 7
    assert cfg.node_settings(parse_path("/other")).validity_days == 365
    assert str(cfg.profile_for(parse_path("/robot/arm")).subject) == "/robot/arm"
    assert cfg.profile_for(parse_path("/other")) is None


@pytest.mark.parametrize("intermediate, length", [(False, 1), (True, 2)])
def test_init_ca_chain_length(tmp_path, intermediate, length):
    data = {"ca": {"common_name": "root"}}
    if intermediate:
        data["ca"]["intermediate"] = {"common_name": "inter"}
    summary = init_ca(KeyserverConfig.from_dict(data), tmp_path)
    assert len(summary) == length
    chain = x509.load_pem_x509_certificates((tmp_path / "ca_chain.pem").read_bytes())
    assert len(chain) == length
    assert chain[-1].subject == chain[-1].issuer
    for key in tmp_path.glob("*.key.pem"):
        assert stat.S_IMODE(key.stat().st_mode) == 0o600
    with pytest.raises(AlreadyInitialized):
        init_ca(KeyserverConfig(), tmp_path)


def test_extension_encoding(ca):
    bundle = issue_node_cert("/talker", profile_from_rules("/talker", ["allow topic_publish /chatter"]),
                             None, ca)
    ext = bundle.node_certificate.extensions.get_extension_for_oid(
        x509.ObjectIdentifier("1.3.6.1.3.81.1"))
    assert ext.value.value == b"allow /chatter\n"
    assert not ext.critical


def test_extension_count_and_order(ca):
    profile = profile_from_rules("/n", ["allow topic_publish /b", "deny topic_publish /a",
                                        "allow param_read /p/**"])
    bundle = issue_node_cert("/n", profile, None, ca)
    oids = [e.oid for e in bundle.node_certificate.extensions if e.oid.dotted_string.startswith("1.3.6.1.3.81.")]
    assert len(oids) == 2
    values = policy_extension_values(profile)
    assert values[Action.TOPIC_PUBLISH] == b"deny /a\nallow /b\n"
    assert set(parse_policy_extensions(bundle.node_certificate).rules) == set(profile.rules)


def test_empty_profile_has_no_extensions(ca):
    cert = issue_node_cert("/quiet", empty_profile("/quiet"), None, ca).node_certificate
    assert not any(e.oid in ACTION_OIDS.values() for e in cert.extensions)
    assert parse_policy_extensions(cert).rules == ()


def test_extension_values_deterministic():
    a = profile_from_rules("/n", ["allow topic_publish /b", "allow topic_publish /a"])
    b = profile_from_rules("/n", ["allow topic_publish /a", "allow topic_publish /b", "allow topic_publish /a"])
    assert policy_extension_values(a) == policy_extension_values(b)


def test_subject_mismatch(ca):
    with pytest.raises(SubjectMismatch):
        issue_node_cert("/a", empty_profile("/b"), None, ca)


def test_verify_round_trip(ca):
    profile = demo.demo_profiles()[parse_path("/admin")]
    bundle = issue_node_cert("/admin", profile, None, ca)
    ident = verify_chain(bundle.node_certificate, bundle.chain, ca.root)
    assert str(ident.name) == "/admin"
    assert set(ident.profile.rules) == set(profile.rules)


def test_tampered_extension_fails_signature(ca):
    bundle = issue_node_cert("/talker", profile_from_rules("/talker", ["allow topic_publish /chatter"]),
                             None, ca)
    raw = der(bundle.node_certificate)
    i = raw.index(b"/chatter")
    tampered = raw[:i] + b"/chattes" + raw[i + 8:]
    with pytest.raises(SignatureInvalid):
        verify_chain(tampered, bundle.chain, ca.root)


def test_malformed_extension_content(ca):
    bundle = issue_node_cert("/talker", profile_from_rules("/talker", ["allow topic_publish /chatter"]),
                             None, ca)
    raw = der(bundle.node_certificate)
    i = raw.index(b"allow /chatter")
    bad = x509.load_der_x509_certificate(raw[:i] + b"permt /chatter" + raw[i + 14:])
    with pytest.raises(ExtensionMalformed):
        parse_policy_extensions(bad)


def test_untrusted_root(ca, other_ca):
    bundle = issue_node_cert("/n", empty_profile("/n"), None, ca)
    with pytest.raises(UntrustedRoot):
        verify_chain(bundle.node_certificate, bundle.chain, other_ca.root)
    with pytest.raises(UntrustedRoot):
        verify_chain(bundle.node_certificate, [], ca.root)  # intermediate missing


def test_validity_window(ca):
    bundle = issue_node_cert("/n", empty_profile("/n"), None, ca)
    issued = bundle.node_certificate.not_valid_before_utc
    with pytest.raises(NotYetValid):
        verify_chain(bundle.node_certificate, bundle.chain, ca.root, issued - dt.timedelta(days=1))
    with pytest.raises(Expired):
        verify_chain(bundle.node_certificate, bundle.chain, ca.root, issued + dt.timedelta(days=400))


def test_tbs_flips_never_verify(ca):
    bundle = issue_node_cert("/n", profile_from_rules("/n", ["allow topic_publish /x"]), None, ca)
    raw = der(bundle.node_certificate)
    start, end = tbs_span(raw)
    for offset in range(start, end, max(1, (end - start) // 40)):
        with pytest.raises((VerificationError, ExtensionMalformed)):
            verify_chain(flip(raw, offset), bundle.chain, ca.root)


def test_keystore_files_and_inspect(ca, tmp_path):
    bundle = issue_node_cert("/talker", profile_from_rules("/talker", ["allow topic_publish /chatter"]),
                             None, ca)
    out = bundle.write(tmp_path / "ks")
    assert stat.S_IMODE((out / "node.key.pem").stat().st_mode) == 0o600
    ks = Keystore.load(out)
    assert str(ks.name) == "/talker"
    assert len(ks.chain) == 2
    info = inspect_certificate(out / "node.cert.pem")
    assert info["subject"] == "/talker"
    assert info["rules"] == ["allow topic_publish /chatter"]
    assert info["fingerprint"].startswith("sha256:")


def test_garbage_certificate():
    with pytest.raises(CertificateMalformed):
        verify_chain(b"not a certificate", [], b"nor this")


def test_ca_store_reopens(ca):
    again = CaStore.open(ca.directory)
    assert der(again.root) == der(ca.root)
    assert json.loads((ca.directory / "config.json").read_text())["ca"]["intermediate"]
