"""Certificate authority, node certificate issuance and chain verification.

Policy rules travel inside node certificates as non-critical X.509 v3
extensions under the experimental arc ``1.3.6.1.3.81``; one extension per
action, each holding UTF-8 lines ``allow <pattern>`` / ``deny <pattern>``.

CA directory layout::

    root.key.pem  root.cert.pem  [intermediate.key.pem  intermediate.cert.pem]
    ca_chain.pem  config.json  .lock

Node keystore layout::

    node.key.pem  node.cert.pem  ca_chain.pem
"""

from __future__ import annotations

import contextlib
import datetime as dt
import fcntl
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from cryptography import x509
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID

from .errors import (
    AlreadyInitialized, BadSubject, CaUnavailable, CertificateMalformed, ConfigInvalid,
    Expired, ExtensionMalformed, InvalidName, IoFailure, NotYetValid, PatternSyntax,
    ProfileSyntax, SignatureInvalid, SubjectMismatch, UntrustedRoot,
)
from .glob import GlobPattern, compile_pattern
from .names import NamespacePath, parse_path
from .policy import Action, Effect, PolicyProfile, PolicyRule, parse_profile

POLICY_ARC = "1.3.6.1.3.81"
ACTION_OIDS = {
    Action.TOPIC_PUBLISH: x509.ObjectIdentifier(POLICY_ARC + ".1"),
    Action.TOPIC_SUBSCRIBE: x509.ObjectIdentifier(POLICY_ARC + ".2"),
    Action.SERVICE_ADVERTISE: x509.ObjectIdentifier(POLICY_ARC + ".3"),
    Action.SERVICE_CALL: x509.ObjectIdentifier(POLICY_ARC + ".4"),
    Action.PARAM_READ: x509.ObjectIdentifier(POLICY_ARC + ".5"),
    Action.PARAM_WRITE: x509.ObjectIdentifier(POLICY_ARC + ".6"),
    Action.GRAPH_EXECUTE: x509.ObjectIdentifier(POLICY_ARC + ".7"),
}
OID_ACTIONS = {oid: action for action, oid in ACTION_OIDS.items()}

KEY_TYPES = ("rsa", "ecdsa-p256")
MIN_RSA_BITS = 2048
BACKDATE = dt.timedelta(minutes=1)
# what cryptography raises while lazily decoding fields of a damaged certificate
_DECODE_ERRORS = (ValueError, KeyError, TypeError, x509.DuplicateExtension, x509.InvalidVersion)

NODE_KEY = "node.key.pem"
NODE_CERT = "node.cert.pem"
CA_CHAIN = "ca_chain.pem"


def utcnow() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def _as_datetime(now) -> dt.datetime:
    if now is None:
        return utcnow()
    if isinstance(now, (int, float)):
        return dt.datetime.fromtimestamp(now, dt.timezone.utc)
    if now.tzinfo is None:
        return now.replace(tzinfo=dt.timezone.utc)
    return now


# configuration

@dataclass(frozen=True)
class KeySpec:
    key_type: str = "ecdsa-p256"
    rsa_bits: int = 2048
    validity_days: int = 365

    def validate(self, where: str):
        if self.key_type not in KEY_TYPES:
            raise ConfigInvalid(f"{where}: key_type must be one of {KEY_TYPES}")
        if not isinstance(self.rsa_bits, int) or self.rsa_bits < MIN_RSA_BITS:
            raise ConfigInvalid(f"{where}: rsa_bits must be an integer >= {MIN_RSA_BITS}")
        if not isinstance(self.validity_days, int) or self.validity_days < 1:
            raise ConfigInvalid(f"{where}: validity_days must be >= 1")


@dataclass(frozen=True)
class CaSpec:
    common_name: str = "srosk root CA"
    key: KeySpec = KeySpec(validity_days=3650)
    intermediate: CaSpec | None = None


@dataclass(frozen=True)
class Override:
    match: GlobPattern
    settings: dict


@dataclass(frozen=True)
class KeyserverConfig:
    ca: CaSpec = CaSpec()
    node_defaults: KeySpec = KeySpec()
    overrides: tuple[Override, ...] = ()
    profiles: tuple[tuple[GlobPattern, str], ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> KeyserverConfig:
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
        try:
            ca = _ca_spec(data.get("ca", {}), "ca")
            defaults = _key_spec(data.get("node_defaults", {}), KeySpec(), "node_defaults")
            overrides = []
            for i, item in enumerate(data.get("overrides", [])):
                item = dict(item)
                pattern = compile_pattern(item.pop("match"))
                unknown = set(item) - {"key_type", "rsa_bits", "validity_days"}
                if unknown:
                    raise ConfigInvalid(f"overrides[{i}]: unknown settings {sorted(unknown)}")
                _key_spec(item, defaults, f"overrides[{i}]")
                overrides.append(Override(pattern, item))
            profiles = []
            for pattern, text in dict(data.get("profiles", {})).items():
                parse_profile(text)
                profiles.append((compile_pattern(pattern), text))
        except (KeyError, TypeError, PatternSyntax, ProfileSyntax) as exc:
            raise ConfigInvalid(f"invalid keyserver config: {exc}") from None
        return cls(ca, defaults, tuple(overrides), tuple(profiles))

    @classmethod
    def load(cls, path) -> KeyserverConfig:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        def ca_dict(spec: CaSpec):
            out = {"common_name": spec.common_name, **_key_dict(spec.key)}
            if spec.intermediate is not None:
                out["intermediate"] = ca_dict(spec.intermediate)
            return out

        return {
            "ca": ca_dict(self.ca),
            "node_defaults": _key_dict(self.node_defaults),
            "overrides": [{"match": o.match.source, **o.settings} for o in self.overrides],
            "profiles": {p.source: text for p, text in self.profiles},
        }

    def node_settings(self, name: NamespacePath) -> KeySpec:
        spec = self.node_defaults
        for override in self.overrides:
            if override.match.match(str(name)):
                spec = replace(spec, **override.settings)
        return spec

    def profile_for(self, name: NamespacePath) -> PolicyProfile | None:
        chosen = None
        for pattern, text in self.profiles:
            if pattern.match(str(name)):
                chosen = text
        if chosen is None:
            return None
        return PolicyProfile(name, parse_profile(chosen).rules)


def _key_dict(spec: KeySpec) -> dict:
    return {"key_type": spec.key_type, "rsa_bits": spec.rsa_bits,
            "validity_days": spec.validity_days}


def _key_spec(data: dict, base: KeySpec, where: str) -> KeySpec:
    fields = {k: data[k] for k in ("key_type", "rsa_bits", "validity_days") if k in data}
    spec = replace(base, **fields)
    spec.validate(where)
    return spec


def _ca_spec(data: dict, where: str) -> CaSpec:
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where} must be an object")
    key = _key_spec(data, KeySpec(validity_days=3650), where)
    inter = data.get("intermediate")
    return CaSpec(
        common_name=str(data.get("common_name", "srosk root CA" if where == "ca" else "srosk intermediate CA")),
        key=key,
        intermediate=_ca_spec(inter, where + ".intermediate") if inter else None,
    )


# key and certificate primitives

def generate_key(spec: KeySpec):
    if spec.key_type == "rsa":
        return rsa.generate_private_key(public_exponent=65537, key_size=spec.rsa_bits)
    return ec.generate_private_key(ec.SECP256R1())


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def _ski(public_key) -> x509.SubjectKeyIdentifier:
    return x509.SubjectKeyIdentifier.from_public_key(public_key)


def _ca_certificate(subject_cn, key, spec: KeySpec, issuer_cert, issuer_key, now, path_length):
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(subject_cn))
        .issuer_name(issuer_cert.subject if issuer_cert is not None else _name(subject_cn))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - BACKDATE)
        .not_valid_after(now + dt.timedelta(days=spec.validity_days))
        .add_extension(x509.BasicConstraints(ca=True, path_length=path_length), critical=True)
        .add_extension(x509.KeyUsage(
            digital_signature=False, content_commitment=False, key_encipherment=False,
            data_encipherment=False, key_agreement=False, key_cert_sign=True, crl_sign=True,
            encipher_only=False, decipher_only=False), critical=True)
        .add_extension(_ski(key.public_key()), critical=False)
    )
    signer_pub = (issuer_key or key).public_key()
    builder = builder.add_extension(
        x509.AuthorityKeyIdentifier.from_issuer_public_key(signer_pub), critical=False)
    return builder.sign(issuer_key or key, hashes.SHA256())


def policy_extension_values(profile: PolicyProfile) -> dict[Action, bytes]:
    """Per-action extension payloads; byte-identical for identical profiles."""
    per_action: dict[Action, set[tuple[bool, str, str]]] = {}
    for rule in profile.rules:
        per_action.setdefault(rule.action, set()).add(
            (rule.effect != Effect.DENY, rule.effect.value, rule.scope.source))
    out = {}
    for action in Action:
        entries = per_action.get(action)
        if entries:
            out[action] = "".join(f"{eff} {src}\n" for _, eff, src in sorted(entries)).encode("utf-8")
    return out


def _pem(cert: x509.Certificate) -> bytes:
    return cert.public_bytes(serialization.Encoding.PEM)


def _key_pem(key) -> bytes:
    return key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                             serialization.NoEncryption())


def _write(path: Path, data: bytes, private: bool = False):
    try:
        if private:
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.chmod(path, 0o600)
        else:
            path.write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None


def load_pem_chain(data: bytes) -> list[x509.Certificate]:
    try:
        return x509.load_pem_x509_certificates(data)
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None


# CA

@dataclass(frozen=True)
class ChainSummary:
    subjects: tuple[str, ...]
    fingerprints: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.subjects)


@dataclass
class CaStore:
    directory: Path
    issuer_cert: x509.Certificate
    issuer_key: object
    chain: list[x509.Certificate]  # issuing CA first, root last
    config: KeyserverConfig

    @property
    def root(self) -> x509.Certificate:
        return self.chain[-1]

    @classmethod
    def open(cls, directory) -> CaStore:
        directory = Path(directory)
        try:
            chain = load_pem_chain((directory / CA_CHAIN).read_bytes())
            name = "intermediate" if (directory / "intermediate.key.pem").exists() else "root"
            key = serialization.load_pem_private_key(
                (directory / f"{name}.key.pem").read_bytes(), password=None)
            config_path = directory / "config.json"
            config = KeyserverConfig.load(config_path) if config_path.exists() else KeyserverConfig()
        except (OSError, ValueError) as exc:
            raise CaUnavailable(f"{directory}: {exc}") from None
        return cls(directory, chain[0], key, chain, config)

    @contextlib.contextmanager
    def locked(self):
        with open(self.directory / ".lock", "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield self
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)


def init_ca(config: KeyserverConfig, out, now=None) -> ChainSummary:
    out = Path(out)
    now = _as_datetime(now)
    if (out / "root.cert.pem").exists() or (out / CA_CHAIN).exists():
        raise AlreadyInitialized(f"CA already present in {out}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    # specs below are validated at config load; re-check in case the config was built in code
    specs = [config.ca] + ([config.ca.intermediate] if config.ca.intermediate else [])
    for spec in specs:
        spec.key.validate(spec.common_name)
    if config.ca.intermediate and config.ca.intermediate.intermediate:
        raise ConfigInvalid("only one intermediate level is supported")

    root_key = generate_key(config.ca.key)
    path_len = 1 if config.ca.intermediate else 0
    root = _ca_certificate(config.ca.common_name, root_key, config.ca.key, None, None, now, path_len)
    _write(out / "root.key.pem", _key_pem(root_key), private=True)
    _write(out / "root.cert.pem", _pem(root))
    chain = [root]
    if config.ca.intermediate:
        spec = config.ca.intermediate
        inter_key = generate_key(spec.key)
        inter = _ca_certificate(spec.common_name, inter_key, spec.key, root, root_key, now, 0)
        _write(out / "intermediate.key.pem", _key_pem(inter_key), private=True)
        _write(out / "intermediate.cert.pem", _pem(inter))
        chain.insert(0, inter)
    _write(out / CA_CHAIN, b"".join(_pem(c) for c in chain))
    _write(out / "config.json", json.dumps(config.to_dict(), indent=2).encode())
    return summarize_chain(chain)


def summarize_chain(chain) -> ChainSummary:
    return ChainSummary(
        tuple(c.subject.rfc4514_string() for c in chain),
        tuple(fingerprint(c) for c in chain),
    )


def fingerprint(cert: x509.Certificate, digest: str = "sha256") -> str:
    algo = {"sha256": hashes.SHA256(), "sha1": hashes.SHA1(), "sha384": hashes.SHA384(),
            "sha512": hashes.SHA512()}.get(digest)
    if algo is None:
        raise ValueError(f"unsupported digest {digest!r}")
    return ":".join(f"{b:02X}" for b in cert.fingerprint(algo))


# node certificates

@dataclass
class CertificateBundle:
    node_certificate: x509.Certificate
    private_key: object
    chain: list[x509.Certificate] = field(default_factory=list)  # root last

    @property
    def name(self) -> NamespacePath:
        return subject_name(self.node_certificate)

    def write(self, directory) -> Path:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(str(exc)) from None
        _write(directory / NODE_KEY, _key_pem(self.private_key), private=True)
        _write(directory / NODE_CERT, _pem(self.node_certificate))
        _write(directory / CA_CHAIN, b"".join(_pem(c) for c in self.chain))
        return directory


def issue_node_cert(node_name, profile: PolicyProfile, config: KeyserverConfig | None,
                    ca_store: CaStore, now=None) -> CertificateBundle:
    node_name = parse_path(node_name)
    if profile.subject != node_name:
        raise SubjectMismatch(f"profile subject {profile.subject} != node name {node_name}")
    if ca_store is None:
        raise CaUnavailable("no CA store")
    config = config or ca_store.config
    spec = config.node_settings(node_name)
    now = _as_datetime(now)
    key = generate_key(spec)
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(str(node_name)))
        .issuer_name(ca_store.issuer_cert.subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - BACKDATE)
        .not_valid_after(now + dt.timedelta(days=spec.validity_days))
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(x509.KeyUsage(
            digital_signature=True, content_commitment=False, key_encipherment=False,
            data_encipherment=False, key_agreement=False, key_cert_sign=False, crl_sign=False,
            encipher_only=False, decipher_only=False), critical=True)
        .add_extension(x509.ExtendedKeyUsage(
            [ExtendedKeyUsageOID.CLIENT_AUTH, ExtendedKeyUsageOID.SERVER_AUTH]), critical=False)
        .add_extension(_ski(key.public_key()), critical=False)
        .add_extension(x509.AuthorityKeyIdentifier.from_issuer_public_key(
            ca_store.issuer_key.public_key()), critical=False)
    )
    for action, value in policy_extension_values(profile).items():
        builder = builder.add_extension(
            x509.UnrecognizedExtension(ACTION_OIDS[action], value), critical=False)
    with ca_store.locked():
        cert = builder.sign(ca_store.issuer_key, hashes.SHA256())
    return CertificateBundle(cert, key, list(ca_store.chain))


def subject_name(cert: x509.Certificate) -> NamespacePath:
    try:
        attrs = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
        if len(attrs) != 1:
            raise BadSubject("certificate must carry exactly one common name")
        return parse_path(attrs[0].value)
    except InvalidName as exc:
        raise BadSubject(f"common name is not a graph name: {exc}") from None
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None


def _parse_extension_value(action: Action, raw: bytes) -> list[PolicyRule]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ExtensionMalformed(f"{action.value}: value is not UTF-8") from None
    rules = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("allow", "deny"):
            raise ExtensionMalformed(f"{action.value}: bad entry {line!r}")
        try:
            rules.append(PolicyRule(Effect(parts[0]), action, compile_pattern(parts[1])))
        except PatternSyntax as exc:
            raise ExtensionMalformed(f"{action.value}: {exc}") from None
    return rules


def parse_policy_extensions(cert: x509.Certificate) -> PolicyProfile:
    name = subject_name(cert)
    try:
        extensions = list(cert.extensions)
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(f"extensions do not parse: {exc}") from None
    rules = []
    for ext in extensions:
        action = OID_ACTIONS.get(ext.oid)
        if action is None:
            continue
        raw = ext.value.value if isinstance(ext.value, x509.UnrecognizedExtension) else b""
        rules.extend(_parse_extension_value(action, raw))
    return PolicyProfile(name, tuple(rules))


# verification

@dataclass(frozen=True)
class Identity:
    name: NamespacePath
    profile: PolicyProfile


def _key_id(cert, ext_class):
    try:
        ext = cert.extensions.get_extension_for_class(ext_class)
    except x509.ExtensionNotFound:
        return None
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None
    return ext.value.digest if ext_class is x509.SubjectKeyIdentifier else ext.value.key_identifier


def _check_window(cert, now: dt.datetime):
    try:
        start, end = cert.not_valid_before_utc, cert.not_valid_after_utc
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None
    if now < start:
        raise NotYetValid(f"{cert.subject.rfc4514_string()} not valid before {start.isoformat()}")
    if now > end:
        raise Expired(f"{cert.subject.rfc4514_string()} expired {end.isoformat()}")


def _is_ca(cert) -> bool:
    try:
        return cert.extensions.get_extension_for_class(x509.BasicConstraints).value.ca
    except x509.ExtensionNotFound:
        return False
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None


def _find_issuer(cert, candidates):
    aki = _key_id(cert, x509.AuthorityKeyIdentifier)
    for cand in candidates:
        if cand.subject != cert.issuer:
            continue
        if aki is not None:
            ski = _key_id(cand, x509.SubjectKeyIdentifier)
            if ski is not None and ski != aki:
                continue
        return cand
    return None


def _verify_signature(cert, issuer):
    try:
        cert.verify_directly_issued_by(issuer)
    except InvalidSignature:
        raise SignatureInvalid(f"bad signature on {cert.subject.rfc4514_string()}") from None
    except (ValueError, TypeError, UnsupportedAlgorithm) as exc:
        raise SignatureInvalid(f"cannot verify {cert.subject.rfc4514_string()}: {exc}") from None


def load_certificate(data) -> x509.Certificate:
    if isinstance(data, x509.Certificate):
        return data
    try:
        if data.lstrip().startswith(b"-----BEGIN"):
            return x509.load_pem_x509_certificate(data)
        return x509.load_der_x509_certificate(data)
    except _DECODE_ERRORS as exc:
        raise CertificateMalformed(str(exc)) from None


def verify_chain(certificate, chain, trusted_root, now=None) -> Identity:
    """Verify ``certificate`` up to ``trusted_root`` and return its identity.

    ``chain`` lists CA certificates root-last; it may or may not include the
    root itself. ``now`` is the validation instant (datetime or epoch seconds).
    """
    now = _as_datetime(now)
    cert = load_certificate(certificate)
    root = load_certificate(trusted_root)
    chain = [load_certificate(c) for c in chain]
    root_der = root.public_bytes(serialization.Encoding.DER)
    candidates = chain + [root]

    try:
        current = cert
        for _ in range(len(candidates) + 1):
            _check_window(current, now)
            if current.public_bytes(serialization.Encoding.DER) == root_der:
                _verify_signature(current, current)
                break
            issuer = _find_issuer(current, candidates)
            if issuer is None:
                raise UntrustedRoot(f"no trusted issuer for {current.issuer.rfc4514_string()}")
            if not _is_ca(issuer):
                raise UntrustedRoot(f"issuer {issuer.subject.rfc4514_string()} is not a CA")
            _verify_signature(current, issuer)
            if issuer is not root and issuer.subject == issuer.issuer:
                # self-signed but not the configured root
                raise UntrustedRoot(f"chain ends at untrusted root {issuer.subject.rfc4514_string()}")
            current = issuer
        else:
            raise UntrustedRoot("chain does not terminate at the trusted root")
    except _DECODE_ERRORS as exc:
        # lazily parsed fields of a damaged certificate
        raise CertificateMalformed(str(exc)) from None

    profile = parse_policy_extensions(cert)
    return Identity(profile.subject, profile)


# keystores

@dataclass
class Keystore:
    directory: Path
    certificate: x509.Certificate
    chain: list[x509.Certificate]  # root last
    key_path: Path
    cert_path: Path
    chain_path: Path

    @classmethod
    def load(cls, directory) -> Keystore:
        directory = Path(directory)
        try:
            cert_bytes = (directory / NODE_CERT).read_bytes()
            chain_bytes = (directory / CA_CHAIN).read_bytes()
            if not (directory / NODE_KEY).exists():
                raise FileNotFoundError(directory / NODE_KEY)
        except OSError as exc:
            raise IoFailure(f"keystore {directory}: {exc}") from None
        cert = load_certificate(cert_bytes)
        chain = load_pem_chain(chain_bytes)
        if not chain:
            raise CaUnavailable(f"{directory / CA_CHAIN} holds no certificates")
        return cls(directory, cert, chain, directory / NODE_KEY, directory / NODE_CERT,
                   directory / CA_CHAIN)

    @property
    def root(self) -> x509.Certificate:
        return self.chain[-1]

    @property
    def name(self) -> NamespacePath:
        return subject_name(self.certificate)

    @property
    def profile(self) -> PolicyProfile:
        return parse_policy_extensions(self.certificate)

    def verify_peer(self, certificate, now=None) -> Identity:
        return verify_chain(certificate, self.chain, self.root, now)

    def intermediates_pem(self) -> bytes:
        return b"".join(_pem(c) for c in self.chain[:-1])

    def root_pem(self) -> bytes:
        return _pem(self.root)

    def cert_pem(self) -> bytes:
        return _pem(self.certificate)


def inspect_certificate(path, digest: str = "sha256") -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    cert = load_certificate(data)
    profile = parse_policy_extensions(cert)
    return {
        "subject": str(profile.subject),
        "issuer": cert.issuer.rfc4514_string(),
        "not_before": cert.not_valid_before_utc.isoformat(),
        "not_after": cert.not_valid_after_utc.isoformat(),
        "fingerprint": f"{digest}:{fingerprint(cert, digest)}",
        "rules": [str(r) for r in profile.sorted_rules()],
    }
