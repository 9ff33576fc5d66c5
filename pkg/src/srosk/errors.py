"""Exception hierarchy shared by every srosk module.

Errors that cross the wire carry a ``code`` attribute; the registry and the
peer channels serialize ``{code, reason}`` and clients rebuild the matching
exception class with :func:`from_wire`.
"""

from __future__ import annotations


class SroskError(Exception):
    code = "Error"

    def __init__(self, reason: str = ""):
        super().__init__(reason)
        self.reason = reason

    def to_wire(self) -> dict:
        return {"code": self.code, "reason": self.reason}


# names / policy

class InvalidName(SroskError, ValueError):
    code = "InvalidName"


class PatternSyntax(SroskError, ValueError):
    code = "PatternSyntax"


class ProfileSyntax(SroskError, ValueError):
    code = "ProfileSyntax"


# pki

class PkiError(SroskError):
    code = "PkiError"


class ConfigInvalid(PkiError):
    code = "ConfigInvalid"


class AlreadyInitialized(PkiError):
    code = "AlreadyInitialized"


class CaUnavailable(PkiError):
    code = "CaUnavailable"


class SubjectMismatch(PkiError):
    code = "SubjectMismatch"


class ExtensionMalformed(PkiError):
    code = "ExtensionMalformed"


class VerificationError(PkiError):
    """Any reason a certificate chain was not accepted."""

    code = "VerificationError"


class SignatureInvalid(VerificationError):
    code = "SignatureInvalid"


class CertificateMalformed(VerificationError):
    code = "CertificateMalformed"


class Expired(VerificationError):
    code = "Expired"


class NotYetValid(VerificationError):
    code = "NotYetValid"


class UntrustedRoot(VerificationError):
    code = "UntrustedRoot"


class BadSubject(VerificationError):
    code = "BadSubject"


class IoFailure(SroskError):
    code = "IoFailure"


# wire

class ProtocolError(SroskError):
    code = "ProtocolError"


class HandshakeFailed(SroskError):
    code = "HandshakeFailed"


class PeerCertMissing(HandshakeFailed):
    code = "PeerCertMissing"


# graph operations

class PermissionDenied(SroskError):
    code = "PermissionDenied"

    def __init__(self, action, scope):
        action_name = getattr(action, "value", action)
        super().__init__(f"{action_name} {scope}")
        self.action = action
        self.scope = scope

    def to_wire(self) -> dict:
        return {"code": self.code, "reason": self.reason,
                "action": getattr(self.action, "value", self.action),
                "scope": str(self.scope)}


class TypeMismatch(SroskError):
    code = "TypeMismatch"


class NotRegistered(SroskError):
    code = "NotRegistered"


class ParamNotFound(SroskError):
    code = "ParamNotFound"


class ServiceNotFound(SroskError):
    code = "ServiceNotFound"


class NodeNotFound(SroskError):
    code = "NodeNotFound"


class NameMismatch(SroskError):
    code = "NameMismatch"


class BadRequest(SroskError):
    code = "BadRequest"


class Timeout(SroskError):
    code = "Timeout"


# audit / profilegen

class LogMalformed(SroskError):
    code = "LogMalformed"

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class UnknownPrimitive(SroskError, ValueError):
    code = "UnknownPrimitive"


class MissingParam(SroskError, ValueError):
    code = "MissingParam"


class InvalidPath(SroskError, ValueError):
    code = "InvalidPath"


class ParseFailure(SroskError, ValueError):
    code = "ParseFailure"


_BY_CODE = {cls.code: cls for cls in [
    InvalidName, PatternSyntax, ProfileSyntax, TypeMismatch, NotRegistered,
    ParamNotFound, ServiceNotFound, NodeNotFound, NameMismatch, BadRequest,
    Timeout, ProtocolError, HandshakeFailed, PeerCertMissing,
]}


def from_wire(error: dict) -> SroskError:
    """Rebuild an exception from a ``{code, reason}`` error object."""
    code = error.get("code", "Error")
    reason = error.get("reason", "")
    if code == "PermissionDenied":
        from .policy import Action

        action = error.get("action")
        scope = error.get("scope")
        if action is None or scope is None:
            action, _, scope = reason.partition(" ")
        try:
            action = Action(action)
        except ValueError:
            pass
        return PermissionDenied(action, scope)
    cls = _BY_CODE.get(code)
    if cls is None:
        exc = SroskError(reason)
        exc.code = code
        return exc
    return cls(reason)
