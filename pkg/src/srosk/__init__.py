"""Secure publish/subscribe graph toolkit.

Mutual-TLS channels between nodes and the registry, namespace-glob access
control carried in certificate extensions, enforce/complain/audit modes with
policy training from logs, and AppArmor profile generation.
"""

from .audit import Mode
from .errors import SroskError
from .glob import compile_pattern, match
from .names import NamespacePath, is_prefix, parse_path, resolve
from .policy import Action, Decision, Effect, PolicyProfile, PolicyRule, evaluate

__version__ = "0.1.0"

__all__ = [
    "Action", "Decision", "Effect", "Mode", "NamespacePath", "PolicyProfile", "PolicyRule",
    "SroskError", "compile_pattern", "evaluate", "is_prefix", "match", "parse_path", "resolve",
]
