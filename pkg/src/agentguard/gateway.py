"""Gateway URL override validation and node-invoke method gating."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable
from urllib.parse import urlsplit

__all__ = [
    "APPROVALS_PREFIX",
    "CanonicalEndpoint",
    "DEFAULT_GATEWAY_PORT",
    "GatewayEndpointPolicy",
    "GatewayReason",
    "LOOPBACK_HOSTS",
    "MethodDecision",
    "NODE_INVOKE_COMMANDS",
    "UrlDecision",
    "canonicalize_endpoint",
    "endpoint_allowlist",
    "gate_node_invoke_method",
    "validate_gateway_url_override",
]

DEFAULT_GATEWAY_PORT = 18789
LOOPBACK_HOSTS = ("127.0.0.1", "::1", "localhost")
DEFAULT_PORTS = {"ws": 80, "wss": 443}

APPROVALS_PREFIX = "system.execApprovals."
NODE_INVOKE_COMMANDS = frozenset({"system.run", "system.which", "system.notify", "browser.proxy"})

_METHOD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*\Z")


class GatewayReason(str, Enum):
    UNPARSEABLE_URL = "unparseable_url"
    ENDPOINT_NOT_ALLOWLISTED = "endpoint_not_allowlisted"
    APPROVAL_POLICY_MUTATION = "approval_policy_mutation"
    METHOD_NOT_DISPATCHABLE = "method_not_dispatchable"


@dataclass(frozen=True)
class CanonicalEndpoint:
    scheme: str
    host: str
    port: int

    def __str__(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        return f"{self.scheme}://{host}:{self.port}"


def canonicalize_endpoint(url: str, schemes: Iterable[str] = ("ws", "wss")) -> CanonicalEndpoint:
    """Parse a WebSocket URL into its (scheme, host, port) key.

    Raises:
        ValueError: for anything that is not a plain ``ws``/``wss`` URL with a
            host.  URLs carrying user-info are refused outright.
    """
    if not isinstance(url, str) or any(c.isspace() for c in url) or "\\" in url:
        raise ValueError(f"malformed URL: {url!r}")
    parts = urlsplit(url)
    scheme = parts.scheme.lower()
    if scheme not in schemes:
        raise ValueError(f"scheme {scheme!r} not accepted")
    if "@" in parts.netloc:
        raise ValueError("user-info in gateway URL")
    host = parts.hostname
    if not host:
        raise ValueError("missing host")
    port = parts.port  # raises ValueError on garbage ports
    if port is None:
        if parts.netloc.endswith(":"):
            raise ValueError("empty port")
        port = DEFAULT_PORTS[scheme]
    if not 1 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    return CanonicalEndpoint(scheme, host.lower(), port)


@dataclass(frozen=True)
class GatewayEndpointPolicy:
    port: int = DEFAULT_GATEWAY_PORT
    remote_url: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.port, bool) or not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValueError(f"gateway port must be in 1..65535, got {self.port!r}")
        if self.remote_url is not None:
            canonicalize_endpoint(self.remote_url)


def endpoint_allowlist(policy: GatewayEndpointPolicy) -> frozenset[CanonicalEndpoint]:
    keys = {CanonicalEndpoint("ws", host, policy.port) for host in LOOPBACK_HOSTS}
    if policy.remote_url:
        keys.add(canonicalize_endpoint(policy.remote_url))
    return frozenset(keys)


@dataclass(frozen=True)
class UrlDecision:
    allowed: bool
    override: bool
    reason: GatewayReason | None = None
    detail: str = ""


def validate_gateway_url_override(candidate: str | None, policy: GatewayEndpointPolicy) -> UrlDecision:
    """Admit a caller-supplied gateway URL only if it names a known endpoint.

    An empty candidate is not an override: the caller falls back to the
    configured endpoint.
    """
    if candidate is None or not candidate.strip():
        return UrlDecision(allowed=True, override=False, detail="no override; configured endpoint used")
    try:
        key = canonicalize_endpoint(candidate.strip())
    except ValueError as exc:
        return UrlDecision(False, True, GatewayReason.UNPARSEABLE_URL, str(exc))
    if key in endpoint_allowlist(policy):
        return UrlDecision(True, True, detail=str(key))
    return UrlDecision(False, True, GatewayReason.ENDPOINT_NOT_ALLOWLISTED, str(key))


@dataclass(frozen=True)
class MethodDecision:
    dispatchable: bool
    reason: GatewayReason | None = None


def gate_node_invoke_method(
    method: str, dispatch_allowlist: Iterable[str] = NODE_INVOKE_COMMANDS
) -> MethodDecision:
    """Decide whether ``node.invoke`` may dispatch ``method``.

    Approval-policy methods are refused before the allowlist is consulted, so
    adding them to ``dispatch_allowlist`` has no effect.
    """
    if not isinstance(method, str) or not _METHOD_RE.match(method):
        return MethodDecision(False, GatewayReason.METHOD_NOT_DISPATCHABLE)
    folded = method.lower()
    if folded.startswith(APPROVALS_PREFIX.lower()) or folded == APPROVALS_PREFIX[:-1].lower():
        return MethodDecision(False, GatewayReason.APPROVAL_POLICY_MUTATION)
    if method in frozenset(dispatch_allowlist):
        return MethodDecision(True)
    return MethodDecision(False, GatewayReason.METHOD_NOT_DISPATCHABLE)
