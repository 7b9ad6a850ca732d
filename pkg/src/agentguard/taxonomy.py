"""Attack-surface and kill-chain labels attached to every audit finding."""

from __future__ import annotations

from enum import Enum

from agentguard.allowlist import ExecReason
from agentguard.gateway import GatewayReason
from agentguard.sandbox import ViolationKind
from agentguard.webhook import WebhookReason

__all__ = ["IdentityReason", "ProvenanceReason", "SkillReason", "Stage", "Surface", "label_decision"]


class Surface(str, Enum):
    CHANNEL_INPUT = "Channel Input Interface"
    PLUGIN_SKILL = "Plugin & Skill Distribution"
    AGENT_CONTEXT = "Agent Context Window"
    GATEWAY_WEBSOCKET = "Gateway WebSocket Interface"
    TOOL_DISPATCH = "Tool Dispatch Interface"
    EXEC_POLICY = "Exec Policy Engine"
    CONTAINER_BOUNDARY = "Container Boundary"
    HOST_OS = "Host OS Interface"
    LLM_PROVIDER = "LLM Provider Interface"
    INTER_AGENT = "Inter-Agent Communication"


class Stage(str, Enum):
    INITIAL_ACCESS = "Initial Access"
    CONTEXT_MANIPULATION = "Context Manipulation"
    EXECUTION = "Execution"
    CREDENTIAL_ACCESS = "Credential Access"
    PRIVILEGE_ESCALATION = "Privilege Escalation"
    IMPACT = "Impact"


class IdentityReason(str, Enum):
    SENDER_NOT_ALLOWED = "sender_not_allowed"
    HANDLE_UNRESOLVED = "handle_unresolved"


class SkillReason(str, Enum):
    HIGH_ENTROPY_BLOB = "high_entropy_blob"
    RAW_IP_URL = "raw_ip_url"
    BASE64_COMMAND_BLOCK = "base64_command_block"
    UNREADABLE = "unreadable"
    MANIFEST_ADDED = "added"
    MANIFEST_REMOVED = "removed"
    MANIFEST_CHANGED = "changed"


class ProvenanceReason(str, Enum):
    INTER_SESSION_TURN = "inter_session_turn"


_EXEC = (Surface.EXEC_POLICY, Stage.PRIVILEGE_ESCALATION)
_CONTAINER = (Surface.CONTAINER_BOUNDARY, Stage.PRIVILEGE_ESCALATION)
_CHANNEL = (Surface.CHANNEL_INPUT, Stage.INITIAL_ACCESS)
_SKILL = (Surface.PLUGIN_SKILL, Stage.INITIAL_ACCESS)

_ASSIGNMENTS: list[tuple[Enum, tuple[Surface, Stage]]] = [
    (GatewayReason.UNPARSEABLE_URL, (Surface.GATEWAY_WEBSOCKET, Stage.CREDENTIAL_ACCESS)),
    (GatewayReason.ENDPOINT_NOT_ALLOWLISTED, (Surface.GATEWAY_WEBSOCKET, Stage.CREDENTIAL_ACCESS)),
    (GatewayReason.APPROVAL_POLICY_MUTATION, (Surface.GATEWAY_WEBSOCKET, Stage.PRIVILEGE_ESCALATION)),
    (GatewayReason.METHOD_NOT_DISPATCHABLE, (Surface.GATEWAY_WEBSOCKET, Stage.EXECUTION)),
    (ProvenanceReason.INTER_SESSION_TURN, (Surface.INTER_AGENT, Stage.CONTEXT_MANIPULATION)),
    (IdentityReason.SENDER_NOT_ALLOWED, _CHANNEL),
    (IdentityReason.HANDLE_UNRESOLVED, _CHANNEL),
]
_ASSIGNMENTS += [(r, _EXEC) for r in ExecReason]
_ASSIGNMENTS += [(r, _CHANNEL) for r in WebhookReason]
_ASSIGNMENTS += [(r, _CONTAINER) for r in ViolationKind]
_ASSIGNMENTS += [(r, _SKILL) for r in SkillReason]

# str-valued enums hash like their values, so key on the enum class as well.
_LABELS = {(type(r), r.value): label for r, label in _ASSIGNMENTS}


def label_decision(reason: Enum) -> tuple[str, str]:
    """Return the (surface, stage) pair for any reason enum member of this package.

    Raises:
        KeyError: if ``reason`` is not one of the package's reason enums.
    """
    surface, stage = _LABELS[(type(reason), reason.value)]
    return surface.value, stage.value


def all_reasons() -> list[Enum]:
    """Every reason member with a label, for exhaustiveness checks."""
    return [r for r, _ in _ASSIGNMENTS]
