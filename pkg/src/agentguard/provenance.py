"""Input provenance tags for messages entering an agent session."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Mapping

__all__ = [
    "INTER_SESSION_PREFIX",
    "InputProvenance",
    "ProvenanceKind",
    "SessionMessage",
    "filter_memory_context",
    "has_inter_session_user_provenance",
    "normalize_input_provenance",
    "sanitize_session_history",
]

INTER_SESSION_PREFIX = "[Inter-session message] "


class ProvenanceKind(str, Enum):
    EXTERNAL_USER = "external_user"
    INTER_SESSION = "inter_session"
    INTERNAL_SYSTEM = "internal_system"


_KIND_VALUES = {k.value: k for k in ProvenanceKind}
_SOURCE_KEYS = {
    "source_session_key": ("sourceSessionKey", "source_session_key"),
    "source_channel": ("sourceChannel", "source_channel"),
    "source_tool": ("sourceTool", "source_tool"),
}


@dataclass(frozen=True)
class InputProvenance:
    kind: ProvenanceKind
    source_session_key: str | None = None
    source_channel: str | None = None
    source_tool: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProvenanceKind(self.kind))
        if self.kind is ProvenanceKind.EXTERNAL_USER and any(
            (self.source_session_key, self.source_channel, self.source_tool)
        ):
            raise ValueError("external_user provenance carries no source fields")

    def to_dict(self) -> dict[str, str]:
        doc = {"kind": self.kind.value}
        for attr, (camel, _) in _SOURCE_KEYS.items():
            value = getattr(self, attr)
            if value is not None:
                doc[camel] = value
        return doc


def normalize_input_provenance(candidate: Any) -> InputProvenance | None:
    """Accept a provenance document only if its ``kind`` is one of the three known values.

    Anything else yields ``None`` and the message counts as unprovenanced
    external input.  Source fields that are not strings are dropped, as are
    source fields on ``external_user`` documents.
    """
    if not isinstance(candidate, Mapping):
        return None
    kind = candidate.get("kind")
    if not isinstance(kind, str) or kind not in _KIND_VALUES:
        return None
    kind_enum = _KIND_VALUES[kind]
    sources: dict[str, str] = {}
    if kind_enum is not ProvenanceKind.EXTERNAL_USER:
        for attr, keys in _SOURCE_KEYS.items():
            for key in keys:
                value = candidate.get(key)
                if isinstance(value, str) and value:
                    sources[attr] = value
                    break
    return InputProvenance(kind_enum, **sources)


@dataclass(frozen=True)
class SessionMessage:
    role: str
    content: str
    provenance: InputProvenance | None = None
    # Set once the in-memory annotation has been applied.
    annotated: bool = False

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant"):
            raise ValueError(f"role must be 'user' or 'assistant', got {self.role!r}")


def has_inter_session_user_provenance(message: SessionMessage) -> bool:
    return (
        message.role == "user"
        and message.provenance is not None
        and message.provenance.kind is ProvenanceKind.INTER_SESSION
    )


def sanitize_session_history(messages: Iterable[SessionMessage]) -> list[SessionMessage]:
    """Return a new history with inter-session user turns visibly annotated.

    Roles are untouched.  Messages already annotated in memory are passed
    through, so sanitizing twice is a no-op.
    """
    out = []
    for msg in messages:
        if has_inter_session_user_provenance(msg) and not msg.annotated:
            msg = replace(msg, content=INTER_SESSION_PREFIX + msg.content, annotated=True)
        out.append(msg)
    return out


def filter_memory_context(messages: Iterable[SessionMessage]) -> list[SessionMessage]:
    """Drop inter-session user turns before building long-term memory."""
    return [m for m in messages if not has_inter_session_user_provenance(m)]
