"""Channel sender authorization keyed only on immutable platform identifiers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Union

__all__ = [
    "AllowlistMatch",
    "MatchSource",
    "RepairOutcome",
    "SenderContext",
    "normalize_allow_entry",
    "repair_allow_from_handles",
    "resolve_allowlist_identity",
]

WILDCARD = "*"

# A handle lookup returns the immutable id, or None when the handle is unknown.
HandleLookup = Callable[[str], Optional[Union[str, int]]]


class MatchSource(str, Enum):
    # No name/username member: display handles are never authoritative.
    WILDCARD = "wildcard"
    ID = "id"


@dataclass(frozen=True)
class AllowlistMatch:
    allowed: bool
    match_key: str | None = None
    match_source: MatchSource | None = None


@dataclass(frozen=True)
class SenderContext:
    """``raw_handle`` is kept for logging only and never consulted for a decision."""

    sender_id: str
    raw_handle: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.sender_id, int) and not isinstance(self.sender_id, bool):
            object.__setattr__(self, "sender_id", str(self.sender_id))
        if not isinstance(self.sender_id, str) or not self.sender_id:
            raise ValueError("sender_id must be a non-empty string")


def normalize_allow_entry(entry: str | int) -> str:
    """Config files may hold ids as numbers; compare them as decimal strings."""
    if isinstance(entry, bool):
        raise TypeError("boolean is not an allowlist entry")
    if isinstance(entry, int):
        return str(entry)
    if not isinstance(entry, str):
        raise TypeError(f"allowlist entry must be str or int, got {type(entry).__name__}")
    return entry.strip()


def resolve_allowlist_identity(allow_from: Iterable[str | int], sender: SenderContext) -> AllowlistMatch:
    entries = [normalize_allow_entry(e) for e in allow_from]
    if WILDCARD in entries:
        return AllowlistMatch(True, WILDCARD, MatchSource.WILDCARD)
    if sender.sender_id in entries:
        return AllowlistMatch(True, sender.sender_id, MatchSource.ID)
    return AllowlistMatch(False)


class RepairOutcome(str, Enum):
    PASSTHROUGH = "passthrough"
    REWRITTEN = "rewritten"
    UNRESOLVED = "unresolved"


def _needs_lookup(entry: str) -> bool:
    return entry != WILDCARD and (entry.startswith("@") or not (entry.isascii() and entry.isdigit()))


def _lookup_one(entry: str, lookup: HandleLookup) -> tuple[str, RepairOutcome, str]:
    try:
        found = lookup(entry)
    except Exception as exc:  # transport errors stay per-entry
        return entry, RepairOutcome.UNRESOLVED, f"lookup failed: {exc}"
    if isinstance(found, int) and not isinstance(found, bool):
        found = str(found)
    if not isinstance(found, str) or not (found.isascii() and found.isdigit()):
        return entry, RepairOutcome.UNRESOLVED, "no immutable id returned"
    return found, RepairOutcome.REWRITTEN, f"-> {found}"


def repair_allow_from_handles(
    entries: Iterable[str | int],
    lookup: HandleLookup,
    max_workers: int = 1,
) -> tuple[list[str], list[tuple[str, RepairOutcome, str]]]:
    """Rewrite mutable handles in an allow-from list to immutable ids.

    Every input entry gets one report row ``(entry, outcome, detail)``.
    Unresolved entries are kept as-is; dropping them is the caller's call.
    """
    normalized = [normalize_allow_entry(e) for e in entries]
    todo = [e for e in normalized if _needs_lookup(e)]
    if max_workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            resolved = list(pool.map(lambda e: _lookup_one(e, lookup), todo))
    else:
        resolved = [_lookup_one(e, lookup) for e in todo]
    results = iter(resolved)

    repaired: list[str] = []
    report: list[tuple[str, RepairOutcome, str]] = []
    for entry in normalized:
        if _needs_lookup(entry):
            value, outcome, detail = next(results)
        else:
            value, outcome, detail = entry, RepairOutcome.PASSTHROUGH, ""
        repaired.append(value)
        report.append((entry, outcome, detail))
    return repaired, report
