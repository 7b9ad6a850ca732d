"""Per-binary flag policy with GNU long-option abbreviation handling.

GNU ``getopt_long`` accepts any unambiguous prefix of a long option, so
``sort --compress-prog=x`` is ``sort --compress-program=x``.  Every long
token is therefore canonicalized against the profile's known flags before
the allow/deny lookup, and anything that does not canonicalize is an
analysis failure rather than an implicit permit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Mapping, Union

from agentguard.errors import ConfigError, UsageError
from agentguard.shell import SimpleCommand

__all__ = [
    "Ambiguous",
    "Canonical",
    "FlagDecision",
    "FlagResolution",
    "MIN_ABBREVIATION",
    "PositionalPolicy",
    "SafeBinProfile",
    "Unknown",
    "consume_long_option_token",
    "default_profiles",
    "evaluate_safe_bin",
    "resolve_canonical_long_flag",
]

# Shortest abbreviation accepted, counted after the leading "--".
MIN_ABBREVIATION = 3


class PositionalPolicy(str, Enum):
    ANY = "any"
    NONE = "none"
    FILES_ONLY = "files_only"


class FlagDecision(str, Enum):
    PERMITTED = "permitted"
    DENIED = "denied"
    ANALYSIS_FAILURE = "analysis_failure"


def _check_long(flag: str) -> None:
    if not isinstance(flag, str) or not flag.startswith("--") or len(flag) <= 2 or "=" in flag:
        raise ValueError(f"long flag must look like --name without '=': {flag!r}")


@dataclass(frozen=True)
class SafeBinProfile:
    binary: str
    allowed_long_flags: frozenset[str] = frozenset()
    denied_long_flags: frozenset[str] = frozenset()
    allowed_short_flags: frozenset[str] = frozenset()
    positional_policy: PositionalPolicy = PositionalPolicy.FILES_ONLY
    value_short_flags: frozenset[str] = frozenset()
    value_long_flags: frozenset[str] = frozenset()
    known_long_flags: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("allowed_long_flags", "denied_long_flags", "allowed_short_flags",
                     "value_short_flags", "value_long_flags"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        object.__setattr__(self, "positional_policy", PositionalPolicy(self.positional_policy))
        if not self.binary or "/" in self.binary:
            raise ValueError(f"profile binary must be a basename: {self.binary!r}")
        for flag in self.allowed_long_flags | self.denied_long_flags:
            _check_long(flag)
        overlap = self.allowed_long_flags & self.denied_long_flags
        if overlap:
            raise ValueError(f"flags both allowed and denied: {sorted(overlap)}")
        for ch in self.allowed_short_flags:
            if len(ch) != 1 or ch == "-":
                raise ValueError(f"short flag must be one character: {ch!r}")
        if not self.value_short_flags <= self.allowed_short_flags:
            raise ValueError("value_short_flags must be a subset of allowed_short_flags")
        known = self.allowed_long_flags | self.denied_long_flags
        if not self.value_long_flags <= known:
            raise ValueError("value_long_flags must be a subset of the known long flags")
        object.__setattr__(self, "known_long_flags", known)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> SafeBinProfile:
        allowed = {"binary", "allowed_long_flags", "denied_long_flags", "allowed_short_flags",
                   "positional_policy", "value_short_flags", "value_long_flags"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown safe-bin profile field(s): {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in doc.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid safe-bin profile {doc.get('binary')!r}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "binary": self.binary,
            "allowed_long_flags": sorted(self.allowed_long_flags),
            "denied_long_flags": sorted(self.denied_long_flags),
            "allowed_short_flags": sorted(self.allowed_short_flags),
            "positional_policy": self.positional_policy.value,
            "value_short_flags": sorted(self.value_short_flags),
            "value_long_flags": sorted(self.value_long_flags),
        }


@dataclass(frozen=True)
class Canonical:
    flag: str
    inline_value: str | None = None


@dataclass(frozen=True)
class Unknown:
    pass


@dataclass(frozen=True)
class Ambiguous:
    candidates: tuple[str, ...]


FlagResolution = Union[Canonical, Unknown, Ambiguous]


def resolve_canonical_long_flag(token: str, profile: SafeBinProfile) -> FlagResolution:
    """Map a ``--name[=value]`` token to the profile flag it denotes.

    An exact match wins even when it also prefixes a longer flag, as in
    GNU getopt.  Otherwise a unique strict-prefix match of at least
    :data:`MIN_ABBREVIATION` characters is accepted.
    """
    if not isinstance(token, str) or not token.startswith("--") or token == "--":
        raise UsageError(f"not a long option token: {token!r}")
    name, eq, value = token.partition("=")
    inline = value if eq else None
    known = profile.known_long_flags
    if name in known:
        return Canonical(name, inline)
    if len(name) - 2 < MIN_ABBREVIATION:
        return Unknown()
    candidates = sorted(f for f in known if f.startswith(name))
    if len(candidates) == 1:
        return Canonical(candidates[0], inline)
    if not candidates:
        return Unknown()
    return Ambiguous(tuple(candidates))


def _decide(resolution: FlagResolution, profile: SafeBinProfile) -> FlagDecision:
    if not isinstance(resolution, Canonical):
        return FlagDecision.ANALYSIS_FAILURE
    if resolution.flag in profile.denied_long_flags:
        return FlagDecision.DENIED
    if resolution.flag in profile.allowed_long_flags:
        return FlagDecision.PERMITTED
    return FlagDecision.ANALYSIS_FAILURE  # pragma: no cover - Canonical implies known


def consume_long_option_token(token: str, profile: SafeBinProfile) -> FlagDecision:
    """Decide a single long-option token: canonicalize first, then look up."""
    return _decide(resolve_canonical_long_flag(token, profile), profile)


def _plausible_operand(value: str) -> bool:
    return bool(value) and "\x00" not in value and "\n" not in value


def evaluate_safe_bin(cmd: SimpleCommand, profile: SafeBinProfile) -> FlagDecision:
    """Check every argument of ``cmd`` against ``profile``.

    A denied flag anywhere wins over failures elsewhere, so scanning
    continues past the first failing token.
    """
    if cmd.basename != profile.binary:
        raise UsageError(f"profile for {profile.binary!r} applied to {cmd.basename!r}")
    denied = failed = False
    args = cmd.argv[1:]
    i = 0
    options_done = False
    while i < len(args):
        tok = args[i]
        i += 1
        if options_done or tok == "-" or not tok.startswith("-"):
            if profile.positional_policy is PositionalPolicy.NONE:
                failed = True
            elif profile.positional_policy is PositionalPolicy.FILES_ONLY and not _plausible_operand(tok):
                failed = True
            continue
        if tok == "--":
            options_done = True
            continue
        if tok.startswith("--"):
            resolution = resolve_canonical_long_flag(tok, profile)
            decision = _decide(resolution, profile)
            if decision is FlagDecision.DENIED:
                denied = True
            elif decision is FlagDecision.ANALYSIS_FAILURE:
                failed = True
            if isinstance(resolution, Canonical):
                takes_value = resolution.flag in profile.value_long_flags
                if takes_value and resolution.inline_value is None:
                    if i >= len(args):
                        failed = True
                    else:
                        i += 1
                elif not takes_value and resolution.inline_value is not None:
                    failed = True
            continue
        cluster = tok[1:]
        for k, ch in enumerate(cluster):
            if ch not in profile.allowed_short_flags:
                failed = True
                break
            if ch in profile.value_short_flags:
                rest = cluster[k + 1:]
                if rest:
                    failed = failed or not _plausible_operand(rest)
                elif i >= len(args):
                    failed = True
                else:
                    failed = failed or not _plausible_operand(args[i])
                    i += 1
                break
    if denied:
        return FlagDecision.DENIED
    if failed:
        return FlagDecision.ANALYSIS_FAILURE
    return FlagDecision.PERMITTED


def load_profiles(doc: Mapping[str, Any]) -> dict[str, SafeBinProfile]:
    profiles: dict[str, SafeBinProfile] = {}
    for entry in doc.get("profiles", []):
        profile = SafeBinProfile.from_dict(entry)
        if profile.binary in profiles:
            raise ConfigError(f"duplicate safe-bin profile for {profile.binary!r}")
        profiles[profile.binary] = profile
    return profiles


def default_profiles() -> dict[str, SafeBinProfile]:
    """Profiles shipped with the package (sort, grep, wc, head, tail, cat)."""
    text = resources.files("agentguard").joinpath("data/safe_bin_profiles.json").read_text("utf-8")
    return load_profiles(json.loads(text))
