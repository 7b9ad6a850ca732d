"""Operator policy document: one JSON file feeding every engine check.

Schema (version 1)::

    {
      "version": 1,
      "allowlist": [{"pattern": "sort", "scope": "allow_always", "safe_bin_profile": "sort"}],
      "safe_bin_profiles": [{"binary": "sort", ...}],
      "sandbox_blocklist_extra": ["/srv/secrets"],
      "gateway": {"port": 18789, "remote": {"url": "wss://gw.example.net"}},
      "dangerous_env_vars": ["LD_PRELOAD", ...],
      "entropy_threshold": 7.9,
      "exec": {"search_path": ["/usr/bin", "/bin"], "shell_reanalysis": true,
               "shell_applets": ["sh", "ash", "bash", "hush"]}
    }

Every key except ``version`` is optional.  Profiles listed here replace the
shipped profile for the same binary; the others stay available.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from agentguard.allowlist import AllowlistEntry
from agentguard.errors import ConfigError
from agentguard.safebin import SafeBinProfile, default_profiles
from agentguard.sandbox import effective_blocklist, normalize_path
from agentguard.shell import DEFAULT_DANGEROUS_ENV_VARS, AnalysisPolicy
from agentguard.skills import DEFAULT_ENTROPY_THRESHOLD
from agentguard.gateway import GatewayEndpointPolicy
from agentguard.wrappers import DEFAULT_SHELL_APPLETS

__all__ = ["POLICY_VERSION", "PolicyDocument", "SHELL_INTERPRETERS"]

POLICY_VERSION = 1
# Interpreters whose -c payload is re-analyzed.
SHELL_INTERPRETERS = frozenset({"sh", "ash", "bash", "dash", "hush", "ksh", "mksh", "zsh"})

_TOP_KEYS = {"version", "allowlist", "safe_bin_profiles", "sandbox_blocklist_extra", "gateway",
             "dangerous_env_vars", "entropy_threshold", "exec"}
_EXEC_KEYS = {"search_path", "shell_reanalysis", "shell_applets"}


def _string_list(value: Any, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) and v for v in value):
        raise ConfigError(f"{name!r} must be a list of non-empty strings")
    return value


def _reject_unknown(doc: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class PolicyDocument:
    allowlist: tuple[AllowlistEntry, ...] = ()
    safe_bin_profiles: Mapping[str, SafeBinProfile] = field(default_factory=default_profiles)
    sandbox_blocklist_extra: tuple[str, ...] = ()
    gateway: GatewayEndpointPolicy = field(default_factory=GatewayEndpointPolicy)
    dangerous_env_vars: frozenset[str] = DEFAULT_DANGEROUS_ENV_VARS
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD
    search_path: tuple[str, ...] = ()
    shell_reanalysis: bool = True
    shell_applets: frozenset[str] = DEFAULT_SHELL_APPLETS

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowlist", tuple(self.allowlist))
        object.__setattr__(self, "safe_bin_profiles", dict(self.safe_bin_profiles))
        object.__setattr__(self, "sandbox_blocklist_extra", tuple(self.sandbox_blocklist_extra))
        object.__setattr__(self, "dangerous_env_vars", frozenset(self.dangerous_env_vars))
        object.__setattr__(self, "search_path", tuple(self.search_path))
        object.__setattr__(self, "shell_applets", frozenset(self.shell_applets))
        for entry in self.allowlist:
            if entry.safe_bin_profile and entry.safe_bin_profile not in self.safe_bin_profiles:
                raise ConfigError(f"allowlist entry {entry.pattern!r} references unknown "
                                  f"safe-bin profile {entry.safe_bin_profile!r}")
        for path in self.sandbox_blocklist_extra:
            if not path.startswith("/"):
                raise ConfigError(f"sandbox blocklist paths must be absolute: {path!r}")
        for directory in self.search_path:
            if not directory.startswith("/"):
                raise ConfigError(f"search_path entries must be absolute: {directory!r}")
        if not 0.0 <= self.entropy_threshold <= 8.0:
            raise ConfigError("entropy_threshold must lie in [0, 8]")

    @property
    def analysis_policy(self) -> AnalysisPolicy:
        return AnalysisPolicy(self.dangerous_env_vars)

    @property
    def shell_interpreters(self) -> frozenset[str]:
        return SHELL_INTERPRETERS | self.shell_applets

    @property
    def sandbox_blocklist(self) -> tuple[str, ...]:
        return effective_blocklist(self.sandbox_blocklist_extra)

    @classmethod
    def from_dict(cls, doc: Any) -> PolicyDocument:
        if not isinstance(doc, Mapping):
            raise ConfigError("policy document must be a JSON object")
        _reject_unknown(doc, _TOP_KEYS, "policy")
        if doc.get("version") != POLICY_VERSION:
            raise ConfigError(f"unsupported policy version {doc.get('version')!r}")
        kwargs: dict[str, Any] = {}

        entries = doc.get("allowlist", [])
        if not isinstance(entries, list):
            raise ConfigError("'allowlist' must be a list")
        parsed = []
        for raw in entries:
            if not isinstance(raw, Mapping):
                raise ConfigError("allowlist entries must be objects")
            _reject_unknown(raw, {"pattern", "scope", "safe_bin_profile"}, "allowlist entry")
            try:
                parsed.append(AllowlistEntry(**raw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"allowlist entry {raw!r}: {exc}") from exc
        kwargs["allowlist"] = tuple(parsed)

        profiles = default_profiles()
        raw_profiles = doc.get("safe_bin_profiles", [])
        if not isinstance(raw_profiles, list):
            raise ConfigError("'safe_bin_profiles' must be a list")
        seen = set()
        for raw in raw_profiles:
            if not isinstance(raw, Mapping):
                raise ConfigError("safe-bin profiles must be objects")
            profile = SafeBinProfile.from_dict(raw)
            if profile.binary in seen:
                raise ConfigError(f"duplicate safe-bin profile for {profile.binary!r}")
            seen.add(profile.binary)
            profiles[profile.binary] = profile
        kwargs["safe_bin_profiles"] = profiles

        if "sandbox_blocklist_extra" in doc:
            extra = _string_list(doc["sandbox_blocklist_extra"], "sandbox_blocklist_extra")
            kwargs["sandbox_blocklist_extra"] = tuple(normalize_path(p) if p.startswith("/") else p
                                                      for p in extra)
        if "gateway" in doc:
            kwargs["gateway"] = _gateway(doc["gateway"])
        if "dangerous_env_vars" in doc:
            kwargs["dangerous_env_vars"] = frozenset(_string_list(doc["dangerous_env_vars"],
                                                                  "dangerous_env_vars"))
        if "entropy_threshold" in doc:
            value = doc["entropy_threshold"]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("'entropy_threshold' must be a number")
            kwargs["entropy_threshold"] = float(value)
        if "exec" in doc:
            kwargs.update(_exec_section(doc["exec"]))
        return cls(**kwargs)

    @classmethod
    def loads(cls, text: str) -> PolicyDocument:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"policy is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> PolicyDocument:
        try:
            text = Path(path).read_text("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read policy {os.fspath(path)!r}: {exc}") from exc
        return cls.loads(text)


def _gateway(raw: Any) -> GatewayEndpointPolicy:
    if not isinstance(raw, Mapping):
        raise ConfigError("'gateway' must be an object")
    _reject_unknown(raw, {"port", "remote"}, "gateway")
    remote_url = None
    if raw.get("remote") is not None:
        remote = raw["remote"]
        if not isinstance(remote, Mapping):
            raise ConfigError("'gateway.remote' must be an object")
        _reject_unknown(remote, {"url"}, "gateway.remote")
        remote_url = remote.get("url")
        if remote_url is not None and not isinstance(remote_url, str):
            raise ConfigError("'gateway.remote.url' must be a string")
    try:
        if "port" in raw:
            return GatewayEndpointPolicy(raw["port"], remote_url)
        return GatewayEndpointPolicy(remote_url=remote_url)
    except ValueError as exc:
        raise ConfigError(f"gateway: {exc}") from exc


def _exec_section(raw: Any) -> dict[str, Any]:
    if not isinstance(raw, Mapping):
        raise ConfigError("'exec' must be an object")
    _reject_unknown(raw, _EXEC_KEYS, "exec")
    out: dict[str, Any] = {}
    if "search_path" in raw:
        out["search_path"] = tuple(_string_list(raw["search_path"], "exec.search_path"))
    if "shell_reanalysis" in raw:
        if not isinstance(raw["shell_reanalysis"], bool):
            raise ConfigError("'exec.shell_reanalysis' must be a boolean")
        out["shell_reanalysis"] = raw["shell_reanalysis"]
    if "shell_applets" in raw:
        out["shell_applets"] = frozenset(_string_list(raw["shell_applets"], "exec.shell_applets"))
    return out
