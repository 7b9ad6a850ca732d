"""Exception types shared across the engine."""

from __future__ import annotations


class AgentGuardError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(AgentGuardError, ValueError):
    """A caller broke an operation's precondition (empty command, bad token...)."""


class PolicyViolationError(AgentGuardError):
    """A mutation was refused because it would weaken policy."""


class ConfigError(AgentGuardError):
    """A policy, config or store document failed to load or validate."""


class ManifestError(AgentGuardError):
    """A skill directory could not be hashed completely."""
