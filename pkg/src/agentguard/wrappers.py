"""Recover the effective executable behind dispatch wrappers and multiplexers.

``env``, ``nice`` and ``nohup`` run their remaining arguments as a command;
``busybox`` and ``toybox`` pick a built-in applet from their first argument.
Keying policy on the outer basename would approve the wrapper instead of
the program that actually runs, so both kinds are peeled off here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from agentguard.shell import SimpleCommand

__all__ = [
    "Blocked",
    "DEFAULT_SHELL_APPLETS",
    "KNOWN_WRAPPERS",
    "MAX_UNWRAP_DEPTH",
    "MULTIPLEXERS",
    "NotWrapper",
    "Unwrapped",
    "WrapperResolution",
    "is_multiplexer_identity",
    "resolve_invocation",
    "unwrap_known_wrappers",
    "unwrap_shell_multiplexer",
]

KNOWN_WRAPPERS = frozenset({"env", "nice", "nohup"})
MULTIPLEXERS = frozenset({"busybox", "toybox"})
DEFAULT_SHELL_APPLETS = frozenset({"sh", "ash", "bash", "hush"})
MAX_UNWRAP_DEPTH = 8

BLOCKED_NO_COMMAND = "wrapper with no command"
BLOCKED_NO_APPLET = "multiplexer with no applet"
BLOCKED_NON_SHELL_APPLET = "non-shell applet: fail closed, no allowlist entry is persisted"

_ENV_PAIR = re.compile(r"[A-Za-z_][A-Za-z0-9_]*=")
_NICE_VALUE = re.compile(r"[+-]?\d+\Z")


@dataclass(frozen=True)
class NotWrapper:
    pass


@dataclass(frozen=True)
class Blocked:
    reason: str


@dataclass(frozen=True)
class Unwrapped:
    inner: SimpleCommand
    wrapper_chain: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "wrapper_chain", tuple(self.wrapper_chain))
        if not self.wrapper_chain:
            raise ValueError("wrapper_chain must be non-empty")


WrapperResolution = Union[NotWrapper, Blocked, Unwrapped]


def _basename(word: str) -> str:
    return word.rstrip("/").rsplit("/", 1)[-1]


def is_multiplexer_identity(identity: str) -> bool:
    """True when ``identity`` (a name or path) designates busybox or toybox."""
    return _basename(identity) in MULTIPLEXERS


def _consume_wrapper(name: str, cmd: SimpleCommand, env: list[tuple[str, str]]) -> int | str:
    """Return the argv index where the wrapped command starts, or a block reason."""
    argv = cmd.argv
    i = 1
    if name == "env":
        while i < len(argv):
            tok = argv[i]
            if tok == "--":
                i += 1
                break
            if tok in ("-i", "-", "--ignore-environment"):
                i += 1
            elif tok == "-u":
                if i + 1 >= len(argv):
                    return "env -u without a variable name"
                i += 2
            elif _ENV_PAIR.match(tok):
                key, _, value = tok.partition("=")
                env.append((key, value))
                i += 1
            elif tok.startswith("-"):
                return f"unrecognized env option {tok!r}"
            else:
                break
        # NAME=VALUE pairs may also follow "--"
        while i < len(argv) and _ENV_PAIR.match(argv[i]):
            key, _, value = argv[i].partition("=")
            env.append((key, value))
            i += 1
    elif name == "nice":
        while i < len(argv):
            tok = argv[i]
            if tok == "--":
                i += 1
                break
            if tok == "-n":
                if i + 1 >= len(argv) or not _NICE_VALUE.match(argv[i + 1]):
                    return "nice -n without a numeric adjustment"
                i += 2
            elif tok.startswith("-"):
                return f"unrecognized nice option {tok!r}"
            else:
                break
    elif name == "nohup":
        if i < len(argv) and argv[i] == "--":
            i += 1
        elif i < len(argv) and argv[i].startswith("-"):
            return f"unrecognized nohup option {argv[i]!r}"
    return i


def unwrap_known_wrappers(cmd: SimpleCommand) -> WrapperResolution:
    """Peel ``env``/``nice``/``nohup`` layers off ``cmd``.

    ``env NAME=VALUE`` pairs are carried into the inner command's
    ``env_assignments`` so callers can apply the dangerous-variable check to
    them.  Wrapper arguments that contain runtime expansion block, since
    their value cannot be known.
    """
    name = _basename(cmd.argv[0])
    if name not in KNOWN_WRAPPERS:
        return NotWrapper()

    chain: list[str] = []
    env = list(cmd.env_assignments)
    current = cmd
    while True:
        chain.append(name)
        start = _consume_wrapper(name, current, env)
        if isinstance(start, str):
            return Blocked(start)
        if any(0 < i < start for i in current.expansions):
            return Blocked("runtime expansion in wrapper arguments")
        if start >= len(current.argv):
            return Blocked(BLOCKED_NO_COMMAND)
        current = current.tail(start)
        if 0 in current.expansions:
            break
        name = _basename(current.argv[0])
        if name not in KNOWN_WRAPPERS:
            break
    inner = SimpleCommand(
        argv=current.argv,
        env_assignments=tuple(env),
        redirections=current.redirections,
        expansions=current.expansions,
    )
    return Unwrapped(inner, tuple(chain))


def unwrap_shell_multiplexer(
    cmd: SimpleCommand, shell_applets: frozenset[str] | set[str] = DEFAULT_SHELL_APPLETS
) -> WrapperResolution:
    """Resolve ``busybox``/``toybox`` dispatch.

    Only shell applets unwrap; the caller must re-analyze the shell's ``-c``
    payload.  Every other applet blocks, so no approval can ever be keyed on
    the multiplexer binary itself.
    """
    name = _basename(cmd.argv[0])
    if name not in MULTIPLEXERS:
        return NotWrapper()
    if len(cmd.argv) < 2:
        return Blocked(BLOCKED_NO_APPLET)
    if 1 in cmd.expansions:
        return Blocked("runtime expansion in multiplexer applet name")
    if cmd.argv[1] in shell_applets:
        return Unwrapped(cmd.tail(1), (name,))
    return Blocked(BLOCKED_NON_SHELL_APPLET)


def resolve_invocation(
    cmd: SimpleCommand,
    shell_applets: frozenset[str] | set[str] = DEFAULT_SHELL_APPLETS,
    max_depth: int = MAX_UNWRAP_DEPTH,
) -> WrapperResolution:
    """Alternate both unwrapping steps until neither applies.

    ``nice busybox sh -c x`` resolves to ``sh -c x`` with chain
    ``("nice", "busybox")``.  More than ``max_depth`` layers block.
    """
    chain: list[str] = []
    current = cmd
    for _ in range(max_depth + 1):
        if 0 in current.expansions:
            break
        step = unwrap_known_wrappers(current)
        if isinstance(step, NotWrapper):
            step = unwrap_shell_multiplexer(current, shell_applets)
        if isinstance(step, Blocked):
            return step
        if isinstance(step, NotWrapper):
            break
        chain.extend(step.wrapper_chain)
        if len(chain) > max_depth:
            return Blocked(f"more than {max_depth} nested wrappers")
        current = step.inner
    else:
        return Blocked(f"more than {max_depth} nested wrappers")
    if not chain:
        return NotWrapper()
    return Unwrapped(current, tuple(chain))
