"""Container sandbox configuration checks, run before any runtime arguments are built."""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from agentguard.errors import ConfigError

__all__ = [
    "BLOCKED_HOST_PATHS",
    "SandboxConfig",
    "ValidationResult",
    "Violation",
    "ViolationKind",
    "effective_blocklist",
    "is_under",
    "normalize_path",
    "parse_bind",
    "validate_bind_mounts",
    "validate_sandbox_config",
]

# Minimum blocklist; operator policy can add to it but never remove from it.
BLOCKED_HOST_PATHS: tuple[str, ...] = (
    "/etc",
    "/proc",
    "/sys",
    "/dev",
    "/root",
    "/boot",
    "/var/run/docker.sock",
    "/run/docker.sock",
    "/private/etc",
    "/private/var/run/docker.sock",
)

_WINDOWS_DRIVE = re.compile(r"[A-Za-z]:[\\/]")


class ViolationKind(str, Enum):
    BLOCKED_PATH = "blocked_path"
    ANCESTOR_OF_BLOCKED_PATH = "ancestor_of_blocked_path"
    MALFORMED_BIND = "malformed_bind"
    RELATIVE_SOURCE = "relative_source"
    HOST_NETWORK = "host_network"
    UNCONFINED_SECCOMP = "unconfined_seccomp"
    UNCONFINED_APPARMOR = "unconfined_apparmor"


@dataclass(frozen=True)
class Violation:
    field: str
    kind: ViolationKind
    value: str
    reason: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __add__(self, other: ValidationResult) -> ValidationResult:
        return ValidationResult(self.violations + other.violations, self.warnings + other.warnings)


def normalize_path(path: str) -> str:
    """Collapse ``.``/``..`` segments and repeated separators (POSIX rules).

    Unlike :func:`posixpath.normpath`, a leading ``//`` is folded to ``/``.
    """
    norm = posixpath.normpath(path)
    if norm.startswith("//"):
        norm = "/" + norm.lstrip("/")
    return norm


def is_under(child: str, parent: str) -> bool:
    """True when ``child`` lies strictly below ``parent`` (both normalized, absolute)."""
    if parent == "/":
        return child != "/" and child.startswith("/")
    return child.startswith(parent + "/")


def effective_blocklist(extra: Iterable[str] = ()) -> tuple[str, ...]:
    """The floor blocklist plus operator additions, normalized and de-duplicated."""
    paths = list(BLOCKED_HOST_PATHS)
    for p in extra:
        if not isinstance(p, str) or not p.startswith("/"):
            raise ConfigError(f"blocklist entries must be absolute paths: {p!r}")
        paths.append(normalize_path(p))
    return tuple(dict.fromkeys(normalize_path(p) for p in paths))


def parse_bind(bind: object) -> tuple[str, str, str | None]:
    """Split ``source:target[:mode]``.

    Raises:
        ValueError: when the bind is not a string or lacks a source or target.
    """
    if not isinstance(bind, str):
        raise ValueError("bind must be a string")
    if _WINDOWS_DRIVE.match(bind):
        raise ValueError("Windows drive-letter binds are not supported")
    source, sep, rest = bind.partition(":")
    if not sep:
        raise ValueError("missing ':' separator")
    target, _, mode = rest.partition(":")
    if not source or not target:
        raise ValueError("empty source or target")
    return source, target, mode or None


def _check_source(src: str, blocked: tuple[str, ...], value: str) -> list[Violation]:
    out = []
    for p in blocked:
        if src == p or is_under(src, p):
            out.append(Violation("binds", ViolationKind.BLOCKED_PATH, value, f"blocked host path: {src}"))
            break
    for p in blocked:
        if is_under(p, src):
            out.append(Violation("binds", ViolationKind.ANCESTOR_OF_BLOCKED_PATH, value,
                                 f"ancestor of blocked path {p}: {src}"))
            break
    return out


def validate_bind_mounts(
    binds: Iterable[object],
    blocked: Iterable[str] = BLOCKED_HOST_PATHS,
    fs_probe: Callable[[str], str] | None = None,
) -> ValidationResult:
    """Reject bind sources that are, lie under, or contain a blocked host path.

    ``fs_probe`` resolves symlinks (``os.path.realpath`` in production).  When
    given, both the lexical and the resolved source are checked.
    """
    blocked = tuple(normalize_path(p) for p in blocked)
    violations: list[Violation] = []
    for bind in binds:
        shown = bind if isinstance(bind, str) else repr(bind)
        try:
            source, _, _ = parse_bind(bind)
        except ValueError as exc:
            violations.append(Violation("binds", ViolationKind.MALFORMED_BIND, shown, str(exc)))
            continue
        if not source.startswith("/"):
            violations.append(Violation("binds", ViolationKind.RELATIVE_SOURCE, shown,
                                        f"bind source must be absolute: {source}"))
            continue
        src = normalize_path(source)
        found = _check_source(src, blocked, shown)
        if fs_probe is not None and not found:
            resolved = normalize_path(fs_probe(src))
            if resolved != src:
                found = _check_source(resolved, blocked, shown)
        violations.extend(found)
    return ValidationResult(tuple(violations))


@dataclass(frozen=True)
class SandboxConfig:
    """Sandbox settings as received.  Malformed binds are kept and reported by validation."""

    binds: tuple[object, ...] = ()
    network: str | None = None
    seccomp_profile: str | None = None
    apparmor_profile: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "binds", tuple(self.binds))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> SandboxConfig:
        fields = {"version", "binds", "network", "seccomp_profile", "apparmor_profile"}
        if not isinstance(doc, Mapping):
            raise ConfigError("sandbox config must be an object")
        unknown = set(doc) - fields
        if unknown:
            raise ConfigError(f"unknown sandbox config field(s): {sorted(unknown)}")
        if doc.get("version", 1) != 1:
            raise ConfigError(f"unsupported sandbox config version {doc.get('version')!r}")
        binds = doc.get("binds", [])
        if not isinstance(binds, list):
            raise ConfigError("'binds' must be a list")
        for key in ("network", "seccomp_profile", "apparmor_profile"):
            if doc.get(key) is not None and not isinstance(doc[key], str):
                raise ConfigError(f"{key!r} must be a string")
        return cls(tuple(binds), doc.get("network"), doc.get("seccomp_profile"),
                   doc.get("apparmor_profile"))


def validate_sandbox_config(
    cfg: SandboxConfig,
    blocked: Iterable[str] = BLOCKED_HOST_PATHS,
    fs_probe: Callable[[str], str] | None = None,
) -> ValidationResult:
    result = validate_bind_mounts(cfg.binds, blocked, fs_probe)
    network = cfg.network if cfg.network is not None else "none"
    extra: list[Violation] = []
    warnings: list[str] = []
    if network.lower() == "host":
        extra.append(Violation("network", ViolationKind.HOST_NETWORK, network,
                               "host network mode shares the host network namespace"))
    elif network not in ("none", ""):
        warnings.append(f"network {network!r} is a named network; isolation depends on its configuration")
    if (cfg.seccomp_profile or "").lower() == "unconfined":
        extra.append(Violation("seccomp_profile", ViolationKind.UNCONFINED_SECCOMP,
                               cfg.seccomp_profile or "", "seccomp disabled"))
    if (cfg.apparmor_profile or "").lower() == "unconfined":
        extra.append(Violation("apparmor_profile", ViolationKind.UNCONFINED_APPARMOR,
                               cfg.apparmor_profile or "", "AppArmor disabled"))
    return result + ValidationResult(tuple(extra), tuple(warnings))
