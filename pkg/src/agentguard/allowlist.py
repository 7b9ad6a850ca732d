"""Exec allowlist pipeline: analysis, approval lookup, verdict.

Nothing here executes a command.  A shell string (or a direct argv) goes
through three phases:

1. lexical/semantic evaluation of every simple command in the chain
   (wrapper unwrapping, shell ``-c`` re-analysis, safe-bin flag checks,
   allowlist matching);
2. lookup of commands that were not allowlisted in the approval store;
3. the chain verdict, which is the most severe per-command verdict.
"""

from __future__ import annotations

import json
import os
import posixpath
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Iterator, Mapping, Optional, Sequence

from agentguard.errors import ConfigError, PolicyViolationError, UsageError
from agentguard.safebin import FlagDecision, evaluate_safe_bin
from agentguard.shell import AnalysisFailure, SimpleCommand, analyze
from agentguard.wrappers import (
    MAX_UNWRAP_DEPTH,
    MULTIPLEXERS,
    Blocked,
    Unwrapped,
    is_multiplexer_identity,
    resolve_invocation,
)

if TYPE_CHECKING:
    from agentguard.policy import PolicyDocument

__all__ = [
    "AllowlistEntry",
    "ApprovalState",
    "ApprovalStore",
    "CommandVerdict",
    "ExecDecision",
    "ExecReason",
    "Origin",
    "PathResolver",
    "Scope",
    "SearchPathResolver",
    "TableResolver",
    "Verdict",
    "evaluate_argv",
    "evaluate_shell_allowlist",
    "pending_approvals",
    "record_approval",
]

STORE_FORMAT = "agentguard-approvals"
STORE_VERSION = 1

PathResolver = Callable[[str], Optional[str]]


class Scope(str, Enum):
    SESSION = "session"
    ALLOW_ALWAYS = "allow_always"


class Origin(str, Enum):
    OPERATOR = "operator"
    APPROVAL_FLOW = "approval_flow"


class Verdict(str, Enum):
    DENY = "deny"
    REQUIRE_APPROVAL = "require_approval"
    ALLOW = "allow"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Verdict.DENY: 0, Verdict.REQUIRE_APPROVAL: 1, Verdict.ALLOW: 2}


class ExecReason(str, Enum):
    ANALYSIS_FAILURE = "analysis_failure"
    NOT_ALLOWLISTED = "not_allowlisted"
    DENIED_FLAG = "denied_flag"
    BLOCKED_MULTIPLEXER = "blocked_multiplexer"
    EXPANSION_PRESENT = "expansion_present"
    APPROVED = "approved"
    ALLOWLISTED = "allowlisted"


_ALLOW_REASONS = frozenset({ExecReason.APPROVED, ExecReason.ALLOWLISTED})


def _normalized_absolute(path: str) -> bool:
    return path.startswith("/") and "//" not in path and posixpath.normpath(path) == path


@dataclass(frozen=True)
class AllowlistEntry:
    """A basename (``sort``) or an absolute path (``/usr/bin/sort``)."""

    pattern: str
    scope: Scope = Scope.ALLOW_ALWAYS
    safe_bin_profile: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scope", Scope(self.scope))
        if not isinstance(self.pattern, str) or not self.pattern:
            raise ValueError("allowlist pattern must be a non-empty string")
        if "/" in self.pattern and not _normalized_absolute(self.pattern):
            raise ValueError(f"path patterns must be absolute and normalized: {self.pattern!r}")

    def matches(self, identity: str) -> bool:
        if self.pattern.startswith("/"):
            return identity == self.pattern
        return posixpath.basename(identity) == self.pattern


@dataclass(frozen=True)
class ApprovalState:
    scope: Scope
    created_at: int
    origin: Origin = Origin.APPROVAL_FLOW

    def __post_init__(self) -> None:
        object.__setattr__(self, "scope", Scope(self.scope))
        object.__setattr__(self, "origin", Origin(self.origin))
        if isinstance(self.created_at, bool) or not isinstance(self.created_at, int):
            raise ValueError("created_at must be integer seconds since the epoch")


def _check_identity(identity: str) -> None:
    if not isinstance(identity, str) or not _normalized_absolute(identity):
        raise UsageError(f"approval identity must be a resolved absolute path: {identity!r}")
    if is_multiplexer_identity(identity):
        raise PolicyViolationError(f"refusing to approve multiplexer binary {identity!r}")


class ApprovalStore:
    """Map from resolved executable path to approval state.

    Writers must be serialized by the caller; readers take :meth:`snapshot`.
    """

    def __init__(self, entries: Mapping[str, ApprovalState] | None = None) -> None:
        self._entries: dict[str, ApprovalState] = {}
        self._lock = threading.Lock()
        for identity, state in (entries or {}).items():
            _check_identity(identity)
            self._entries[identity] = state

    def record(
        self,
        identity: str,
        scope: Scope | str,
        now: int | None = None,
        origin: Origin | str = Origin.APPROVAL_FLOW,
    ) -> ApprovalState:
        _check_identity(identity)
        created = int(time.time()) if now is None else int(now)
        state = ApprovalState(Scope(scope), created, Origin(origin))
        with self._lock:
            self._entries[identity] = state
        return state

    def get(self, identity: str) -> ApprovalState | None:
        with self._lock:
            return self._entries.get(identity)

    def snapshot(self) -> dict[str, ApprovalState]:
        with self._lock:
            return dict(self._entries)

    def clear_session(self) -> None:
        """Forget session-scoped approvals, keeping allow-always ones."""
        with self._lock:
            self._entries = {k: v for k, v in self._entries.items() if v.scope is not Scope.SESSION}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, identity: object) -> bool:
        return identity in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.snapshot()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ApprovalStore):
            return NotImplemented
        return self.snapshot() == other.snapshot()

    def dumps(self) -> str:
        header = {"format": STORE_FORMAT, "version": STORE_VERSION}
        lines = [json.dumps(header, sort_keys=True)]
        for identity, state in sorted(self.snapshot().items()):
            record = {
                "identity": identity,
                "scope": state.scope.value,
                "created_at": state.created_at,
                "origin": state.origin.value,
            }
            lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> ApprovalStore:
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines:
            raise ConfigError("approval store is missing its header line")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"approval store header: {exc}") from exc
        if header != {"format": STORE_FORMAT, "version": STORE_VERSION}:
            raise ConfigError(f"unsupported approval store header: {header!r}")
        entries: dict[str, ApprovalState] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                rec = json.loads(line)
                if set(rec) != {"identity", "scope", "created_at", "origin"}:
                    raise ValueError(f"unexpected fields {sorted(rec)}")
                identity = rec["identity"]
                _check_identity(identity)
                if identity in entries:
                    raise ValueError(f"duplicate identity {identity!r}")
                entries[identity] = ApprovalState(rec["scope"], rec["created_at"], rec["origin"])
            except (ValueError, TypeError, AttributeError, UsageError, PolicyViolationError) as exc:
                raise ConfigError(f"approval store line {lineno}: {exc}") from exc
        return cls(entries)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> ApprovalStore:
        p = Path(path)
        if not p.exists():
            return cls()
        return cls.loads(p.read_text("utf-8"))

    def save(self, path: str | os.PathLike[str]) -> None:
        p = Path(path)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(self.dumps(), "utf-8")
        os.replace(tmp, p)


def record_approval(
    store: ApprovalStore,
    identity: str,
    scope: Scope | str,
    now: int | None = None,
    origin: Origin | str = Origin.APPROVAL_FLOW,
) -> ApprovalStore:
    """Persist an approval for a resolved executable path.

    Raises:
        PolicyViolationError: for busybox/toybox identities.
        UsageError: if ``identity`` is not a normalized absolute path.
    """
    store.record(identity, scope, now, origin)
    return store


def _resolve_path_word(name: str) -> str | None:
    if name.startswith("/"):
        return posixpath.normpath(name).replace("//", "/")
    return None  # ./tool and dir/tool depend on the working directory


class TableResolver:
    """Resolve executable names from a fixed name-to-path table."""

    def __init__(self, table: Mapping[str, str]) -> None:
        self.table = dict(table)

    def __call__(self, name: str) -> str | None:
        if "/" in name:
            return _resolve_path_word(name)
        return self.table.get(name)


class SearchPathResolver:
    """Resolve names against an explicit directory list, never the ambient ``PATH``."""

    def __init__(
        self,
        search_path: Sequence[str],
        is_executable: Callable[[str], bool] | None = None,
    ) -> None:
        self.search_path = tuple(search_path)
        self.is_executable = is_executable or (lambda p: os.path.isfile(p) and os.access(p, os.X_OK))

    def __call__(self, name: str) -> str | None:
        if "/" in name:
            return _resolve_path_word(name)
        if not name or name in (".", ".."):
            return None
        for directory in self.search_path:
            if not directory.startswith("/"):
                continue
            candidate = posixpath.normpath(posixpath.join(directory, name))
            if self.is_executable(candidate):
                return candidate
        return None


@dataclass(frozen=True)
class CommandVerdict:
    argv: tuple[str, ...]
    verdict: Verdict
    reason: ExecReason
    identity: str | None = None
    detail: str = ""


@dataclass(frozen=True)
class ExecDecision:
    verdict: Verdict
    reason: ExecReason
    detail: str = ""
    commands: tuple[CommandVerdict, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict is Verdict.ALLOW and self.reason not in _ALLOW_REASONS:
            raise ValueError(f"allow verdict with non-allow reason {self.reason}")
        if self.verdict is not Verdict.ALLOW and self.reason in _ALLOW_REASONS:
            raise ValueError(f"{self.verdict} verdict with allow reason {self.reason}")

    @property
    def taxonomy(self) -> tuple[str, str]:
        from agentguard.taxonomy import label_decision

        return label_decision(self.reason)


def _shell_payload(cmd: SimpleCommand) -> tuple[str, int | None, str]:
    """Locate the ``-c`` payload of a shell invocation.

    Returns ``("payload", index, "")``, ``("none", None, "")`` when there is
    no ``-c``, or ``("bad", None, why)`` for option forms we do not model.
    """
    argv = cmd.argv
    i = 1
    has_c = False
    while i < len(argv) and argv[i].startswith(("-", "+")) and argv[i] not in ("-", "--"):
        tok = argv[i]
        if i in cmd.expansions:
            return "bad", None, "runtime expansion in shell options"
        if tok.startswith("+") or tok.startswith("--"):
            return "bad", None, f"unsupported shell option {tok!r}"
        for ch in tok[1:]:
            if ch == "c":
                has_c = True
            elif ch not in "euxv":
                return "bad", None, f"unsupported shell option -{ch}"
        i += 1
    if i < len(argv) and argv[i] == "--":
        i += 1
    if not has_c:
        return "none", None, ""
    if i >= len(argv):
        return "bad", None, "-c without a command string"
    return "payload", i, ""


class _Evaluator:
    def __init__(
        self,
        policy: PolicyDocument,
        store: ApprovalStore,
        resolver: PathResolver,
        reanalyze: bool,
        argv_mode: bool = False,
    ) -> None:
        self.policy = policy
        self.store = store
        self.resolver = resolver
        self.reanalyze = reanalyze
        # no lexical analysis happens in argv mode, so its failures read as "not covered"
        self.uncertain = ExecReason.NOT_ALLOWLISTED if argv_mode else ExecReason.ANALYSIS_FAILURE

    def chain(self, commands: Iterable[SimpleCommand], depth: int) -> list[CommandVerdict]:
        out: list[CommandVerdict] = []
        for cmd in commands:
            out.extend(self.command(cmd, depth))
        return out

    def command(self, cmd: SimpleCommand, depth: int) -> list[CommandVerdict]:
        def verdict(v: Verdict, r: ExecReason, detail: str = "", identity: str | None = None,
                    argv: tuple[str, ...] = cmd.argv) -> list[CommandVerdict]:
            return [CommandVerdict(argv, v, r, identity, detail)]

        if 0 in cmd.expansions:
            return verdict(Verdict.REQUIRE_APPROVAL, ExecReason.EXPANSION_PRESENT,
                           "command name depends on runtime expansion")
        resolution = resolve_invocation(cmd, self.policy.shell_applets, MAX_UNWRAP_DEPTH)
        if isinstance(resolution, Blocked):
            return verdict(Verdict.DENY, ExecReason.BLOCKED_MULTIPLEXER, resolution.reason)
        inner, via_multiplexer = cmd, False
        if isinstance(resolution, Unwrapped):
            inner = resolution.inner
            via_multiplexer = any(w in MULTIPLEXERS for w in resolution.wrapper_chain)

        dangerous = [k for k, _ in inner.env_assignments if k in self.policy.dangerous_env_vars]
        if dangerous:
            return verdict(Verdict.REQUIRE_APPROVAL, self.uncertain,
                           f"wrapper assigns {', '.join(dangerous)}", argv=inner.argv)
        if 0 in inner.expansions:
            return verdict(Verdict.REQUIRE_APPROVAL, ExecReason.EXPANSION_PRESENT,
                           "wrapped command name depends on runtime expansion", argv=inner.argv)

        if inner.basename in self.policy.shell_interpreters:
            shell_result = self.shell(inner, depth, via_multiplexer)
            if shell_result is not None:
                return shell_result

        return self.executable(inner)

    def shell(self, inner: SimpleCommand, depth: int, via_multiplexer: bool) -> list[CommandVerdict] | None:
        kind, index, why = _shell_payload(inner)

        def fail(v: Verdict, r: ExecReason, detail: str) -> list[CommandVerdict]:
            return [CommandVerdict(inner.argv, v, r, None, detail)]

        if via_multiplexer and not self.reanalyze:
            return fail(Verdict.DENY, ExecReason.BLOCKED_MULTIPLEXER,
                        "multiplexer shell applet and payload re-analysis is disabled")
        if self.reanalyze and kind == "payload":
            assert index is not None
            if depth + 1 > MAX_UNWRAP_DEPTH:
                if via_multiplexer:
                    return fail(Verdict.DENY, ExecReason.BLOCKED_MULTIPLEXER, "shell nesting too deep")
                return fail(Verdict.REQUIRE_APPROVAL, ExecReason.ANALYSIS_FAILURE, "shell nesting too deep")
            if index in inner.expansions:
                return fail(Verdict.REQUIRE_APPROVAL, ExecReason.EXPANSION_PRESENT,
                            "shell payload depends on runtime expansion")
            payload = inner.argv[index]
            try:
                analysis = analyze(payload, self.policy.analysis_policy)
            except UsageError:
                return fail(Verdict.REQUIRE_APPROVAL, ExecReason.ANALYSIS_FAILURE, "empty shell payload")
            if isinstance(analysis, AnalysisFailure):
                return fail(Verdict.REQUIRE_APPROVAL, ExecReason.ANALYSIS_FAILURE,
                            f"shell payload: {analysis.reason.value}: {analysis.detail}")
            return self.chain(analysis.commands, depth + 1)
        if self.reanalyze and kind == "bad":
            return fail(Verdict.REQUIRE_APPROVAL, ExecReason.ANALYSIS_FAILURE, why)
        if via_multiplexer:
            return fail(Verdict.DENY, ExecReason.BLOCKED_MULTIPLEXER,
                        "multiplexer shell applet without an analyzable -c payload")
        return None

    def executable(self, cmd: SimpleCommand) -> list[CommandVerdict]:
        identity = self.resolver(cmd.argv[0])
        if identity is None:
            return [CommandVerdict(cmd.argv, Verdict.REQUIRE_APPROVAL, ExecReason.NOT_ALLOWLISTED,
                                   None, f"cannot resolve {cmd.argv[0]!r}")]

        def out(v: Verdict, r: ExecReason, detail: str = "") -> list[CommandVerdict]:
            return [CommandVerdict(cmd.argv, v, r, identity, detail)]

        matched = [e for e in self.policy.allowlist if e.matches(identity)]
        if not matched:
            state = self.store.get(identity)
            if state is not None:
                return out(Verdict.ALLOW, ExecReason.APPROVED, f"{state.scope.value} approval")
            return out(Verdict.REQUIRE_APPROVAL, ExecReason.NOT_ALLOWLISTED, identity)

        profiled = [e for e in matched if e.safe_bin_profile]
        if not profiled:
            return out(Verdict.ALLOW, ExecReason.ALLOWLISTED, matched[0].pattern)
        resolved_cmd = SimpleCommand((identity,) + cmd.argv[1:], cmd.env_assignments,
                                     cmd.redirections, cmd.expansions)
        decisions = []
        for entry in profiled:
            profile = self.policy.safe_bin_profiles[entry.safe_bin_profile]
            if profile.binary != resolved_cmd.basename:
                decisions.append(FlagDecision.ANALYSIS_FAILURE)
            else:
                decisions.append(evaluate_safe_bin(resolved_cmd, profile))
        if FlagDecision.DENIED in decisions:
            return out(Verdict.DENY, ExecReason.DENIED_FLAG, "safe-bin profile denies a flag")
        if cmd.expansions:
            return out(Verdict.REQUIRE_APPROVAL, ExecReason.EXPANSION_PRESENT,
                       "arguments of a safe-bin command depend on runtime expansion")
        if FlagDecision.ANALYSIS_FAILURE in decisions:
            return out(Verdict.REQUIRE_APPROVAL, self.uncertain,
                       "unknown, ambiguous or unexpected argument for safe-bin profile")
        return out(Verdict.ALLOW, ExecReason.ALLOWLISTED, f"{profiled[0].pattern} (safe-bin)")


def _combine(verdicts: list[CommandVerdict]) -> ExecDecision:
    worst = min(verdicts, key=lambda v: v.verdict.rank)
    detail = f"{' '.join(worst.argv)}: {worst.detail}" if worst.detail else " ".join(worst.argv)
    return ExecDecision(worst.verdict, worst.reason, detail, tuple(verdicts))


def evaluate_shell_allowlist(
    text: str,
    policy: PolicyDocument,
    store: ApprovalStore,
    path_resolver: PathResolver,
) -> ExecDecision:
    """Decide whether a shell command string may run.

    Raises:
        UsageError: if ``text`` is empty.
    """
    analysis = analyze(text, policy.analysis_policy)
    if isinstance(analysis, AnalysisFailure):
        return ExecDecision(
            Verdict.REQUIRE_APPROVAL,
            ExecReason.ANALYSIS_FAILURE,
            f"{analysis.reason.value} at byte {analysis.location}: {analysis.detail}",
        )
    evaluator = _Evaluator(policy, store, path_resolver, policy.shell_reanalysis)
    return _combine(evaluator.chain(analysis.commands, 0))


def evaluate_argv(
    argv: Sequence[str],
    policy: PolicyDocument,
    store: ApprovalStore,
    path_resolver: PathResolver,
) -> ExecDecision:
    """Decide a direct-argv invocation; no shell parsing is involved.

    Shell ``-c`` payloads are not re-analyzed in this mode: a shell is judged
    as an ordinary executable.  The reason is never ``analysis_failure``;
    arguments a safe-bin profile cannot classify yield ``not_allowlisted``.
    """
    if not argv or not all(isinstance(a, str) for a in argv) or not argv[0]:
        raise UsageError("argv must be a non-empty list of strings")
    evaluator = _Evaluator(policy, store, path_resolver, reanalyze=False, argv_mode=True)
    return _combine(evaluator.command(SimpleCommand(tuple(argv)), 0))


def pending_approvals(decision: ExecDecision) -> list[str]:
    """Identities an approval flow may persist for ``decision``.

    Only commands that failed for lack of an allowlist entry qualify;
    blocked multiplexer invocations never yield an identity.
    """
    found = []
    for cv in decision.commands:
        if cv.reason is ExecReason.NOT_ALLOWLISTED and cv.identity and not is_multiplexer_identity(cv.identity):
            if cv.identity not in found:
                found.append(cv.identity)
    return found
