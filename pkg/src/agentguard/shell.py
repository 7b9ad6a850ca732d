"""Fail-closed lexical analysis of shell command strings.

The analyzer models a conservative subset of POSIX ``sh``: single and double
quoting, backslash escapes, simple-command chains joined by ``;``, ``&&``,
``||``, ``|``, ``&`` and newlines, leading ``NAME=value`` assignments and
simple redirections.  Anything whose runtime meaning cannot be read off the
text (command or process substitution, line continuations, here-docs,
arithmetic or brace expansion, subshells, reserved words) produces an
:class:`AnalysisFailure` instead of a :class:`Chain`.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from agentguard.errors import UsageError

__all__ = [
    "AnalysisFailure",
    "AnalysisPolicy",
    "Chain",
    "CommandAnalysis",
    "DEFAULT_DANGEROUS_ENV_VARS",
    "DOUBLE_QUOTE_ESCAPES",
    "FailureReason",
    "SimpleCommand",
    "analyze",
    "has_shell_line_continuation",
]

# LF and CR are deliberately absent: inside double quotes a backslash-newline
# is a line continuation, not an escape.
DOUBLE_QUOTE_ESCAPES = frozenset({"\\", '"', "$", "`"})

DEFAULT_DANGEROUS_ENV_VARS = frozenset(
    {"LD_PRELOAD", "LD_LIBRARY_PATH", "DYLD_INSERT_LIBRARIES", "PATH", "IFS"}
)

CONNECTORS = (";", "&&", "||", "|", "&", "\n")

_RESERVED_WORDS = frozenset(
    {
        "!", "{", "}", "[[", "]]", "case", "coproc", "do", "done", "elif",
        "else", "esac", "fi", "for", "function", "if", "in", "select", "then",
        "time", "until", "while",
    }
)
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NAME_START = re.compile(r"[A-Za-z_]")
_NAME_CHAR = re.compile(r"[A-Za-z0-9_]")
_SPECIAL_PARAMS = frozenset("0123456789@*#?$!-")
_REDIRECT_OPS = (">>", ">|", ">&", "<&", "<>", ">", "<")
_WHITESPACE = " \t\n\r\v\f"


class FailureReason(str, Enum):
    LINE_CONTINUATION = "line_continuation"
    COMMAND_SUBSTITUTION = "command_substitution"
    PROCESS_SUBSTITUTION = "process_substitution"
    UNBALANCED_QUOTE = "unbalanced_quote"
    DANGEROUS_ENV_ASSIGNMENT = "dangerous_env_assignment"
    UNSUPPORTED_CONSTRUCT = "unsupported_construct"


@dataclass(frozen=True)
class SimpleCommand:
    """One command of a chain, after quote removal.

    ``expansions`` holds the argv indices of words whose final value is only
    known at runtime (parameter expansion, unquoted globs, tilde prefixes).
    Such words are kept verbatim.
    """

    argv: tuple[str, ...]
    env_assignments: tuple[tuple[str, str], ...] = ()
    redirections: tuple[tuple[str, str], ...] = ()
    expansions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "argv", tuple(self.argv))
        object.__setattr__(self, "env_assignments", tuple(tuple(p) for p in self.env_assignments))
        object.__setattr__(self, "redirections", tuple(tuple(p) for p in self.redirections))
        object.__setattr__(self, "expansions", frozenset(self.expansions))
        if not self.argv:
            raise ValueError("SimpleCommand.argv must be non-empty")
        if any(i < 0 or i >= len(self.argv) for i in self.expansions):
            raise ValueError("expansion index out of range")

    @property
    def basename(self) -> str:
        return posixpath.basename(self.argv[0])

    @property
    def has_expansion(self) -> bool:
        return bool(self.expansions)

    def tail(self, start: int) -> SimpleCommand:
        """Return the command formed by ``argv[start:]``, keeping env and redirections."""
        return SimpleCommand(
            argv=self.argv[start:],
            env_assignments=self.env_assignments,
            redirections=self.redirections,
            expansions=frozenset(i - start for i in self.expansions if i >= start),
        )


@dataclass(frozen=True)
class Chain:
    commands: tuple[SimpleCommand, ...]
    connectors: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "commands", tuple(self.commands))
        object.__setattr__(self, "connectors", tuple(self.connectors))
        if not self.commands:
            raise ValueError("a chain holds at least one command")
        if len(self.connectors) != len(self.commands) - 1:
            raise ValueError("connectors must number one less than commands")
        bad = [c for c in self.connectors if c not in CONNECTORS]
        if bad:
            raise ValueError(f"unknown connector(s): {bad!r}")


@dataclass(frozen=True)
class AnalysisFailure:
    reason: FailureReason
    location: int
    detail: str = ""


CommandAnalysis = Union[Chain, AnalysisFailure]


@dataclass(frozen=True)
class AnalysisPolicy:
    dangerous_env_vars: frozenset[str] = DEFAULT_DANGEROUS_ENV_VARS

    def __post_init__(self) -> None:
        object.__setattr__(self, "dangerous_env_vars", frozenset(self.dangerous_env_vars))


def has_shell_line_continuation(text: str) -> bool:
    """True iff a backslash is immediately followed by LF or CR anywhere in ``text``.

    The scan ignores quoting on purpose: the exploitable case is a
    continuation inside double quotes.
    """
    return "\\\n" in text or "\\\r" in text


def analyze(text: str, policy: AnalysisPolicy | None = None) -> CommandAnalysis:
    """Split ``text`` into a chain of simple commands, or fail closed.

    Raises:
        UsageError: if ``text`` is empty or only whitespace.
    """
    if not isinstance(text, str):
        raise UsageError("command text must be a str")
    if not text.strip(_WHITESPACE):
        raise UsageError("empty command")
    policy = policy or AnalysisPolicy()

    if has_shell_line_continuation(text):
        idx = min(i for i in (text.find("\\\n"), text.find("\\\r")) if i >= 0)
        return AnalysisFailure(
            FailureReason.LINE_CONTINUATION,
            _byte_offset(text, idx),
            "backslash followed by a line terminator",
        )
    try:
        tokens = _Lexer(text).run()
        return _assemble(tokens, policy)
    except _Fail as exc:
        return AnalysisFailure(exc.reason, _byte_offset(text, exc.pos), exc.detail)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8", "surrogatepass"))


class _Fail(Exception):
    def __init__(self, reason: FailureReason, pos: int, detail: str) -> None:
        super().__init__(detail)
        self.reason = reason
        self.pos = pos
        self.detail = detail


class _Word:
    __slots__ = ("start", "chars", "quoted", "any_quote", "expansion", "tilde",
                 "brace_depth", "brace_list")

    def __init__(self, start: int) -> None:
        self.start = start
        self.chars: list[str] = []
        self.quoted: list[bool] = []
        self.any_quote = False
        self.expansion = False
        self.tilde = False
        self.brace_depth = 0
        self.brace_list = False

    def add(self, s: str, quoted: bool) -> None:
        for ch in s:
            self.chars.append(ch)
            self.quoted.append(quoted)

    @property
    def text(self) -> str:
        return "".join(self.chars)

    def assignment(self) -> tuple[str, str] | None:
        for k, ch in enumerate(self.chars):
            if ch == "=" and not self.quoted[k]:
                if k == 0 or any(self.quoted[:k]):
                    return None
                name = "".join(self.chars[:k])
                if not _NAME_RE.match(name):
                    return None
                return name, "".join(self.chars[k + 1:])
        return None


@dataclass
class _Op:
    op: str
    pos: int


@dataclass
class _Redir:
    op: str
    pos: int


class _Lexer:
    def __init__(self, text: str) -> None:
        self.text = text
        self.n = len(text)
        self.tokens: list[_Word | _Op | _Redir] = []
        self.word: _Word | None = None

    def fail(self, reason: FailureReason, pos: int, detail: str) -> None:
        raise _Fail(reason, pos, detail)

    def unsupported(self, pos: int, detail: str) -> None:
        self.fail(FailureReason.UNSUPPORTED_CONSTRUCT, pos, detail)

    def finish(self) -> None:
        if self.word is not None:
            self.tokens.append(self.word)
            self.word = None

    def run(self) -> list[_Word | _Op | _Redir]:
        text, i = self.text, 0
        while i < self.n:
            c = text[i]
            if c in " \t":
                self.finish()
                i += 1
            elif c == "\n":
                self.finish()
                self.tokens.append(_Op("\n", i))
                i += 1
            elif c in "\r\v\f\x00":
                self.unsupported(i, f"control character {c!r} outside quotes")
            elif c in ";&|":
                i = self.operator(i)
            elif c in "<>":
                i = self.redirection(i)
            elif c in "()":
                self.unsupported(i, "subshell or grouping parentheses")
            elif c == "#" and self.word is None:
                self.unsupported(i, "comment")
            else:
                if self.word is None:
                    self.word = _Word(i)
                i = self.word_char(i)
        self.finish()
        return self.tokens

    def operator(self, i: int) -> int:
        self.finish()
        two = self.text[i:i + 2]
        if two in ("&&", "||"):
            op = two
        elif two in (";;", ";&", "|&", "&>"):
            self.unsupported(i, f"operator {two!r}")
        else:
            op = self.text[i]
        self.tokens.append(_Op(op, i))
        return i + len(op)

    def redirection(self, i: int) -> int:
        text = self.text
        io_number = ""
        w = self.word
        if w is not None and w.text.isdigit() and not w.any_quote and w.text.isascii():
            io_number = w.text
            self.word = None
        else:
            self.finish()
        if text.startswith("(", i + 1):
            self.fail(FailureReason.PROCESS_SUBSTITUTION, i, f"process substitution {text[i:i + 2]!r}")
        if text.startswith("<<", i):
            self.unsupported(i, "here-document or here-string")
        for op in _REDIRECT_OPS:
            if text.startswith(op, i):
                self.tokens.append(_Redir(io_number + op, i))
                return i + len(op)
        raise AssertionError("unreachable")  # pragma: no cover

    def word_char(self, i: int) -> int:
        text, w = self.text, self.word
        assert w is not None
        c = text[i]
        if c == "'":
            j = text.find("'", i + 1)
            if j < 0:
                self.fail(FailureReason.UNBALANCED_QUOTE, i, "unterminated single quote")
            w.any_quote = True
            w.add(text[i + 1:j], True)
            return j + 1
        if c == '"':
            return self.double_quoted(i)
        if c == "\\":
            if i + 1 >= self.n:
                self.unsupported(i, "trailing backslash")
            w.any_quote = True
            w.add(text[i + 1], True)
            return i + 2
        if c == "`":
            self.fail(FailureReason.COMMAND_SUBSTITUTION, i, "backtick substitution")
        if c == "$":
            return self.dollar(i, in_dq=False)
        if c in "*?[":
            w.expansion = True
        elif c == "~" and not w.chars:
            w.tilde = True
            w.expansion = True
        elif c == "{":
            w.brace_depth += 1
        elif c == "," and w.brace_depth:
            w.brace_list = True
        elif c == "." and w.brace_depth and text.startswith("..", i):
            w.brace_list = True
        elif c == "}" and w.brace_depth:
            if w.brace_list:
                self.unsupported(w.start, "brace expansion")
            w.brace_depth -= 1
        w.add(c, False)
        return i + 1

    def double_quoted(self, i: int) -> int:
        text, w = self.text, self.word
        assert w is not None
        w.any_quote = True
        j = i + 1
        while True:
            if j >= self.n:
                self.fail(FailureReason.UNBALANCED_QUOTE, i, "unterminated double quote")
            c = text[j]
            if c == '"':
                return j + 1
            if c == "\\":
                nxt = text[j + 1] if j + 1 < self.n else ""
                if nxt in DOUBLE_QUOTE_ESCAPES and nxt:
                    w.add(nxt, True)
                    j += 2
                else:
                    w.add("\\", True)
                    j += 1
            elif c == "`":
                self.fail(FailureReason.COMMAND_SUBSTITUTION, j, "backtick substitution")
            elif c == "$":
                j = self.dollar(j, in_dq=True)
            else:
                w.add(c, True)
                j += 1

    def dollar(self, i: int, in_dq: bool) -> int:
        text, w = self.text, self.word
        assert w is not None
        nxt = text[i + 1] if i + 1 < self.n else ""
        if text.startswith("$((", i):
            self.unsupported(i, "arithmetic expansion")
        if nxt == "(":
            self.fail(FailureReason.COMMAND_SUBSTITUTION, i, "$( ) substitution")
        if nxt == "{":
            j = i + 2
            while j < self.n and text[j] != "}":
                if text.startswith("$(", j) or text[j] == "`":
                    self.fail(FailureReason.COMMAND_SUBSTITUTION, j, "substitution inside ${...}")
                if text[j] in "'\"$\\\n":
                    self.unsupported(j, "nested quoting or expansion inside ${...}")
                j += 1
            if j >= self.n:
                self.unsupported(i, "unterminated ${")
            w.add(text[i:j + 1], in_dq)
            w.expansion = True
            return j + 1
        if nxt and _NAME_START.match(nxt):
            j = i + 1
            while j < self.n and _NAME_CHAR.match(text[j]):
                j += 1
            w.add(text[i:j], in_dq)
            w.expansion = True
            return j
        if nxt and nxt in _SPECIAL_PARAMS:
            w.add(text[i:i + 2], in_dq)
            w.expansion = True
            return i + 2
        if not in_dq and nxt in ("'", '"'):
            self.unsupported(i, "ANSI-C or locale quoting")
        w.add("$", in_dq)
        return i + 1


def _assemble(tokens: list[_Word | _Op | _Redir], policy: AnalysisPolicy) -> Chain:
    commands: list[SimpleCommand] = []
    connectors: list[str] = []
    words: list[_Word] = []
    redirs: list[tuple[str, str]] = []
    pending: _Redir | None = None
    last_pos = 0

    for tok in tokens:
        if isinstance(tok, _Word):
            last_pos = tok.start
            if pending is not None:
                redirs.append((pending.op, tok.text))
                pending = None
            else:
                words.append(tok)
            continue
        last_pos = tok.pos
        if pending is not None:
            raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, pending.pos, "redirection without target")
        if isinstance(tok, _Redir):
            pending = tok
            continue
        if not words and not redirs:
            if tok.op == "\n":
                continue
            raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, tok.pos, f"empty command before {tok.op!r}")
        commands.append(_simple_command(words, redirs, policy, tok.pos))
        connectors.append(tok.op)
        words, redirs = [], []

    if pending is not None:
        raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, pending.pos, "redirection without target")
    if words or redirs:
        commands.append(_simple_command(words, redirs, policy, last_pos))
    elif connectors:
        if connectors[-1] in (";", "&", "\n"):
            connectors.pop()
        else:
            raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, last_pos, f"dangling {connectors[-1]!r}")
    if not commands:
        raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, 0, "no command")
    return Chain(tuple(commands), tuple(connectors))


def _simple_command(
    words: list[_Word], redirs: list[tuple[str, str]], policy: AnalysisPolicy, pos: int
) -> SimpleCommand:
    env: list[tuple[str, str]] = []
    k = 0
    while k < len(words):
        pair = words[k].assignment()
        if pair is None:
            break
        if pair[0] in policy.dangerous_env_vars:
            raise _Fail(
                FailureReason.DANGEROUS_ENV_ASSIGNMENT, words[k].start, f"assignment to {pair[0]}"
            )
        env.append(pair)
        k += 1
    argv_words = words[k:]
    if not argv_words:
        raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, words[0].start if words else pos,
                    "assignment or redirection without a command")
    head = argv_words[0]
    if not head.any_quote and head.text in _RESERVED_WORDS:
        raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, head.start, f"reserved word {head.text!r}")
    if head.tilde:
        raise _Fail(FailureReason.UNSUPPORTED_CONSTRUCT, head.start, "tilde prefix in command name")
    return SimpleCommand(
        argv=tuple(w.text for w in argv_words),
        env_assignments=tuple(env),
        redirections=tuple(redirs),
        expansions=frozenset(i for i, w in enumerate(argv_words) if w.expansion),
    )
