from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentguard.errors import UsageError
from agentguard.shell import (
    AnalysisFailure,
    AnalysisPolicy,
    Chain,
    FailureReason,
    SimpleCommand,
    analyze,
    has_shell_line_continuation,
)

EXPLOIT = 'echo "ok $\\\n(id -u)"'


def argvs(analysis):
    assert isinstance(analysis, Chain), analysis
    return [list(c.argv) for c in analysis.commands]


def reason(text, policy=None):
    result = analyze(text, policy)
    assert isinstance(result, AnalysisFailure), result
    return result.reason


class TestLineContinuation:
    def test_exploit_string(self):
        assert has_shell_line_continuation(EXPLOIT)

    def test_plain(self):
        assert not has_shell_line_continuation("echo hello")

    def test_inside_single_quotes_still_counts(self):
        assert has_shell_line_continuation("echo 'a\\\nb'")

    def test_cr_only(self):
        assert has_shell_line_continuation("echo a\\\rb")

    def test_escaped_backslash_then_newline_is_flagged_anyway(self):
        # context-free by design: the byte pair is present
        assert has_shell_line_continuation("echo a\\\\\nb")

    @given(st.text(alphabet="ab \\\n\r'\"$("))
    def test_matches_byte_scan(self, text):
        data = text.encode()
        expected = any(data[i] == 0x5C and data[i + 1] in (0x0A, 0x0D) for i in range(len(data) - 1))
        assert has_shell_line_continuation(text) is expected


class TestAnalyze:
    def test_simple(self):
        assert argvs(analyze("sort -u file.txt")) == [["sort", "-u", "file.txt"]]

    def test_exploit_is_line_continuation(self):
        result = analyze(EXPLOIT)
        assert result.reason is FailureReason.LINE_CONTINUATION
        assert result.location == EXPLOIT.encode().index(b"\\\n")

    def test_and_chain(self):
        result = analyze("ls && whoami")
        assert argvs(result) == [["ls"], ["whoami"]]
        assert result.connectors == ("&&",)

    def test_single_quotes_suppress_substitution(self):
        assert argvs(analyze("echo '$(id)'")) == [["echo", "$(id)"]]

    @pytest.mark.parametrize("text, connectors", [
        ("a; b", (";",)),
        ("a || b | c", ("||", "|")),
        ("a & b", ("&",)),
        ("a\nb", ("\n",)),
        ("a;b&&c", (";", "&&")),
    ])
    def test_connectors(self, text, connectors):
        assert analyze(text).connectors == connectors

    def test_trailing_separator_dropped(self):
        assert argvs(analyze("ls;")) == [["ls"]]
        assert argvs(analyze("ls &")) == [["ls"]]

    @pytest.mark.parametrize("text, expected", [
        ('echo "a\\"b"', ["echo", 'a"b']),
        ('echo "a\\$b"', ["echo", "a$b"]),
        ('echo "a\\`b"', ["echo", "a`b"]),
        ('echo "a\\\\b"', ["echo", "a\\b"]),
        ('echo "a\\nb"', ["echo", "a\\nb"]),
        ("echo 'a\\nb'", ["echo", "a\\nb"]),
        ("echo a\\ b", ["echo", "a b"]),
        ("echo a'b'\"c\"", ["echo", "abc"]),
        ('echo ""', ["echo", ""]),
    ])
    def test_quote_removal(self, text, expected):
        assert argvs(analyze(text)) == [expected]

    @pytest.mark.parametrize("text, why", [
        ("echo $(id)", FailureReason.COMMAND_SUBSTITUTION),
        ('echo "$(id)"', FailureReason.COMMAND_SUBSTITUTION),
        ("echo `id`", FailureReason.COMMAND_SUBSTITUTION),
        ("diff <(a) b", FailureReason.PROCESS_SUBSTITUTION),
        ("tee >(a)", FailureReason.PROCESS_SUBSTITUTION),
        ('echo "abc', FailureReason.UNBALANCED_QUOTE),
        ("echo 'abc", FailureReason.UNBALANCED_QUOTE),
        ("LD_PRELOAD=/x.so ls", FailureReason.DANGEROUS_ENV_ASSIGNMENT),
        ("PATH=/tmp ls", FailureReason.DANGEROUS_ENV_ASSIGNMENT),
        ("IFS=, ls", FailureReason.DANGEROUS_ENV_ASSIGNMENT),
        ("cat <<EOF", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("echo $((1+2))", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("echo {a,b}", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("echo x{1..3}", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("~/bin/tool", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("if true; then ls; fi", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("(ls)", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("ls # comment", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("ls &&", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("ls |& cat", FailureReason.UNSUPPORTED_CONSTRUCT),
        ("FOO=1", FailureReason.UNSUPPORTED_CONSTRUCT),
    ])
    def test_failures(self, text, why):
        assert reason(text) is why

    def test_dangerous_set_is_configurable(self):
        policy = AnalysisPolicy(frozenset({"FOO"}))
        assert reason("FOO=1 ls", policy) is FailureReason.DANGEROUS_ENV_ASSIGNMENT
        assert argvs(analyze("LD_PRELOAD=x ls", policy)) == [["ls"]]

    def test_env_and_redirections_recorded(self):
        cmd = analyze("A=1 B='x y' sort -u f > out 2>>err").commands[0]
        assert cmd.env_assignments == (("A", "1"), ("B", "x y"))
        assert cmd.redirections == ((">", "out"), ("2>>", "err"))
        assert cmd.argv == ("sort", "-u", "f")

    def test_parameter_expansion_is_marked(self):
        cmd = analyze('echo "$HOME" ${X} plain *.txt').commands[0]
        assert cmd.argv == ("echo", "$HOME", "${X}", "plain", "*.txt")
        assert cmd.expansions == {1, 2, 4}

    def test_line_continuation_wins_over_everything(self):
        assert reason("echo $(id) \\\n x") is FailureReason.LINE_CONTINUATION

    @pytest.mark.parametrize("text", ["", "   ", "\t\n"])
    def test_empty_is_usage_error(self, text):
        with pytest.raises(UsageError):
            analyze(text)


TOKENS = list("ab $`()'\"\\;&|<>\n{},.~#=*") + ["$(", "<(", "LD_PRELOAD="]


@settings(max_examples=400)
@given(st.lists(st.sampled_from(TOKENS), min_size=1, max_size=25).map("".join).filter(str.strip))
def test_total_and_never_leaks_substitution(text):
    result = analyze(text)
    assert isinstance(result, (Chain, AnalysisFailure))
    if has_shell_line_continuation(text):
        assert result.reason is FailureReason.LINE_CONTINUATION
    if isinstance(result, Chain):
        assert len(result.connectors) == len(result.commands) - 1
        if "'" not in text and "\\" not in text:
            # without quoting or escaping, a substitution opener cannot survive as text
            for c in result.commands:
                assert all("$(" not in w and "`" not in w for w in c.argv)


@given(st.text(alphabet='ab "', min_size=1, max_size=20).filter(lambda t: t.count('"') % 2 == 1))
def test_odd_double_quotes_never_chain(text):
    result = analyze("x " + text)
    assert isinstance(result, AnalysisFailure)
    assert result.reason is FailureReason.UNBALANCED_QUOTE


class TestSimpleCommand:
    def test_tail_reindexes_expansions(self):
        cmd = SimpleCommand(("env", "sh", "$X"), expansions=frozenset({2}))
        assert cmd.tail(1).expansions == {1}
        assert cmd.tail(1).argv == ("sh", "$X")

    def test_empty_argv_rejected(self):
        with pytest.raises(ValueError):
            SimpleCommand(())

    def test_chain_connector_count(self):
        with pytest.raises(ValueError):
            Chain((SimpleCommand(("a",)),), (";",))
