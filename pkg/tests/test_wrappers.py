from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentguard.shell import SimpleCommand, analyze
from agentguard.wrappers import (
    BLOCKED_NO_APPLET,
    BLOCKED_NO_COMMAND,
    BLOCKED_NON_SHELL_APPLET,
    Blocked,
    NotWrapper,
    Unwrapped,
    is_multiplexer_identity,
    resolve_invocation,
    unwrap_known_wrappers,
    unwrap_shell_multiplexer,
)


def cmd(text: str) -> SimpleCommand:
    return analyze(text).commands[0]


class TestKnownWrappers:
    def test_env_nice_chain(self):
        result = unwrap_known_wrappers(cmd("env FOO=1 nice -n 5 sort file"))
        assert isinstance(result, Unwrapped)
        assert result.inner.argv == ("sort", "file")
        assert result.wrapper_chain == ("env", "nice")
        assert ("FOO", "1") in result.inner.env_assignments

    def test_not_wrapper(self):
        assert isinstance(unwrap_known_wrappers(cmd("sort file")), NotWrapper)

    def test_bare_nohup_blocked(self):
        assert unwrap_known_wrappers(cmd("nohup")) == Blocked(BLOCKED_NO_COMMAND)

    def test_env_with_only_assignments_blocked(self):
        assert unwrap_known_wrappers(cmd("env A=1 B=2")) == Blocked(BLOCKED_NO_COMMAND)

    def test_absolute_path_same_as_basename(self):
        a = unwrap_known_wrappers(cmd("/usr/bin/env -i nohup ls -l"))
        b = unwrap_known_wrappers(cmd("env -i nohup ls -l"))
        assert a.inner == b.inner and a.wrapper_chain == b.wrapper_chain

    @pytest.mark.parametrize("text", ["env -u NAME ls", "env -- ls", "env - ls", "nice -- ls", "nohup -- ls",
                                      "nice -n -5 ls", "env --ignore-environment ls"])
    def test_accepted_option_forms(self, text):
        result = unwrap_known_wrappers(cmd(text))
        assert isinstance(result, Unwrapped) and result.inner.argv == ("ls",)

    @pytest.mark.parametrize("text", ["env -S 'ls -l'", "env --chdir=/ ls", "nice -19 ls", "nice --adjustment=1 ls",
                                      "nohup --help", "env -u", "nice -n"])
    def test_unrecognised_options_block(self, text):
        assert isinstance(unwrap_known_wrappers(cmd(text)), Blocked)

    def test_expansion_in_wrapper_args_blocks(self):
        assert isinstance(unwrap_known_wrappers(cmd("nice -n $N ls")), Blocked)


class TestMultiplexer:
    def test_shell_applet_unwrapped(self):
        result = unwrap_shell_multiplexer(cmd("busybox sh -c 'whoami'"))
        assert isinstance(result, Unwrapped)
        assert result.inner.argv == ("sh", "-c", "whoami")
        assert result.wrapper_chain == ("busybox",)

    def test_non_shell_applet_blocked(self):
        assert unwrap_shell_multiplexer(cmd("busybox ls")) == Blocked(BLOCKED_NON_SHELL_APPLET)

    def test_missing_applet(self):
        assert unwrap_shell_multiplexer(cmd("toybox")) == Blocked(BLOCKED_NO_APPLET)

    def test_not_a_multiplexer(self):
        assert isinstance(unwrap_shell_multiplexer(cmd("grep -r foo .")), NotWrapper)

    def test_custom_applet_set(self):
        assert isinstance(unwrap_shell_multiplexer(cmd("toybox sh"), frozenset({"ash"})), Blocked)
        assert isinstance(unwrap_shell_multiplexer(cmd("toybox ash"), frozenset({"ash"})), Unwrapped)


class TestResolveInvocation:
    def test_wrapper_then_multiplexer(self):
        result = resolve_invocation(cmd("env nohup busybox sh -c ls"))
        assert isinstance(result, Unwrapped)
        assert result.wrapper_chain == ("env", "nohup", "busybox")

    def test_multiplexer_then_blocked_applet(self):
        assert isinstance(resolve_invocation(cmd("nice busybox wget x")), Blocked)

    def test_depth_limit(self):
        text = " ".join(["nohup"] * 20) + " ls"
        assert isinstance(resolve_invocation(cmd(text), max_depth=8), Blocked)
        assert isinstance(resolve_invocation(cmd(" ".join(["nohup"] * 3) + " ls")), Unwrapped)

    @given(st.lists(st.sampled_from(["env", "nice", "nohup", "env -i", "nice -n 3"]), max_size=6),
           st.sampled_from(["ls", "sort x", "busybox sh", "busybox ls"]))
    def test_never_yields_multiplexer_inner_and_chain_ordered(self, wrappers, tail):
        text = " ".join(wrappers + [tail])
        result = resolve_invocation(cmd(text))
        if isinstance(result, Unwrapped):
            assert not is_multiplexer_identity(result.inner.argv[0])
            assert len(result.wrapper_chain) >= 1
            again = resolve_invocation(result.inner)
            assert isinstance(again, NotWrapper)


@pytest.mark.parametrize("identity, expected", [
    ("/bin/busybox", True), ("toybox", True), ("/usr/bin/sort", False), ("/opt/busybox/sh", False),
])
def test_multiplexer_identity(identity, expected):
    assert is_multiplexer_identity(identity) is expected
